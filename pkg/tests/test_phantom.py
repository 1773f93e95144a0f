import numpy as np
import pytest

from frequnet.errors import ConfigError
from frequnet.harness.phantom import (AUDIT_MIN_HIGH_ENERGY, AUDIT_TAU, Band, ClassSpec, PhantomSpec, SampleBatch,
                                      ShapeFamily, generate_dataset, generate_phantom, load_dataset, make_splits,
                                      normalize, save_dataset)
from frequnet.spectral import band_energy_outside


def test_noise_free_support_equals_label_support():
    spec = PhantomSpec(size=32, classes=(ClassSpec(0.2),), noise=0.0, seed=5)
    sample = generate_phantom(spec, 0)
    assert sample.num_classes == 2
    assert np.array_equal(sample.images[0, 0] != 0.0, sample.labels[0] == 1)


def test_same_seed_and_index_give_identical_bytes():
    spec = PhantomSpec(size=32, seed=9)
    a, b = generate_phantom(spec, 4), generate_phantom(spec, 4)
    assert a.images.tobytes() == b.images.tobytes()
    assert a.labels.tobytes() == b.labels.tobytes()
    assert generate_phantom(spec, 5).images.tobytes() != a.images.tobytes()


def test_minority_texture_is_high_band():
    spec = PhantomSpec(size=64, noise=0.0, seed=2)
    for index in range(3):
        sample = generate_phantom(spec, index)
        minority = sample.images[0, 0] * (sample.labels[0] == 2)
        assert (sample.labels[0] == 2).any()
        assert band_energy_outside(minority, AUDIT_TAU) >= AUDIT_MIN_HIGH_ENERGY


def test_default_classes_are_imbalanced():
    labels = generate_dataset(PhantomSpec(size=64, seed=1), 4).labels
    counts = np.bincount(labels.ravel(), minlength=3)
    assert counts[2] < counts[1] / 4


def test_infeasible_area_fractions():
    with pytest.raises(ConfigError):
        generate_phantom(PhantomSpec(classes=(ClassSpec(0.5), ClassSpec(0.5))), 0)
    with pytest.raises(ConfigError):
        PhantomSpec(classes=(ClassSpec(0.9),)).validate()
    with pytest.raises(ConfigError):
        PhantomSpec(classes=(ClassSpec(0.001),)).validate()


def test_threaded_generation_matches_serial():
    spec = PhantomSpec(size=16, classes=(ClassSpec(0.25), ClassSpec(0.06, Band.HIGH, ShapeFamily.TEXTURED_BLOB)))
    serial = generate_dataset(spec, 4, start=2)
    threaded = generate_dataset(spec, 4, start=2, threads=3)
    assert serial.images.tobytes() == threaded.images.tobytes()
    assert np.array_equal(serial.labels, threaded.labels)


def test_splits_use_disjoint_indices():
    spec = PhantomSpec(size=16, classes=(ClassSpec(0.25),))
    train, val = make_splits(spec, 3, 2)
    assert len(train) == 3 and len(val) == 2
    assert np.array_equal(val.images[0], generate_phantom(spec, 3).images[0])


def test_normalize_constant_dataset():
    batch = SampleBatch(np.full((2, 1, 4, 4), 3.0), np.zeros((2, 4, 4), dtype=int), 2)
    (out,) = normalize(batch)
    assert np.array_equal(out.images, np.zeros((2, 1, 4, 4)))


def test_normalize_uses_train_statistics(rng):
    train = SampleBatch(rng.normal(2.0, 3.0, size=(4, 1, 8, 8)), np.zeros((4, 8, 8), dtype=int), 2)
    val = SampleBatch(rng.normal(-1.0, 0.5, size=(2, 1, 8, 8)), np.zeros((2, 8, 8), dtype=int), 2)
    norm_train, norm_val = normalize(train, val)
    assert abs(norm_train.images.mean()) < 1e-10
    assert abs(norm_train.images.std() - 1.0) < 1e-6
    expected = (val.images - train.images.mean()) / train.images.std()
    assert np.abs(norm_val.images - expected).max() < 1e-12
    assert abs(norm_val.images.mean()) > 0.1


def test_batches_in_index_order():
    batch = SampleBatch(np.arange(5.0).reshape(5, 1, 1, 1), np.zeros((5, 1, 1), dtype=int), 2)
    sizes = [len(b) for b in batch.batches(2)]
    assert sizes == [2, 2, 1]
    assert [b.images[0, 0, 0, 0] for b in batch.batches(2)] == [0.0, 2.0, 4.0]


def test_dataset_cache_round_trip(tmp_path):
    spec = PhantomSpec(size=16, classes=(ClassSpec(0.25), ClassSpec(0.06, Band.HIGH, ShapeFamily.TEXTURED_BLOB)))
    train, val = make_splits(spec, 2, 1)
    path = str(tmp_path / 'data.fquf')
    save_dataset(path, train, val)
    loaded_train, loaded_val = load_dataset(path, expected_classes=3)
    assert loaded_train.images.tobytes() == train.images.tobytes()
    assert np.array_equal(loaded_val.labels, val.labels)
    with pytest.raises(ConfigError):
        load_dataset(path, expected_classes=4)


def test_largest_shapes_stay_on_the_canvas():
    for shape in ShapeFamily:
        spec = PhantomSpec(size=16, classes=(ClassSpec(0.5, Band.LOW, shape),), noise=0.0, seed=2)
        target = 0.5 * 16 * 16
        for index in range(6):
            labels = generate_phantom(spec, index).labels[0]
            assert (labels == 1).sum() >= 0.85 * target, (shape, index)
