import struct

import numpy as np
import pytest

from frequnet.checkpoint import MAGIC, read_container, write_container
from frequnet.errors import CheckpointError


@pytest.fixture
def container(tmp_path, rng):
    path = str(tmp_path / 'c.fquf')
    arrays = {'conv.weight': rng.standard_normal((4, 2, 3, 3)), 'conv.bias': rng.standard_normal(4)}
    labels = {'train.labels': rng.integers(0, 3, size=(2, 8, 8))}
    write_container(path, arrays, labels)
    return path, arrays, labels


def test_round_trip_with_labels(container):
    path, arrays, labels = container
    read_arrays, read_labels = read_container(path)
    assert list(read_arrays) == list(arrays)
    assert read_arrays['conv.bias'].shape == (4,)
    for name in arrays:
        assert read_arrays[name].tobytes() == arrays[name].tobytes()
    assert np.array_equal(read_labels['train.labels'], labels['train.labels'])


def test_header_layout(container):
    path, _, _ = container
    with open(path, 'rb') as fh:
        head = fh.read(12)
    assert head[:4] == MAGIC == b'FQUF'
    assert struct.unpack('<II', head[4:]) == (1, 2)


def test_checkpoint_without_labels(tmp_path):
    path = str(tmp_path / 'p.fquf')
    write_container(path, {'w': np.ones((2, 2))})
    arrays, labels = read_container(path)
    assert labels == {}
    assert arrays['w'].tolist() == [[1.0, 1.0], [1.0, 1.0]]


def test_bad_magic(container):
    path, _, _ = container
    with open(path, 'r+b') as fh:
        fh.write(b'XXXX')
    with pytest.raises(CheckpointError):
        read_container(path)


def test_unsupported_version(container):
    path, _, _ = container
    with open(path, 'r+b') as fh:
        fh.seek(4)
        fh.write(struct.pack('<I', 9))
    with pytest.raises(CheckpointError):
        read_container(path)


def test_truncated_file(container):
    path, _, _ = container
    with open(path, 'rb') as fh:
        data = fh.read()
    for cut in (2, 10, 60, len(data) - 1):
        with open(path, 'wb') as fh:
            fh.write(data[:cut])
        with pytest.raises(CheckpointError):
            read_container(path)


def test_invalid_entries(tmp_path):
    with pytest.raises(CheckpointError):
        write_container(str(tmp_path / 'a.fquf'), {'x': np.zeros((1, 1, 1, 1, 2))})
    with pytest.raises(CheckpointError):
        write_container(str(tmp_path / 'b.fquf'), {}, {'y': np.array([[-1]])})


def test_checkpoint_error_is_an_os_error():
    assert issubclass(CheckpointError, OSError)


def test_scalar_and_single_value_shapes(tmp_path):
    path = str(tmp_path / 's.fquf')
    write_container(path, {'scalar': np.array(2.5), 'single': np.array([2.5]), 'row': np.ones((1, 3))})
    arrays, _ = read_container(path)
    assert arrays['scalar'].shape == ()
    assert arrays['single'].shape == (1,)
    assert arrays['row'].shape == (1, 3)
    assert arrays['scalar'].item() == 2.5


def test_zero_length_dimension_rejected(tmp_path):
    path = tmp_path / 'z.fquf'
    with pytest.raises(CheckpointError) as info:
        write_container(str(path), {'empty': np.zeros((3, 0))})
    assert 'zero-length' in str(info.value)
    with pytest.raises(CheckpointError):
        write_container(str(path), {}, {'labels': np.zeros((0, 4, 4), dtype=int)})
    assert not path.exists()
