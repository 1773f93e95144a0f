from dataclasses import replace

import numpy as np
import pytest

from frequnet import sld
from frequnet.errors import CheckpointError, ConfigError
from frequnet.losses import LossWeights, total_loss
from frequnet.network import (count_reached_parameters, downsample_labels, forward, init_params, parameter_count,
                              predict, supervised_loss)
from frequnet.params import ModelParams
from frequnet.run_config import ArchConfig, RunConfig, Switches
from frequnet.sld import grid_sample
from frequnet.tensor_core import Tensor, conv1x1, pixel_shuffle
from frequnet.wavelet import WaveletSpec


def small_cfg(**switches):
    return RunConfig(arch=ArchConfig(depth=2, base_width=4), switches=Switches(**switches))


def test_forward_shape_law_depth_four(rng):
    cfg = RunConfig()
    logits, aux = forward(Tensor(rng.standard_normal((1, 1, 64, 64))), init_params(cfg), cfg)
    assert logits.shape == (1, 3, 64, 64)
    assert [a.shape[2:] for a in aux] == [(8, 8), (16, 16), (32, 32)]


def test_forward_with_every_switch_off(rng):
    cfg = small_cfg().with_switches(Switches().all_off())
    logits, aux = forward(Tensor(rng.standard_normal((2, 1, 16, 16))), init_params(cfg), cfg)
    assert logits.shape == (2, 3, 16, 16)
    assert [a.shape for a in aux] == [(2, 3, 8, 8)]


def test_forward_without_deep_supervision(rng):
    cfg = small_cfg(deep_supervision=False)
    logits, aux = forward(Tensor(rng.standard_normal((1, 1, 8, 8))), init_params(cfg), cfg)
    assert logits.shape == (1, 3, 8, 8)
    assert aux == []


def test_forward_rejects_indivisible_size(rng):
    cfg = small_cfg()
    with pytest.raises(ConfigError) as info:
        forward(Tensor(rng.standard_normal((1, 1, 10, 16))), init_params(cfg), cfg)
    assert '4' in str(info.value)


def test_init_is_deterministic():
    cfg = small_cfg()
    a, b = init_params(cfg, seed=3), init_params(cfg, seed=3)
    assert list(a) == list(b)
    for name in a:
        assert a[name].data.tobytes() == b[name].data.tobytes()
    other = init_params(cfg, seed=4)
    assert any(not np.array_equal(a[n].data, other[n].data) for n in a)


def test_offset_and_fusion_layers_start_at_zero():
    params = init_params(small_cfg())
    decoder_layers = [n for n in params if '.gate.' in n or '.magnitude.' in n or '.fuse.' in n]
    assert decoder_layers
    for name in decoder_layers:
        assert not params[name].data.any()


def test_zero_offsets_match_fixed_grid_baseline(rng, monkeypatch):
    cfg = small_cfg()
    params = init_params(cfg)
    x = Tensor(rng.standard_normal((1, 1, 16, 16)))
    logits, _ = forward(x, params, cfg)

    def fixed_native(inp, scope, ucfg):
        b, _, h, w = inp.shape
        return grid_sample(inp, sld.base_grid(b, ucfg.groups, 2 * h, 2 * w))

    def fixed_exchange(inp, scope, ucfg):
        shuffled = pixel_shuffle(inp, 2)
        b, _, h, w = shuffled.shape
        sampled = grid_sample(shuffled, sld.base_grid(b, ucfg.exchange_groups(inp.shape[1]), h, w))
        return conv1x1(sampled, scope['proj.weight'], scope['proj.bias'])

    monkeypatch.setattr(sld, 'native_space_pathway', fixed_native)
    monkeypatch.setattr(sld, 'space_channel_pathway', fixed_exchange)
    baseline, _ = forward(x, params, cfg)
    assert np.abs(logits.data - baseline.data).max() < 1e-10


def test_checkpoint_round_trip_is_bit_exact(rng, tmp_path):
    cfg = small_cfg()
    params = init_params(cfg, seed=11)
    path = str(tmp_path / 'ckpt.fquf')
    params.save(path)
    loaded = ModelParams.load(path, expected=init_params(cfg))
    x = Tensor(rng.standard_normal((1, 1, 8, 8)))
    assert forward(x, params, cfg)[0].data.tobytes() == forward(x, loaded, cfg)[0].data.tobytes()


def test_checkpoint_for_other_switches_is_rejected(tmp_path):
    path = str(tmp_path / 'ckpt.fquf')
    init_params(small_cfg()).save(path)
    with pytest.raises(CheckpointError):
        ModelParams.load(path, expected=init_params(small_cfg(sld=False)))


def test_parameter_counts_agree():
    for switches in (Switches(), Switches().all_off(), Switches(sld=False), Switches(db_down=False),
                     Switches(deep_supervision=False)):
        cfg = small_cfg().with_switches(switches)
        params = init_params(cfg)
        assert parameter_count(cfg.arch, switches) == params.count()
        assert count_reached_parameters(params, cfg) == params.count()


def test_predict_returns_labels(rng):
    cfg = small_cfg()
    pred = predict(Tensor(rng.standard_normal((2, 1, 8, 8))), init_params(cfg), cfg)
    assert pred.shape == (2, 8, 8)
    assert pred.min() >= 0 and pred.max() < 3


def test_downsample_labels():
    labels = np.arange(16).reshape(1, 4, 4)
    assert downsample_labels(labels, 2).tolist() == [[[0, 2], [8, 10]]]


def test_supervised_loss_without_aux_is_total_loss(rng):
    logits = Tensor(rng.standard_normal((1, 3, 8, 8)))
    labels = rng.integers(0, 3, size=(1, 8, 8))
    spec = WaveletSpec.daubechies(4)
    weights = LossWeights()
    assert supervised_loss(logits, [], labels, weights, spec).total == total_loss(logits, labels, weights, spec).total


def test_supervised_loss_aux_weighting(rng):
    logits = Tensor(rng.standard_normal((1, 3, 8, 8)))
    labels = rng.integers(0, 3, size=(1, 8, 8))
    spec = WaveletSpec.daubechies(2)
    weights = LossWeights(w_freq=0.0)
    single = total_loss(logits, labels, weights, spec).total
    report = supervised_loss(logits, [logits], labels, weights, spec)
    assert abs(report.total - 1.5 * single) < 1e-12
    assert report.aux_terms == (0.5 * single,)


def test_aux_heads_drop_frequency_term(rng):
    logits = Tensor(rng.standard_normal((1, 3, 8, 8)))
    aux = Tensor(rng.standard_normal((1, 3, 4, 4)))
    labels = rng.integers(0, 3, size=(1, 8, 8))
    spec = WaveletSpec.daubechies(2)
    weights = LossWeights()
    report = supervised_loss(logits, [aux], labels, weights, spec)
    aux_only = total_loss(aux, downsample_labels(labels, 2), replace(weights, w_freq=0.0), spec).total
    main = total_loss(logits, labels, weights, spec).total
    assert abs(report.total - (main + 0.5 * aux_only)) < 1e-12


def test_circular_shift_changes_logits_mildly(rng):
    cfg = small_cfg()
    params = init_params(cfg)
    x = rng.standard_normal((1, 1, 16, 16))
    base = np.abs(forward(Tensor(x), params, cfg)[0].data).mean()
    shifted = np.abs(forward(Tensor(np.roll(x, (2, 2), axis=(2, 3))), params, cfg)[0].data).mean()
    assert abs(shifted - base) < 0.1 * base
