import numpy as np
import pytest

from frequnet.encoder import conv_block, downsample, encode_stage, init_conv_block, init_encode_stage
from frequnet.errors import DimensionError
from frequnet.params import ModelParams, ParamBuilder
from frequnet.run_config import ArchConfig, Switches
from frequnet.spectral import lowpass_filter
from frequnet.tensor_core import Tensor, avg_pool2, conv1x1


def stage_params(channels, switches, seed=0):
    builder = ParamBuilder(seed)
    init_encode_stage(builder, 'enc', channels, switches)
    return builder.build().scope('enc')


def test_conv_block_preserves_spatial_dims(rng):
    builder = ParamBuilder(0)
    init_conv_block(builder, 'b', 2, 5)
    out = conv_block(Tensor(rng.standard_normal((1, 2, 6, 6))), builder.build().scope('b'))
    assert out.shape == (1, 5, 6, 6)


def test_conv_block_zero_weights(rng):
    builder = ParamBuilder(0)
    init_conv_block(builder, 'b', 2, 3)
    params = builder.build()
    zeroed = params.replace({name: np.zeros(t.shape) for name, t in params.items()})
    out = conv_block(Tensor(rng.standard_normal((1, 2, 4, 4))), zeroed.scope('b'))
    assert np.array_equal(out.data, np.zeros((1, 3, 4, 4)))


def test_conv_block_channel_mismatch(rng):
    builder = ParamBuilder(0)
    init_conv_block(builder, 'b', 2, 3)
    with pytest.raises(DimensionError):
        conv_block(Tensor(rng.standard_normal((1, 4, 4, 4))), builder.build().scope('b'))


def test_encode_stage_shape_law(rng):
    switches = Switches()
    out = encode_stage(Tensor(rng.standard_normal((1, 8, 16, 16))), stage_params(8, switches), ArchConfig(),
                       switches)
    assert out.skip.shape == (1, 8, 16, 16)
    assert out.carry.shape == (1, 16, 8, 8)


def test_encode_stage_shape_law_for_every_switch_combination(rng):
    x = Tensor(rng.standard_normal((1, 4, 8, 8)))
    for flc in (True, False):
        for db_down in (True, False):
            switches = Switches(flc=flc, db_down=db_down)
            out = encode_stage(x, stage_params(4, switches), ArchConfig(wavelet_order=2), switches)
            assert out.carry.shape == (1, 8, 4, 4)


def test_encode_stage_odd_dims(rng):
    switches = Switches()
    with pytest.raises(DimensionError):
        encode_stage(Tensor(rng.standard_normal((1, 4, 7, 8))), stage_params(4, switches), ArchConfig(), switches)


def test_pooled_downsample_keeps_constants():
    switches = Switches().all_off()
    carry = downsample(Tensor(np.full((1, 4, 8, 8), 1.5)), stage_params(4, switches).scope('down'),
                       ArchConfig(), switches)
    assert carry.shape == (1, 8, 4, 4)
    for c in range(8):
        assert np.abs(carry.data[0, c] - carry.data[0, c, 0, 0]).max() < 1e-12


def test_downsample_without_flc_uses_plain_subbands(rng):
    switches = Switches(flc=False)
    params = stage_params(2, switches)
    skip = Tensor(rng.standard_normal((1, 2, 8, 8)))
    arch = ArchConfig(wavelet_order=1)
    carry = downsample(skip, params.scope('down'), arch, switches)
    # Haar LL of each 2x2 block is twice its mean; only LL feeds this check
    weight = np.zeros((4, 8))
    weight[:, 0] = 1.0
    ll_params = params.params.replace({'enc.down.weight': weight, 'enc.down.bias': np.zeros(4)})
    ll = downsample(skip, ll_params.scope('enc').scope('down'), arch, switches).data[0, 0]
    blocks = skip.data[0, 0].reshape(4, 2, 4, 2).mean(axis=(1, 3))
    assert carry.shape == (1, 4, 4, 4)
    assert np.abs(ll - 2.0 * blocks).max() < 1e-12


def test_stage_params_follow_switches():
    with_db = ModelParams(dict(stage_params(4, Switches()).params))
    without_db = ModelParams(dict(stage_params(4, Switches(db_down=False)).params))
    assert with_db['enc.down.weight'].shape == (8, 16)
    assert without_db['enc.down.weight'].shape == (8, 4)


def test_pooled_downsample_ignores_flc_by_default(rng):
    switches = Switches(flc=True, db_down=False)
    down = stage_params(2, switches).scope('down')
    skip = Tensor(rng.standard_normal((1, 2, 8, 8)))
    carry = downsample(skip, down, ArchConfig(), switches)
    expected = conv1x1(avg_pool2(skip), down['weight'], down['bias'])
    assert np.array_equal(carry.data, expected.data)


def test_pooled_downsample_with_lowpass_option(rng):
    switches = Switches(flc=True, db_down=False)
    down = stage_params(2, switches).scope('down')
    skip = Tensor(rng.standard_normal((1, 2, 8, 8)))
    arch = ArchConfig(lowpass_pool=True)
    carry = downsample(skip, down, arch, switches)
    expected = conv1x1(avg_pool2(lowpass_filter(skip, arch.tau)), down['weight'], down['bias'])
    assert np.abs(carry.data - expected.data).max() < 1e-12
    plain = downsample(skip, down, ArchConfig(), switches)
    assert np.abs(carry.data - plain.data).max() > 1e-6


def test_skip_is_identical_with_flc_on_and_off(rng):
    x = Tensor(rng.standard_normal((1, 4, 8, 8)))
    params = stage_params(4, Switches())
    on = encode_stage(x, params, ArchConfig(wavelet_order=2), Switches(flc=True))
    off = encode_stage(x, params, ArchConfig(wavelet_order=2), Switches(flc=False))
    assert on.skip.data.tobytes() == off.skip.data.tobytes()
    assert not np.array_equal(on.carry.data, off.carry.data)
