import numpy as np

from frequnet.harness.optim import EMA, Adam, PlateauSchedule
from frequnet.harness.phantom import normalize
from frequnet.harness.training import load_splits
from frequnet.network import forward, init_params, supervised_loss
from frequnet.params import ModelParams
from frequnet.tensor_core import Tape, parameter
from frequnet.wavelet import WaveletSpec


def test_schedule_halves_at_patience_boundaries():
    schedule = PlateauSchedule(lr=1e-3, lr_min=1e-6, patience=3)
    lrs = [schedule.step(1.0) for _ in range(10)]
    assert lrs == [1e-3, 1e-3, 1e-3, 5e-4, 5e-4, 5e-4, 2.5e-4, 2.5e-4, 2.5e-4, 1.25e-4]


def test_schedule_never_drops_below_floor():
    schedule = PlateauSchedule(lr=4e-6, lr_min=1e-6, patience=1)
    lrs = [schedule.step(1.0) for _ in range(6)]
    assert lrs[0] == 4e-6
    assert min(lrs) == 1e-6
    assert lrs[-3:] == [1e-6, 1e-6, 1e-6]


def test_schedule_resets_on_improvement():
    schedule = PlateauSchedule(lr=1.0, patience=2, min_delta=1e-4)
    assert [schedule.step(v) for v in (1.0, 1.0, 0.5, 0.5, 0.49995, 0.5)] == [1.0, 1.0, 1.0, 1.0, 0.5, 0.5]


def test_ema():
    ema = EMA(0.95)
    assert ema.update(2.0) == 2.0
    assert abs(ema.update(4.0) - 2.1) < 1e-12


def test_adam_first_step_moves_by_lr():
    params = ModelParams({'w': parameter([1.0, -1.0, 0.5]), 'frozen': parameter([3.0])})
    with Tape() as tape:
        loss = (params['w'] * params['w']).sum()
    grads = tape.backward(output=loss)
    updated = Adam(lr=0.1).step(params, grads)
    assert np.abs(updated['w'].data - np.array([0.9, -0.9, 0.4])).max() < 1e-6
    assert updated['frozen'] is params['frozen']


def test_one_step_changes_every_parameter_with_gradient(tiny_cfg):
    train, _ = normalize(*load_splits(tiny_cfg))
    params = init_params(tiny_cfg)
    spec = WaveletSpec.daubechies(tiny_cfg.arch.wavelet_order)
    with Tape() as tape:
        logits, aux = forward(train.tensor(), params, tiny_cfg)
        loss = supervised_loss(logits, aux, train.labels, tiny_cfg.effective_loss(), spec)
    grads = tape.backward(output=loss.loss)
    updated = Adam(lr=tiny_cfg.optim.lr).step(params, grads)
    moved = 0
    for name, tensor in params.items():
        if tensor in grads and np.any(grads.array(tensor) != 0.0):
            changed = updated[name].data != tensor.data
            assert np.all(changed[grads.array(tensor) != 0.0]), name
            moved += 1
    assert moved
