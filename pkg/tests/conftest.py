import numpy as np
import pytest

from config import config
from frequnet.harness.training import TrainResult
from frequnet.metrics import hard_dice
from frequnet.run_config import resolve


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_cfg():
    """Depth-2, width-4 network on 16x16 phantoms, one epoch over two images."""
    return resolve(config['testing'].settings())


@pytest.fixture
def runs_dir(tmp_path):
    path = tmp_path / 'runs'
    path.mkdir()
    return str(path)


@pytest.fixture
def fake_train():
    """Factory for a stand-in of training whose validation Dice depends only on the switches.

    Class 2 is predicted perfectly when `scores(switches)` holds and missed otherwise.
    """
    def factory(scores):
        def run(cfg, out, threads=1, cache=None, splits=None):
            labels = np.zeros((1, 4, 4), dtype=int)
            labels[0, :2] = 1
            labels[0, 3, 3] = 2
            pred = labels.copy()
            if not scores(cfg.switches):
                pred[0, 3, 3] = 1
            return TrainResult(params=None, run_dir=out, records=[], val_report=hard_dice(pred, labels, 3))
        return run
    return factory
