"""This module contains the run profiles for frequnet."""
import os

from dotenv import load_dotenv

load_dotenv()

# Run directories are created below this folder unless --out is given
runs_path = os.environ.get('FREQUNET_RUNS') or os.path.abspath(os.path.join(os.path.dirname(__file__), 'runs'))


class Config:
    """Base profile settings."""
    LOG_LEVEL = os.environ.get('FREQUNET_LOG_LEVEL') or 'INFO'
    THREADS = int(os.environ.get('FREQUNET_THREADS') or 1)
    RUNS_DIR = runs_path
    SETTINGS = {}

    @classmethod
    def settings(cls):
        """Flat `section.key` defaults, subclasses overriding their parents."""
        merged = {}
        for klass in reversed(cls.__mro__):
            merged.update(getattr(klass, 'SETTINGS', {}))
        return merged


class DeskConfig(Config):
    """Desk-scale experiment: 64x64 phantoms, depth 4, base width 8, 50 epochs."""
    SETTINGS = {
        'arch.depth': 4,
        'arch.base_width': 8,
        'data.size': 64,
        'train.epochs': 50,
    }


class SmokeConfig(Config):
    """A few seconds end to end; checks that the pipeline runs."""
    SETTINGS = {
        'arch.depth': 2,
        'arch.base_width': 4,
        'data.size': 32,
        'data.class.2.area_fraction': 0.04,
        'train.epochs': 1,
        'train.batch_size': 2,
        'train.train_size': 4,
        'train.val_size': 2,
    }


class TestingConfig(Config):
    """Smallest valid network and dataset, used by the test suite."""
    SETTINGS = {
        'arch.depth': 2,
        'arch.base_width': 4,
        'data.size': 16,
        'data.class.1.area_fraction': 0.25,
        'data.class.2.area_fraction': 0.06,
        'train.epochs': 1,
        'train.batch_size': 2,
        'train.train_size': 2,
        'train.val_size': 2,
    }


config = {
    'desk': DeskConfig,
    'smoke': SmokeConfig,
    'testing': TestingConfig,
    'default': DeskConfig
}
