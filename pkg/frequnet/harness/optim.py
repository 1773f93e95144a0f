"""
Optimizer and learning-rate schedule for frequnet training.
"""

import logging
from dataclasses import dataclass
from typing import Dict, Optional

import numpy as np

from ..params import ModelParams
from ..tensor_core import GradientMap

logger = logging.getLogger(__name__)


class Adam:
    """Adam without weight decay; state is keyed by parameter path."""

    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m: Dict[str, np.ndarray] = {}
        self.v: Dict[str, np.ndarray] = {}

    def step(self, params: ModelParams, grads: GradientMap) -> ModelParams:
        """Returns updated params; parameters without a gradient are left as is."""
        self.t += 1
        bias1 = 1.0 - self.beta1 ** self.t
        bias2 = 1.0 - self.beta2 ** self.t
        updates = {}
        for name, tensor in params.items():
            if tensor not in grads:
                continue
            g = grads.array(tensor)
            m = self.beta1 * self.m.get(name, 0.0) + (1.0 - self.beta1) * g
            v = self.beta2 * self.v.get(name, 0.0) + (1.0 - self.beta2) * g * g
            self.m[name], self.v[name] = m, v
            updates[name] = tensor.data - self.lr * (m / bias1) / (np.sqrt(v / bias2) + self.eps)
        return params.replace(updates)


class EMA:
    """Exponential moving average, initialized with the first value."""

    def __init__(self, decay: float = 0.95):
        self.decay = decay
        self.value: Optional[float] = None

    def update(self, x: float) -> float:
        if self.value is None:
            self.value = float(x)
        else:
            self.value = self.decay * self.value + (1.0 - self.decay) * float(x)
        return self.value


@dataclass
class PlateauSchedule:
    """Halves the learning rate when the monitored value stops improving.

    The value improves when it drops below best - min_delta. After
    `patience` consecutive epochs without improvement the rate is halved,
    never below `lr_min`, and the wait counter restarts.
    """
    lr: float
    lr_min: float = 1e-6
    patience: int = 5
    min_delta: float = 1e-4
    factor: float = 0.5
    best: float = float("inf")
    wait: int = 0

    def step(self, value: float) -> float:
        if value < self.best - self.min_delta:
            self.best = value
            self.wait = 0
            return self.lr
        self.wait += 1
        if self.wait >= self.patience:
            new_lr = max(self.lr * self.factor, self.lr_min)
            if new_lr < self.lr:
                logger.info("lr reduced old=%.3g new=%.3g best=%.6f", self.lr, new_lr, self.best)
            self.lr = new_lr
            self.wait = 0
        return self.lr
