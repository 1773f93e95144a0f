"""
Parameter Store for frequnet
Named parameter tensors keyed by a stable hierarchical path such as
"enc1.block.conv1.weight", together with the initializers the network uses.
"""

import logging
from collections import OrderedDict
from typing import Dict, Iterator, Mapping, Optional, Tuple

import numpy as np

from .checkpoint import read_container, write_container
from .errors import CheckpointError, ConfigError
from .tensor_core import Tensor, parameter

logger = logging.getLogger(__name__)


class ModelParams(Mapping[str, Tensor]):
    """Ordered, read-only mapping from parameter path to leaf tensor.

    Insertion order is the construction order of `init_params`, which is a
    pure function of the architecture, so iteration order is stable.
    """

    def __init__(self, tensors: Optional[Mapping[str, Tensor]] = None):
        self._tensors: "OrderedDict[str, Tensor]" = OrderedDict(tensors or {})

    def __getitem__(self, name: str) -> Tensor:
        try:
            return self._tensors[name]
        except KeyError:
            raise KeyError(f"unknown parameter '{name}'") from None

    def __iter__(self) -> Iterator[str]:
        return iter(self._tensors)

    def __len__(self) -> int:
        return len(self._tensors)

    def scope(self, prefix: str) -> "ParamScope":
        return ParamScope(self, prefix)

    def count(self) -> int:
        """Total number of scalar parameters."""
        return int(sum(t.size for t in self._tensors.values()))

    def replace(self, updates: Mapping[str, np.ndarray]) -> "ModelParams":
        """Returns new params with the given entries swapped for fresh leaves."""
        out = OrderedDict(self._tensors)
        for name, value in updates.items():
            if name not in out:
                raise KeyError(f"unknown parameter '{name}'")
            if np.shape(value) != out[name].shape:
                raise ConfigError(f"parameter '{name}' expects shape {out[name].shape}, got {np.shape(value)}")
            out[name] = parameter(value)
        return ModelParams(out)

    def arrays(self) -> Dict[str, np.ndarray]:
        return {name: t.data for name, t in self._tensors.items()}

    def save(self, path: str):
        write_container(path, self.arrays())
        logger.info("saved checkpoint path=%s tensors=%d scalars=%d", path, len(self), self.count())

    @classmethod
    def load(cls, path: str, expected: Optional["ModelParams"] = None) -> "ModelParams":
        """Loads a checkpoint; with `expected`, the key set and shapes must match."""
        arrays, _ = read_container(path)
        if expected is not None:
            missing = sorted(set(expected) - set(arrays))
            extra = sorted(set(arrays) - set(expected))
            if missing or extra:
                raise CheckpointError(f"{path}: parameter keys differ (missing={missing}, unexpected={extra})")
            for name, ref in expected.items():
                if arrays[name].shape != ref.shape:
                    raise CheckpointError(f"{path}: '{name}' has shape {arrays[name].shape}, expected {ref.shape}")
            arrays = {name: arrays[name] for name in expected}
        return cls(OrderedDict((name, parameter(arr)) for name, arr in arrays.items()))


class ParamScope:
    """View of a ModelParams restricted to one path prefix."""

    def __init__(self, params: ModelParams, prefix: str):
        self.params = params
        self.prefix = prefix

    def __getitem__(self, name: str) -> Tensor:
        return self.params[f"{self.prefix}.{name}"]

    def get(self, name: str) -> Optional[Tensor]:
        key = f"{self.prefix}.{name}"
        return self.params[key] if key in self.params else None

    def scope(self, name: str) -> "ParamScope":
        return ParamScope(self.params, f"{self.prefix}.{name}")


class ParamBuilder:
    """Creates parameters in a fixed order from one seeded generator."""

    def __init__(self, seed: int):
        self.rng = np.random.default_rng(seed)
        self.tensors: "OrderedDict[str, Tensor]" = OrderedDict()

    def _add(self, name: str, value: np.ndarray):
        if name in self.tensors:
            raise ConfigError(f"duplicate parameter path '{name}'")
        self.tensors[name] = parameter(value)

    def kaiming(self, name: str, shape: Tuple[int, ...]):
        """Kaiming-uniform with fan-in scaling: U(-sqrt(6 / fan_in), sqrt(6 / fan_in))."""
        fan_in = int(np.prod(shape[1:]))
        bound = np.sqrt(6.0 / fan_in)
        self._add(name, self.rng.uniform(-bound, bound, size=shape))

    def zeros(self, name: str, shape: Tuple[int, ...]):
        self._add(name, np.zeros(shape))

    def ones(self, name: str, shape: Tuple[int, ...]):
        self._add(name, np.ones(shape))

    def build(self) -> ModelParams:
        return ModelParams(self.tensors)
