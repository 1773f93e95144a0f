"""
Run Configuration for frequnet
A RunConfig fully determines one experiment. It is read from and written to
a flat text format, one `section.key = value` per line:

    arch.depth = 4
    switches.flc = true
    loss.w_freq = 0.5
    data.class.2.area_fraction = 0.02

Lines starting with `#` and blank lines are ignored. Later lines and
overrides win over earlier values.
"""

import hashlib
import logging
from dataclasses import dataclass, field, fields, replace
from typing import Any, Dict, Iterable, List, Mapping, Optional, Tuple

from .errors import ConfigError
from .harness.phantom import Band, ClassSpec, PhantomSpec, ShapeFamily
from .losses import LossWeights
from .spectral import SubbandPolicy
from .wavelet import DAUBECHIES_LOWPASS

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ArchConfig:
    """Network architecture.

    Attributes:
        depth: Number of encoder (and decoder) stages.
        base_width: Channels produced by the stem.
        in_channels: Image channels.
        num_classes: Segmentation classes K, background included.
        wavelet_order: Daubechies order N of the wavelet.
        tau: Fourier low-pass mask ratio.
        subband_policy: Subbands kept before the inner inverse transform.
        lowpass_pool: With DB downsampling off and FLC on, Fourier low-pass the
            skip before average pooling. Off pools the raw skip.
        groups: Offset groups g of the learnable decoder.
        scale: Upsampling factor s of the learnable decoder.
    """
    depth: int = 4
    base_width: int = 8
    in_channels: int = 1
    num_classes: int = 3
    wavelet_order: int = 4
    tau: float = 0.25
    subband_policy: SubbandPolicy = SubbandPolicy.LL_ONLY
    lowpass_pool: bool = False
    groups: int = 4
    scale: int = 2

    def stage_width(self, stage: int) -> int:
        """Skip channels of encoder stage `stage` (1-based)."""
        return self.base_width * 2 ** (stage - 1)

    def multiple(self) -> int:
        """Every spatial input size must be a multiple of this."""
        return 2 ** self.depth

    def validate(self):
        for name in ("depth", "base_width", "in_channels", "groups"):
            if getattr(self, name) < 1:
                raise ConfigError(f"arch.{name} must be positive, got {getattr(self, name)}")
        if self.num_classes < 2:
            raise ConfigError(f"arch.num_classes must be >= 2, got {self.num_classes}")
        if self.wavelet_order not in DAUBECHIES_LOWPASS:
            raise ConfigError(f"arch.wavelet_order must be one of {sorted(DAUBECHIES_LOWPASS)}, "
                              f"got {self.wavelet_order}")
        if not 0.0 < self.tau < 1.0:
            raise ConfigError(f"arch.tau must lie in (0, 1), got {self.tau}")
        if self.scale != 2:
            raise ConfigError(f"arch.scale must be 2 (each stage halves the resolution), got {self.scale}")
        for stage in range(1, self.depth + 1):
            carry = 2 * self.stage_width(stage)
            if carry % self.groups or carry % (self.scale ** 2):
                raise ConfigError(f"arch: decoder input of stage {stage} has {carry} channels, not divisible "
                                  f"by groups={self.groups} and scale^2={self.scale ** 2}")


@dataclass(frozen=True)
class Switches:
    """Ablation switches; all on is the full model."""
    flc: bool = True
    db_down: bool = True
    sld: bool = True
    fal: bool = True
    deep_supervision: bool = True

    def all_off(self) -> "Switches":
        return Switches(flc=False, db_down=False, sld=False, fal=False,
                        deep_supervision=self.deep_supervision)


@dataclass(frozen=True)
class OptimConfig:
    """Adam and the EMA plateau-halving schedule."""
    lr: float = 4e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    lr_min: float = 1e-6
    patience: int = 5
    ema_decay: float = 0.95
    min_delta: float = 1e-4

    def validate(self):
        if not self.lr > 0.0 or not self.lr_min > 0.0 or self.lr_min > self.lr:
            raise ConfigError(f"optim: need 0 < lr_min <= lr, got lr={self.lr} lr_min={self.lr_min}")
        for name in ("beta1", "beta2", "ema_decay"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise ConfigError(f"optim.{name} must lie in [0, 1), got {getattr(self, name)}")
        if self.patience < 1:
            raise ConfigError(f"optim.patience must be positive, got {self.patience}")
        if self.eps <= 0.0 or self.min_delta < 0.0:
            raise ConfigError(f"optim: eps must be positive and min_delta non-negative")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    batch_size: int = 4
    seed: int = 0
    train_size: int = 200
    val_size: int = 50

    def validate(self):
        for name in ("epochs", "batch_size", "train_size", "val_size"):
            if getattr(self, name) < 1:
                raise ConfigError(f"train.{name} must be positive, got {getattr(self, name)}")


@dataclass(frozen=True)
class RunConfig:
    arch: ArchConfig = field(default_factory=ArchConfig)
    switches: Switches = field(default_factory=Switches)
    loss: LossWeights = field(default_factory=LossWeights)
    optim: OptimConfig = field(default_factory=OptimConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: PhantomSpec = field(default_factory=PhantomSpec)

    def validate(self) -> "RunConfig":
        self.arch.validate()
        self.loss.validate()
        self.optim.validate()
        self.train.validate()
        self.data.validate()
        if self.arch.num_classes != self.data.num_classes:
            raise ConfigError(f"arch.num_classes={self.arch.num_classes} but data defines "
                              f"{self.data.num_classes} classes (background + {len(self.data.classes)})")
        if self.data.size % self.arch.multiple():
            raise ConfigError(f"data.size={self.data.size} must be a multiple of 2^depth={self.arch.multiple()}")
        return self

    def effective_loss(self) -> LossWeights:
        """Loss weights with the FAL switch applied."""
        return self.loss if self.switches.fal else self.loss.without_freq()

    def with_seed(self, seed: int) -> "RunConfig":
        return replace(self, train=replace(self.train, seed=seed), data=self.data.with_seed(seed))

    def with_switches(self, switches: Switches) -> "RunConfig":
        return replace(self, switches=switches)

    def serialize(self) -> str:
        return "".join(f"{key} = {value}\n" for key, value in to_pairs(self))

    def config_hash(self) -> str:
        return hashlib.sha256(self.serialize().encode("utf-8")).hexdigest()[:12]


# --- Flat key/value form ---

_SECTIONS = ("arch", "switches", "loss", "optim", "train")
_CLASS_FIELDS = ("area_fraction", "band", "shape", "intensity")


def _format(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if hasattr(value, "value"):
        return str(value.value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def to_pairs(cfg: RunConfig) -> List[Tuple[str, str]]:
    pairs = []
    for section in _SECTIONS:
        obj = getattr(cfg, section)
        pairs.extend((f"{section}.{f.name}", _format(getattr(obj, f.name))) for f in fields(obj))
    for name in ("size", "noise", "seed"):
        pairs.append((f"data.{name}", _format(getattr(cfg.data, name))))
    for k, cls in enumerate(cfg.data.classes, start=1):
        pairs.extend((f"data.class.{k}.{name}", _format(getattr(cls, name))) for name in _CLASS_FIELDS)
    return pairs


def valid_keys(cfg: Optional[RunConfig] = None) -> List[str]:
    return [key for key, _ in to_pairs(cfg or RunConfig())]


def _parse_value(key: str, raw: str, current: Any) -> Any:
    raw = raw.strip()
    try:
        if isinstance(current, bool):
            lowered = raw.lower()
            if lowered not in ("true", "false", "1", "0", "yes", "no", "on", "off"):
                raise ValueError(raw)
            return lowered in ("true", "1", "yes", "on")
        if isinstance(current, (SubbandPolicy, Band, ShapeFamily)):
            return type(current)(raw)
        if isinstance(current, int):
            return int(raw)
        if isinstance(current, float):
            return float(raw)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {type(current).__name__}") from None
    return raw


def _resolve_key(key: str, known: List[str]) -> str:
    if key in known:
        return key
    matches = [k for k in known if k.endswith("." + key)]
    if len(matches) == 1:
        return matches[0]
    raise ConfigError(f"unknown config key '{key}'; valid keys: {', '.join(known)}")


def _apply_class_pair(classes: List[ClassSpec], key: str, raw: str) -> List[ClassSpec]:
    parts = key.split(".")
    if len(parts) != 4 or not parts[2].isdigit() or parts[3] not in _CLASS_FIELDS:
        raise ConfigError(f"malformed class key '{key}', expected data.class.<k>.<{'|'.join(_CLASS_FIELDS)}>")
    k = int(parts[2])
    if not 1 <= k <= len(classes) + 1:
        raise ConfigError(f"{key}: classes must be numbered consecutively from 1, got class {k}")
    if k == len(classes) + 1:
        classes.append(ClassSpec(area_fraction=0.1))
    cls = classes[k - 1]
    value = _parse_value(key, raw, getattr(cls, parts[3]))
    classes[k - 1] = replace(cls, **{parts[3]: value})
    return classes


def apply_pairs(cfg: RunConfig, pairs: Iterable[Tuple[str, str]]) -> RunConfig:
    """Applies `key = value` pairs on top of `cfg`.

    Keys may be written in full (`train.epochs`) or, when unambiguous, by
    their last component (`epochs`).

    Raises:
        ConfigError: On unknown keys (the message lists every valid key) or
            unparsable values.
    """
    sections: Dict[str, Any] = {name: getattr(cfg, name) for name in _SECTIONS}
    data = cfg.data
    classes = list(data.classes)
    for key, raw in pairs:
        key = key.strip()
        if not key.startswith("data.class."):
            key = _resolve_key(key, valid_keys(cfg))
        if key.startswith("data.class."):
            classes = _apply_class_pair(classes, key, raw)
            continue
        section, name = key.split(".", 1)
        if section == "data":
            data = replace(data, **{name: _parse_value(key, raw, getattr(data, name))})
        else:
            obj = sections[section]
            sections[section] = replace(obj, **{name: _parse_value(key, raw, getattr(obj, name))})
    return replace(cfg, data=replace(data, classes=tuple(classes)), **sections)


def parse_text(text: str, source: str = "<text>") -> List[Tuple[str, str]]:
    pairs = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'section.key = value', got {line!r}")
        key, value = line.split("=", 1)
        pairs.append((key.strip(), value.strip()))
    return pairs


def parse_override(item: str) -> Tuple[str, str]:
    if "=" not in item:
        raise ConfigError(f"override {item!r} must have the form key=value")
    key, value = item.split("=", 1)
    return key.strip(), value.strip()


def from_text(text: str, base: Optional[RunConfig] = None, source: str = "<text>") -> RunConfig:
    """Parses the flat format on top of `base` (defaults when omitted).

    A file that lists data.class entries replaces the base class list.
    """
    base = base or RunConfig()
    pairs = parse_text(text, source)
    if any(key.startswith("data.class.") for key, _ in pairs):
        base = replace(base, data=replace(base.data, classes=()))
    return apply_pairs(base, pairs)


def load(path: str, base: Optional[RunConfig] = None) -> RunConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return from_text(fh.read(), base, source=path)


def resolve(profile: Mapping[str, Any], path: Optional[str] = None, overrides: Iterable[str] = (),
            seed: Optional[int] = None) -> RunConfig:
    """Profile defaults < config file < overrides < --seed, then validated."""
    cfg = apply_pairs(RunConfig(), ((k, _format(v)) for k, v in profile.items()))
    if path:
        cfg = load(path, cfg)
    cfg = apply_pairs(cfg, (parse_override(item) for item in overrides))
    if seed is not None:
        cfg = cfg.with_seed(seed)
    logger.debug("resolved config hash=%s", cfg.config_hash())
    return cfg.validate()
