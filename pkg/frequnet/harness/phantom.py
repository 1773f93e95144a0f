"""
Synthetic Phantom Module for frequnet
This module generates class-imbalanced segmentation phantoms: a smooth,
low-band majority structure and small minority blobs carrying band-limited
high-frequency texture, plus the train-split normalizer and the dataset
cache file.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Iterator, Optional, Tuple

import numpy as np

from ..checkpoint import read_container, write_container
from ..errors import CheckpointError, ConfigError, DataError
from ..spectral import band_energy_outside
from ..tensor_core import Tensor

logger = logging.getLogger(__name__)

# Minority texture must keep this share of its energy outside the tau mask.
AUDIT_TAU = 0.25
AUDIT_MIN_HIGH_ENERGY = 0.8
MAX_DRAWS = 8
MIN_AREA_FRACTION = 0.005
MAX_AREA_FRACTION = 0.5


class Band(str, Enum):
    LOW = "low"
    HIGH = "high"


class ShapeFamily(str, Enum):
    ELLIPSE = "ellipse"
    TEXTURED_BLOB = "textured_blob"


@dataclass(frozen=True)
class ClassSpec:
    """One foreground class of the phantom.

    Attributes:
        area_fraction: Target share of the image covered by the class.
        band: Spectral band of the class signal.
        shape: Geometry of the class region.
        intensity: Signal amplitude.
    """
    area_fraction: float
    band: Band = Band.LOW
    shape: ShapeFamily = ShapeFamily.ELLIPSE
    intensity: float = 1.0


def default_classes() -> Tuple[ClassSpec, ...]:
    return (
        ClassSpec(0.20, Band.LOW, ShapeFamily.ELLIPSE, 1.0),
        ClassSpec(0.02, Band.HIGH, ShapeFamily.TEXTURED_BLOB, 1.0),
    )


@dataclass(frozen=True)
class PhantomSpec:
    """Parameters of the synthetic dataset; class 0 is background.

    Attributes:
        size: Image height and width.
        classes: Foreground classes 1..K-1, painted in order.
        noise: Standard deviation of additive Gaussian noise.
        seed: Dataset seed; sample i is a pure function of (seed, i).
    """
    size: int = 64
    classes: Tuple[ClassSpec, ...] = field(default_factory=default_classes)
    noise: float = 0.1
    seed: int = 0

    @property
    def num_classes(self) -> int:
        return len(self.classes) + 1

    def validate(self):
        if self.size < 8 or self.size % 2:
            raise ConfigError(f"data.size must be an even integer >= 8, got {self.size}")
        if not self.classes:
            raise ConfigError("data: at least one foreground class is required")
        if self.noise < 0.0:
            raise ConfigError(f"data.noise must be non-negative, got {self.noise}")
        for k, cls in enumerate(self.classes, start=1):
            if not MIN_AREA_FRACTION <= cls.area_fraction <= MAX_AREA_FRACTION:
                raise ConfigError(f"data.class.{k}.area_fraction must lie in "
                                  f"[{MIN_AREA_FRACTION}, {MAX_AREA_FRACTION}], got {cls.area_fraction}")
            Band(cls.band)
            ShapeFamily(cls.shape)
        total = sum(cls.area_fraction for cls in self.classes)
        if total >= 1.0:
            raise ConfigError(f"data: class area fractions sum to {total:.4f}, must be < 1")

    def with_seed(self, seed: int) -> "PhantomSpec":
        return replace(self, seed=seed)


@dataclass(frozen=True)
class SampleBatch:
    """Images (N, 1, H, W) paired with integer labels (N, H, W)."""
    images: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        if self.images.ndim != 4 or self.labels.ndim != 3:
            raise DataError(f"batch needs (N, 1, H, W) images and (N, H, W) labels, got "
                            f"{self.images.shape} and {self.labels.shape}")
        if self.images.shape[0] != self.labels.shape[0] or self.images.shape[2:] != self.labels.shape[1:]:
            raise DataError(f"image shape {self.images.shape} does not match label shape {self.labels.shape}")

    def __len__(self) -> int:
        return self.images.shape[0]

    def tensor(self) -> Tensor:
        return Tensor(self.images)

    def subset(self, index) -> "SampleBatch":
        return SampleBatch(self.images[index], self.labels[index], self.num_classes)

    def batches(self, batch_size: int) -> Iterator["SampleBatch"]:
        """Consecutive batches in index order; the last one may be short."""
        for start in range(0, len(self), batch_size):
            yield self.subset(slice(start, start + batch_size))

    @classmethod
    def stack(cls, samples) -> "SampleBatch":
        samples = list(samples)
        return cls(np.concatenate([s.images for s in samples]),
                   np.concatenate([s.labels for s in samples]),
                   samples[0].num_classes)


# --- Shapes ---


def _ellipse_mask(rng: np.random.Generator, size: int, area: float) -> np.ndarray:
    aspect = rng.uniform(0.7, 1.3)
    a = np.sqrt(area / np.pi * aspect)
    b = np.sqrt(area / np.pi / aspect)
    reach = min(max(a, b), size / 2.0)
    cy, cx = rng.uniform(reach, size - reach, size=2)
    theta = rng.uniform(0.0, np.pi)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    dy, dx = yy - cy, xx - cx
    u = dx * np.cos(theta) + dy * np.sin(theta)
    v = -dx * np.sin(theta) + dy * np.cos(theta)
    return (u / a) ** 2 + (v / b) ** 2 <= 1.0


def _blob_mask(rng: np.random.Generator, size: int, area: float) -> np.ndarray:
    radius = np.sqrt(area / np.pi)
    lobes = int(rng.integers(2, 5))
    depth = rng.uniform(0.1, 0.25)
    phase = rng.uniform(0.0, 2.0 * np.pi)
    reach = min(radius * (1.0 + depth) + 1.0, size / 2.0)
    cy, cx = rng.uniform(reach, size - reach, size=2)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    angle = np.arctan2(yy - cy, xx - cx)
    boundary = radius * (1.0 + depth * np.sin(lobes * angle + phase))
    return np.hypot(yy - cy, xx - cx) <= boundary


def _high_band_texture(rng: np.random.Generator, size: int) -> np.ndarray:
    """cos(wy i + py) cos(wx j + px) with both frequencies in [0.8 pi, pi]."""
    wy, wx = rng.uniform(0.8 * np.pi, np.pi, size=2)
    py, px = rng.uniform(-0.25 * np.pi, 0.25 * np.pi, size=2)
    i = np.arange(size, dtype=np.float64)
    return np.cos(wy * i + py)[:, None] * np.cos(wx * i + px)[None, :]


def _class_signal(rng: np.random.Generator, spec: PhantomSpec, k: int, cls: ClassSpec):
    area = cls.area_fraction * spec.size * spec.size
    for draw in range(MAX_DRAWS):
        if ShapeFamily(cls.shape) is ShapeFamily.ELLIPSE:
            mask = _ellipse_mask(rng, spec.size, area)
        else:
            mask = _blob_mask(rng, spec.size, area)
        if not mask.any():
            continue
        if Band(cls.band) is Band.LOW:
            return mask, cls.intensity * mask
        signal = cls.intensity * _high_band_texture(rng, spec.size) * mask
        share = band_energy_outside(signal, AUDIT_TAU)
        if share >= AUDIT_MIN_HIGH_ENERGY:
            return mask, signal
        logger.debug("rejected texture class=%d draw=%d high_share=%.3f", k, draw, share)
    raise DataError(f"class {k}: no draw met the {AUDIT_MIN_HIGH_ENERGY:.0%} high-band energy audit "
                    f"in {MAX_DRAWS} attempts")


def generate_phantom(spec: PhantomSpec, index: int) -> SampleBatch:
    """Draws sample `index`; deterministic in (spec.seed, index).

    Classes are painted in order, later ones overwriting earlier ones, then
    Gaussian noise is added to the image. Labels are exact.

    Raises:
        ConfigError: If the class layout is infeasible.
        DataError: If a high-band class fails its energy audit repeatedly.
    """
    spec.validate()
    rng = np.random.default_rng([spec.seed, index])
    image = np.zeros((spec.size, spec.size))
    labels = np.zeros((spec.size, spec.size), dtype=np.int64)
    for k, cls in enumerate(spec.classes, start=1):
        mask, signal = _class_signal(rng, spec, k, cls)
        image = np.where(mask, signal, image)
        labels[mask] = k
    if spec.noise > 0.0:
        image = image + spec.noise * rng.standard_normal(image.shape)
    return SampleBatch(image[None, None], labels[None], spec.num_classes)


def generate_dataset(spec: PhantomSpec, count: int, start: int = 0, threads: int = 1) -> SampleBatch:
    """Samples start..start+count-1, generated in parallel and stacked in index order."""
    if count < 1:
        raise ConfigError(f"dataset size must be positive, got {count}")
    indices = range(start, start + count)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            samples = list(pool.map(lambda i: generate_phantom(spec, i), indices))
    else:
        samples = [generate_phantom(spec, i) for i in indices]
    logger.info("generated phantoms count=%d start=%d seed=%d", count, start, spec.seed)
    return SampleBatch.stack(samples)


def make_splits(spec: PhantomSpec, train_size: int, val_size: int,
                threads: int = 1) -> Tuple[SampleBatch, SampleBatch]:
    """Train takes indices [0, train_size), validation the next val_size."""
    train = generate_dataset(spec, train_size, 0, threads)
    val = generate_dataset(spec, val_size, train_size, threads)
    return train, val


# --- Normalization ---


@dataclass(frozen=True)
class Normalizer:
    """Dataset-level z-score with statistics from the training split."""
    mean: float
    std: float
    eps: float = 1e-8

    @classmethod
    def fit(cls, train: SampleBatch, eps: float = 1e-8) -> "Normalizer":
        mean = float(train.images.mean())
        std = float(train.images.std())
        if std < eps:
            std = 1.0
        return cls(mean=mean, std=std, eps=eps)

    def apply(self, batch: SampleBatch) -> SampleBatch:
        return replace(batch, images=(batch.images - self.mean) / self.std)


def normalize(train: SampleBatch, *others: SampleBatch) -> Tuple[SampleBatch, ...]:
    """Z-scores every split with the training split's statistics."""
    norm = Normalizer.fit(train)
    logger.debug("normalizer mean=%.6f std=%.6f", norm.mean, norm.std)
    return tuple(norm.apply(b) for b in (train,) + others)


# --- Cache ---


def save_dataset(path: str, train: SampleBatch, val: SampleBatch):
    """Writes both splits into one container with a u16 labels section."""
    arrays = {
        "train.images": train.images,
        "val.images": val.images,
        "meta.num_classes": np.array([float(train.num_classes)]),
    }
    labels = {"train.labels": train.labels, "val.labels": val.labels}
    write_container(path, arrays, labels)
    logger.info("wrote dataset cache path=%s train=%d val=%d", path, len(train), len(val))


def load_dataset(path: str, expected_classes: Optional[int] = None) -> Tuple[SampleBatch, SampleBatch]:
    arrays, labels = read_container(path)
    try:
        num_classes = int(arrays["meta.num_classes"][0])
        train = SampleBatch(arrays["train.images"], labels["train.labels"], num_classes)
        val = SampleBatch(arrays["val.images"], labels["val.labels"], num_classes)
    except KeyError as exc:
        raise CheckpointError(f"{path}: dataset cache lacks entry {exc}") from None
    if expected_classes is not None and expected_classes != num_classes:
        raise ConfigError(f"{path}: cache holds {num_classes} classes, config expects {expected_classes}")
    return train, val
