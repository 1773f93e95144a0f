"""
Spectral Module for frequnet
This module implements the Fourier-domain low-pass calibration used by the
frequency encoder: centered 2D FFT, the rectangular low-pass mask, the
filtering operator and the composite wavelet/Fourier block.
"""

import logging
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from typing import Tuple

import numpy as np

from .errors import ConfigError, DimensionError
from .tensor_core import Tensor, record
from .wavelet import SubbandSet, WaveletSpec, dwt2, idwt2

logger = logging.getLogger(__name__)


class SubbandPolicy(str, Enum):
    """Which subbands survive into the inner inverse wavelet transform."""
    ALL = "all"
    LL_ONLY = "ll_only"


@dataclass(frozen=True)
class ComplexSpectrum:
    """Centered spectrum of a (B, C, H, W) tensor; zero frequency at (H//2, W//2)."""
    real: np.ndarray
    imag: np.ndarray

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.real.shape

    def complex(self) -> np.ndarray:
        return self.real + 1j * self.imag

    def magnitude(self) -> np.ndarray:
        return np.hypot(self.real, self.imag)

    def inverse(self) -> Tensor:
        """Inverse of `fft2_centered`; returns the real part."""
        spatial = np.fft.ifft2(np.fft.ifftshift(self.complex(), axes=(-2, -1)), axes=(-2, -1))
        return Tensor(spatial.real)

    def imaginary_residue(self) -> float:
        """Largest |imag| left after inversion (should vanish for real inputs)."""
        spatial = np.fft.ifft2(np.fft.ifftshift(self.complex(), axes=(-2, -1)), axes=(-2, -1))
        return float(np.abs(spatial.imag).max())


@dataclass(frozen=True)
class FreqMask:
    """Binary low-pass mask over centered frequency coordinates.

    Attributes:
        tau: Ratio controlling the preserved region, 0 < tau < 1.
        h: Height of the frequency map.
        w: Width of the frequency map.
        values: (h, w) array of 0.0 / 1.0.
    """
    tau: float
    h: int
    w: int
    values: np.ndarray

    @property
    def center(self) -> Tuple[int, int]:
        return self.h // 2, self.w // 2

    def pass_fraction(self) -> float:
        return float(self.values.mean())


def fft2_centered(x: Tensor) -> ComplexSpectrum:
    """Unnormalized forward DFT of every (b, c) slice, shifted to the center."""
    spectrum = np.fft.fftshift(np.fft.fft2(x.data, axes=(-2, -1)), axes=(-2, -1))
    return ComplexSpectrum(real=spectrum.real.copy(), imag=spectrum.imag.copy())


@lru_cache(maxsize=128)
def _mask_values(h: int, w: int, tau: float) -> np.ndarray:
    u = np.abs(np.arange(h) - h // 2)[:, None]
    v = np.abs(np.arange(w) - w // 2)[None, :]
    values = ((u <= tau * h) & (v <= tau * w)).astype(np.float64)
    values.setflags(write=False)
    return values


def build_mask(h: int, w: int, tau: float) -> FreqMask:
    """Builds M(u, v) = 1 iff |u - u_c| <= tau h and |v - v_c| <= tau w.

    Raises:
        ConfigError: If tau is outside (0, 1) or the size is not positive.
    """
    if not 0.0 < tau < 1.0:
        raise ConfigError(f"tau must lie in (0, 1), got {tau}")
    if h < 1 or w < 1:
        raise ConfigError(f"mask size must be positive, got {(h, w)}")
    return FreqMask(tau=float(tau), h=h, w=w, values=_mask_values(h, w, float(tau)))


def _apply_lowpass(data: np.ndarray, natural_mask: np.ndarray) -> np.ndarray:
    return np.fft.ifft2(np.fft.fft2(data, axes=(-2, -1)) * natural_mask, axes=(-2, -1)).real


def lowpass_filter(x: Tensor, tau: float) -> Tensor:
    """Returns Re IFFT(FFT(x) * M).

    The mask is even in frequency, so the operator is real, symmetric and
    idempotent; its VJP is the same filter applied to the cotangent.
    """
    if x.ndim != 4:
        raise DimensionError(f"lowpass_filter expects a (B, C, H, W) tensor, got shape {x.shape}")
    mask = build_mask(x.shape[2], x.shape[3], tau)
    natural = np.fft.ifftshift(mask.values)
    return record("lowpass_filter", (x,), _apply_lowpass(x.data, natural),
                  lambda g: (_apply_lowpass(g, natural),))


def select_subbands(s: SubbandSet, policy: SubbandPolicy) -> SubbandSet:
    """Applies the subband policy ahead of the inner inverse transform."""
    policy = SubbandPolicy(policy)
    if policy is SubbandPolicy.ALL:
        return s
    zero = Tensor(np.zeros(s.shape))
    return SubbandSet(s.LL, zero, zero, zero)


def flc_block(x: Tensor, tau: float, spec: WaveletSpec,
              subband_policy: SubbandPolicy = SubbandPolicy.LL_ONLY) -> SubbandSet:
    """Composite frequency low-pass calibration.

    WT -> select -> IWT -> FFT -> mask -> IFFT -> WT, returning the
    downsampled subbands of the filtered map.

    Args:
        x: Input of shape (B, C, H, W), H and W even.
        tau: Mask ratio.
        spec: Wavelet for both transforms.
        subband_policy: `ll_only` zeroes the detail bands before the inner
            inverse transform; `all` keeps them (inner transforms cancel).

    Returns:
        SubbandSet at (H/2, W/2).
    """
    smoothed = idwt2(select_subbands(dwt2(x, spec), subband_policy), spec)
    return dwt2(lowpass_filter(smoothed, tau), spec)


def band_energy_outside(x: np.ndarray, tau: float) -> float:
    """Fraction of spectral energy of a 2D signal lying outside the tau mask."""
    spectrum = np.fft.fftshift(np.fft.fft2(x))
    energy = np.abs(spectrum) ** 2
    total = energy.sum()
    if total == 0.0:
        return 0.0
    mask = build_mask(x.shape[0], x.shape[1], tau).values
    return float((energy * (1.0 - mask)).sum() / total)
