"""
Wavelet Module for frequnet
This module implements single-level 2D separable Daubechies wavelet analysis
and synthesis with periodic extension. With orthonormal filters the periodic
transform is an orthogonal map, so synthesis is both the inverse and the
adjoint of analysis, which is what the tape registers as its VJP.
"""

import logging
from dataclasses import dataclass
from functools import lru_cache
from typing import Dict, Tuple

import numpy as np

from .errors import ConfigError, DimensionError
from .tensor_core import Tensor, channel_slice, concat_channel, record

logger = logging.getLogger(__name__)

# --- Filter Tables ---

SQRT3 = np.sqrt(3.0)

# Scaling (low-pass) filters h[n], normalized so sum(h) = sqrt(2), sum(h^2) = 1.
DAUBECHIES_LOWPASS: Dict[int, Tuple[float, ...]] = {
    1: (0.7071067811865476, 0.7071067811865476),
    2: ((1 + SQRT3) / (4 * np.sqrt(2.0)), (3 + SQRT3) / (4 * np.sqrt(2.0)),
        (3 - SQRT3) / (4 * np.sqrt(2.0)), (1 - SQRT3) / (4 * np.sqrt(2.0))),
    3: (0.33267055295095688, 0.80689150931333875, 0.45987750211933132,
        -0.13501102001039084, -0.085441273882241486, 0.035226291882100656),
    4: (0.23037781330885523, 0.71484657055254153, 0.63088076792959036,
        -0.027983769416983850, -0.18703481171888114, 0.030841381835986965,
        0.032883011666982945, -0.010597401784997278),
}


@dataclass(frozen=True)
class WaveletSpec:
    """An orthonormal Daubechies wavelet.

    Attributes:
        order: N, the number of vanishing moments (filter length 2N).
        lowpass: Decomposition low-pass coefficients h[n].
        boundary: Signal extension mode; only "periodic" is supported.
    """
    order: int
    lowpass: Tuple[float, ...]
    boundary: str = "periodic"

    @classmethod
    def daubechies(cls, order: int) -> "WaveletSpec":
        if order not in DAUBECHIES_LOWPASS:
            raise ConfigError(f"wavelet order must be one of {sorted(DAUBECHIES_LOWPASS)}, got {order}")
        return cls(order=order, lowpass=tuple(float(c) for c in DAUBECHIES_LOWPASS[order]))

    @property
    def highpass(self) -> Tuple[float, ...]:
        """Quadrature-mirror high-pass g[n] = (-1)^n h[2N-1-n]."""
        h = self.lowpass
        n = len(h)
        return tuple(((-1) ** k) * h[n - 1 - k] for k in range(n))

    def validate(self, tol: float = 1e-10):
        """Checks filter length, DC gain and unit energy."""
        h = np.asarray(self.lowpass)
        if h.size != 2 * self.order:
            raise ConfigError(f"db{self.order} needs {2 * self.order} taps, got {h.size}")
        if abs(h.sum() - np.sqrt(2.0)) > tol:
            raise ConfigError(f"db{self.order} low-pass sum {h.sum()!r} differs from sqrt(2)")
        if abs((h * h).sum() - 1.0) > tol:
            raise ConfigError(f"db{self.order} low-pass energy {(h * h).sum()!r} differs from 1")
        if self.boundary != "periodic":
            raise ConfigError(f"unsupported boundary mode '{self.boundary}'")


for _order in DAUBECHIES_LOWPASS:
    WaveletSpec.daubechies(_order).validate()


@dataclass(frozen=True)
class SubbandSet:
    """The four half-resolution outputs of a 2D DWT.

    The first letter names the filter applied along the width (rows), the
    second the filter along the height (columns): LH holds horizontal detail,
    HL vertical detail, HH diagonal detail.
    """
    LL: Tensor
    LH: Tensor
    HL: Tensor
    HH: Tensor

    def __post_init__(self):
        shapes = {t.shape for t in self.bands()}
        if len(shapes) != 1:
            raise DimensionError(f"subbands must share one shape, got {[t.shape for t in self.bands()]}")

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.LL.shape

    def bands(self) -> Tuple[Tensor, Tensor, Tensor, Tensor]:
        return self.LL, self.LH, self.HL, self.HH

    def details(self) -> Tuple[Tensor, Tensor, Tensor]:
        return self.LH, self.HL, self.HH

    def stacked(self) -> Tensor:
        """Channel concatenation [LL, LH, HL, HH] of shape (B, 4C, h, w)."""
        return concat_channel(list(self.bands()))

    @classmethod
    def from_stacked(cls, stacked: Tensor) -> "SubbandSet":
        c = stacked.shape[1] // 4
        return cls(*(channel_slice(stacked, i * c, (i + 1) * c) for i in range(4)))


# --- Analysis / Synthesis Matrices ---


@lru_cache(maxsize=64)
def _analysis_matrices(spec: WaveletSpec, n: int) -> Tuple[np.ndarray, np.ndarray]:
    """Periodized (n/2 x n) low and high analysis matrices along one axis."""
    low = np.zeros((n // 2, n))
    high = np.zeros((n // 2, n))
    for k in range(n // 2):
        for m, (hm, gm) in enumerate(zip(spec.lowpass, spec.highpass)):
            j = (2 * k + m) % n
            low[k, j] += hm
            high[k, j] += gm
    low.setflags(write=False)
    high.setflags(write=False)
    return low, high


def _check_even(x_shape: Tuple[int, ...], op: str):
    if len(x_shape) != 4:
        raise DimensionError(f"{op} expects a (B, C, H, W) tensor, got shape {x_shape}")
    if x_shape[2] % 2 or x_shape[3] % 2:
        raise DimensionError(f"{op} needs even H and W, got {x_shape[2:]}")


def _analyze(data: np.ndarray, spec: WaveletSpec) -> np.ndarray:
    b, c, h, w = data.shape
    row_lo, row_hi = _analysis_matrices(spec, w)
    col_lo, col_hi = _analysis_matrices(spec, h)
    rows = {"L": np.einsum("bchw,kw->bchk", data, row_lo), "H": np.einsum("bchw,kw->bchk", data, row_hi)}
    cols = {"L": col_lo, "H": col_hi}
    bands = [np.einsum("jh,bchk->bcjk", cols[cname], rows[rname])
             for rname, cname in (("L", "L"), ("L", "H"), ("H", "L"), ("H", "H"))]
    return np.concatenate(bands, axis=1)


def _synthesize(stacked: np.ndarray, spec: WaveletSpec) -> np.ndarray:
    b, c4, hh, hw = stacked.shape
    c = c4 // 4
    row_lo, row_hi = _analysis_matrices(spec, 2 * hw)
    col_lo, col_hi = _analysis_matrices(spec, 2 * hh)
    rows = {"L": row_lo, "H": row_hi}
    cols = {"L": col_lo, "H": col_hi}
    out = np.zeros((b, c, 2 * hh, 2 * hw))
    for i, (rname, cname) in enumerate((("L", "L"), ("L", "H"), ("H", "L"), ("H", "H"))):
        band = stacked[:, i * c:(i + 1) * c]
        out += np.einsum("jh,bcjk,kw->bchw", cols[cname], band, rows[rname], optimize=True)
    return out


# --- Transforms ---


def dwt2_stacked(x: Tensor, spec: WaveletSpec) -> Tensor:
    """Single-level DWT returning the channel-stacked subbands [LL, LH, HL, HH]."""
    _check_even(x.shape, "dwt2")
    return record("dwt2", (x,), _analyze(x.data, spec), lambda g: (_synthesize(g, spec),))


def synthesis_stacked(stacked: Tensor, spec: WaveletSpec, op: str = "idwt2") -> Tensor:
    """Applies the transpose of `dwt2_stacked` to channel-stacked subbands."""
    if stacked.ndim != 4 or stacked.shape[1] % 4:
        raise DimensionError(f"{op} expects (B, 4C, h, w) stacked subbands, got {stacked.shape}")
    return record(op, (stacked,), _synthesize(stacked.data, spec), lambda g: (_analyze(g, spec),))


def dwt2(x: Tensor, spec: WaveletSpec) -> SubbandSet:
    """Separable single-level DWT with periodic extension.

    Args:
        x: Input of shape (B, C, H, W) with H and W even.
        spec: Wavelet to use.

    Returns:
        SubbandSet with four (B, C, H/2, W/2) tensors.
    """
    return SubbandSet.from_stacked(dwt2_stacked(x, spec))


def idwt2(s: SubbandSet, spec: WaveletSpec) -> Tensor:
    """Inverse DWT; idwt2(dwt2(x)) == x up to rounding."""
    return synthesis_stacked(s.stacked(), spec, op="idwt2")


def adjoint_dwt2(s: SubbandSet, spec: WaveletSpec) -> Tensor:
    """Adjoint of `dwt2`: <dwt2(x), s> == <x, adjoint_dwt2(s)>.

    For the orthonormal periodic transform this coincides with `idwt2`.
    """
    return synthesis_stacked(s.stacked(), spec, op="adjoint_dwt2")


if __name__ == "__main__":
    rng = np.random.default_rng(0)
    x = Tensor(rng.standard_normal((1, 1, 8, 8)))
    for order in sorted(DAUBECHIES_LOWPASS):
        spec = WaveletSpec.daubechies(order)
        err = np.abs(idwt2(dwt2(x, spec), spec).data - x.data).max()
        print(f"db{order}: reconstruction error {err:.2e}")
