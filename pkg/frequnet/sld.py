"""
Spatial Learnable Decoder for frequnet
This module implements the decoder's upsampling path: bilinear grid
sampling, the native-space dynamic sampling pathway, the space-channel
exchange sampling pathway, adaptive per-pixel fusion of the two, and the
decoder stage that concatenates the upsampled carry with the encoder skip.

Sampling grids are (B, 2g, H_out, W_out) tensors of normalized coordinates
in [-1, 1]; channel 2j holds the x (width) coordinate of group j and
channel 2j + 1 its y (height) coordinate. Pixel centers follow the
align-corners-false convention: pixel i of n sits at (2i + 1) / n - 1.
"""

import logging
import math
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from .encoder import conv_block, init_conv_block
from .errors import ConfigError, DimensionError
from .params import ParamBuilder, ParamScope
from .tensor_core import (Tensor, channel_slice, concat_channel, conv1x1, conv2d, pixel_shuffle,
                          record, sigmoid, softmax_channel, tanh, upsample_nearest)

logger = logging.getLogger(__name__)

OFFSET_SCALE = 0.5


@dataclass(frozen=True)
class UpsampleConfig:
    """Settings shared by both sampling pathways.

    Attributes:
        scale: Upsampling factor s.
        groups: Number of channel groups g, each with its own offset field.
        sample_points: Sampling coordinates per output location and group.
    """
    scale: int = 2
    groups: int = 4
    sample_points: int = 1

    def validate(self, channels: int):
        if self.scale < 1 or self.groups < 1:
            raise ConfigError(f"scale and groups must be positive, got s={self.scale} g={self.groups}")
        if self.sample_points != 1:
            raise ConfigError(f"sample_points must be 1, got {self.sample_points}")
        if channels % self.groups:
            raise DimensionError(f"{channels} channels not divisible by groups g={self.groups}")
        if channels % (self.scale * self.scale):
            raise DimensionError(f"{channels} channels not divisible by s^2={self.scale ** 2}")

    def exchange_groups(self, channels: int) -> int:
        """Grid groups of the exchange pathway, which samples C / s^2 channels."""
        return math.gcd(self.groups, channels // (self.scale * self.scale))


# --- Grid sampling ---


def base_grid(batch: int, groups: int, h: int, w: int) -> Tensor:
    """Identity sampling grid I at output resolution (h, w)."""
    xs = (2.0 * np.arange(w) + 1.0) / w - 1.0
    ys = (2.0 * np.arange(h) + 1.0) / h - 1.0
    grid = np.empty((batch, 2 * groups, h, w))
    grid[:, 0::2] = xs[None, None, None, :]
    grid[:, 1::2] = ys[None, None, :, None]
    return Tensor(grid)


def _axis_weights(coord: np.ndarray, size: int):
    """Corner indices, interpolation fraction and d(pixel)/d(coord) along one axis.

    Coordinates beyond the border are clamped and get zero derivative.
    """
    pixel = ((coord + 1.0) * size - 1.0) / 2.0
    inside = (pixel >= 0.0) & (pixel <= size - 1)
    clamped = np.clip(pixel, 0.0, size - 1)
    i0 = np.minimum(np.floor(clamped).astype(np.int64), size - 1)
    i1 = np.minimum(i0 + 1, size - 1)
    return i0, i1, clamped - i0, np.where(inside, size / 2.0, 0.0)


def grid_sample(x: Tensor, grid: Tensor) -> Tensor:
    """Bilinear sampling of `x` at normalized grid coordinates, border clamped.

    Args:
        x: Input of shape (B, C, H, W), C divisible by the group count.
        grid: Coordinates of shape (B, 2g, H_out, W_out).

    Returns:
        Tensor of shape (B, C, H_out, W_out); channel group j is sampled with
        grid channels (2j, 2j + 1).
    """
    b, c, h, w = x.shape
    if grid.ndim != 4 or grid.shape[0] != b or grid.shape[1] % 2:
        raise DimensionError(f"grid_sample: grid shape {grid.shape} does not fit input {x.shape}")
    groups = grid.shape[1] // 2
    if c % groups:
        raise DimensionError(f"grid_sample: {c} channels not divisible by {groups} grid groups")
    cg = c // groups
    out_h, out_w = grid.shape[2:]
    xt = x.data.transpose(0, 2, 3, 1)
    bidx = np.broadcast_to(np.arange(b)[:, None, None], (b, out_h, out_w))
    out = np.empty((b, c, out_h, out_w))
    saved = []
    for j in range(groups):
        sl = slice(j * cg, (j + 1) * cg)
        x0, x1, fx, dx = _axis_weights(grid.data[:, 2 * j], w)
        y0, y1, fy, dy = _axis_weights(grid.data[:, 2 * j + 1], h)
        xs = xt[..., sl]
        v00, v01 = xs[bidx, y0, x0], xs[bidx, y0, x1]
        v10, v11 = xs[bidx, y1, x0], xs[bidx, y1, x1]
        fxe, fye = fx[..., None], fy[..., None]
        top = (1.0 - fxe) * v00 + fxe * v01
        bottom = (1.0 - fxe) * v10 + fxe * v11
        out[:, sl] = ((1.0 - fye) * top + fye * bottom).transpose(0, 3, 1, 2)
        saved.append((sl, x0, x1, fx, dx, y0, y1, fy, dy, v00, v01, v10, v11))

    def vjp(g):
        grad_xt = np.zeros((b, h, w, c))
        grad_grid = np.zeros(grid.shape)
        for j, (sl, x0, x1, fx, dx, y0, y1, fy, dy, v00, v01, v10, v11) in enumerate(saved):
            go = g[:, sl].transpose(0, 2, 3, 1)
            target = grad_xt[..., sl]
            for yy, xx, weight in ((y0, x0, (1.0 - fy) * (1.0 - fx)), (y0, x1, (1.0 - fy) * fx),
                                   (y1, x0, fy * (1.0 - fx)), (y1, x1, fy * fx)):
                np.add.at(target, (bidx, yy, xx), go * weight[..., None])
            fxe, fye = fx[..., None], fy[..., None]
            d_fx = (1.0 - fye) * (v01 - v00) + fye * (v11 - v10)
            d_fy = (1.0 - fxe) * (v10 - v00) + fxe * (v11 - v01)
            grad_grid[:, 2 * j] = (go * d_fx).sum(axis=-1) * dx
            grad_grid[:, 2 * j + 1] = (go * d_fy).sum(axis=-1) * dy
        return grad_xt.transpose(0, 3, 1, 2), grad_grid

    return record("grid_sample", (x, grid), out, vjp)


# --- Pathways ---


def offset_field(x: Tensor, params: ParamScope) -> Tensor:
    """0.5 * sigmoid(gate(x)) * tanh(magnitude(x)); every entry lies in (-0.5, 0.5)."""
    gate = sigmoid(conv1x1(x, params["gate.weight"], params["gate.bias"]))
    magnitude = tanh(conv1x1(x, params["magnitude.weight"], params["magnitude.bias"]))
    return gate * magnitude * OFFSET_SCALE


def native_space_pathway(x: Tensor, params: ParamScope, cfg: UpsampleConfig) -> Tensor:
    """Deformable bilinear upsampling of each channel group by a factor s.

    Offsets are predicted at input resolution with 2g s^2 channels and
    pixel-shuffled to (B, 2g, sH, sW) before being added to the base grid.
    """
    b, c, h, w = x.shape
    if c % cfg.groups:
        raise DimensionError(f"native_space_pathway: {c} channels not divisible by g={cfg.groups}")
    s = cfg.scale
    offsets = pixel_shuffle(offset_field(x, params), s)
    grid = base_grid(b, cfg.groups, s * h, s * w) + offsets
    return grid_sample(x, grid)


def space_channel_pathway(x: Tensor, params: ParamScope, cfg: UpsampleConfig) -> Tensor:
    """Pixel shuffle first, deformable resampling at the new resolution, then a
    learned 1x1 projection from C / s^2 back to C channels."""
    b, c, h, w = x.shape
    cfg.validate(c)
    s = cfg.scale
    shuffled = pixel_shuffle(x, s)
    groups = cfg.exchange_groups(c)
    grid = base_grid(b, groups, s * h, s * w) + offset_field(shuffled, params)
    sampled = grid_sample(shuffled, grid)
    return conv1x1(sampled, params["proj.weight"], params["proj.bias"])


def fusion_weights(f1: Tensor, f2: Tensor, params: ParamScope) -> Tuple[Tensor, Tensor]:
    """Two-way softmax over a 3x3 conv of [f1, f2]; returns (w1, w2), each (B, 1, H, W)."""
    if f1.shape != f2.shape:
        raise DimensionError(f"adaptive_fuse: shapes {f1.shape} and {f2.shape} differ")
    logits = conv2d(concat_channel([f1, f2]), params["weight"], params["bias"], stride=1, pad=1)
    weights = softmax_channel(logits)
    return channel_slice(weights, 0, 1), channel_slice(weights, 1, 2)


def adaptive_fuse(f1: Tensor, f2: Tensor, params: ParamScope) -> Tensor:
    """Per-pixel convex combination w1 * f1 + w2 * f2."""
    w1, w2 = fusion_weights(f1, f2, params)
    return w1 * f1 + w2 * f2


def upsample(carry: Tensor, params: ParamScope, cfg: UpsampleConfig, learnable: bool) -> Tensor:
    """Upsamples the carry and adjusts its channels to the skip width.

    With the learnable decoder both pathways run and are fused; otherwise a
    nearest-neighbour x s upsample stands in for them.
    """
    if learnable:
        f1 = native_space_pathway(carry, params.scope("native"), cfg)
        f2 = space_channel_pathway(carry, params.scope("exchange"), cfg)
        up = adaptive_fuse(f1, f2, params.scope("fuse"))
    else:
        up = upsample_nearest(carry, cfg.scale)
    return conv1x1(up, params["adjust.weight"], params["adjust.bias"])


def decode_stage(carry: Tensor, skip: Tensor, params: ParamScope, cfg: UpsampleConfig,
                 learnable: bool = True) -> Tensor:
    """up = upsample(carry); out = conv_block(concat([up, skip])).

    Raises:
        DimensionError: If the upsampled carry does not match the skip.
    """
    up = upsample(carry, params.scope("up"), cfg, learnable)
    if up.shape[0] != skip.shape[0] or up.shape[2:] != skip.shape[2:]:
        raise DimensionError(f"decode_stage: upsampled carry {up.shape} does not match skip {skip.shape}")
    return conv_block(concat_channel([up, skip]), params.scope("block"))


# --- Initialization ---


def init_upsample(builder: ParamBuilder, prefix: str, c_carry: int, c_skip: int,
                  cfg: UpsampleConfig, learnable: bool):
    """Registers upsampling parameters; offset and fusion layers start at zero."""
    if learnable:
        cfg.validate(c_carry)
        s2 = cfg.scale * cfg.scale
        for pathway, c_in, c_off in (("native", c_carry, 2 * cfg.groups * s2),
                                     ("exchange", c_carry // s2, 2 * cfg.exchange_groups(c_carry))):
            for layer in ("gate", "magnitude"):
                builder.zeros(f"{prefix}.{pathway}.{layer}.weight", (c_off, c_in))
                builder.zeros(f"{prefix}.{pathway}.{layer}.bias", (c_off,))
        builder.kaiming(f"{prefix}.exchange.proj.weight", (c_carry, c_carry // s2))
        builder.zeros(f"{prefix}.exchange.proj.bias", (c_carry,))
        builder.zeros(f"{prefix}.fuse.weight", (2, 2 * c_carry, 3, 3))
        builder.zeros(f"{prefix}.fuse.bias", (2,))
    builder.kaiming(f"{prefix}.adjust.weight", (c_skip, c_carry))
    builder.zeros(f"{prefix}.adjust.bias", (c_skip,))


def init_decode_stage(builder: ParamBuilder, prefix: str, c_carry: int, c_skip: int,
                      cfg: UpsampleConfig, learnable: bool):
    init_upsample(builder, f"{prefix}.up", c_carry, c_skip, cfg, learnable)
    init_conv_block(builder, f"{prefix}.block", 2 * c_skip, c_skip)
