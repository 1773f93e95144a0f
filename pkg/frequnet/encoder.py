"""
Encoder Module for frequnet
This module implements the frequency-domain encoder: the shared convolution
block and the encoder stage, which runs the block and then downsamples the
result through the wavelet/Fourier low-pass calibration.
"""

import logging
from dataclasses import dataclass

from .errors import DimensionError
from .params import ParamBuilder, ParamScope
from .run_config import ArchConfig, Switches
from .spectral import flc_block, lowpass_filter
from .tensor_core import Tensor, avg_pool2, conv1x1, conv2d, instance_norm, leaky_relu
from .wavelet import WaveletSpec, dwt2

logger = logging.getLogger(__name__)

LEAKY_SLOPE = 0.01
NORM_EPS = 1e-5


@dataclass(frozen=True)
class EncoderStageOutput:
    """Result of one encoder stage.

    Attributes:
        skip: Pre-downsampling features, (B, C, H, W).
        carry: Downsampled features passed to the next stage, (B, 2C, H/2, W/2).
    """
    skip: Tensor
    carry: Tensor

    def __post_init__(self):
        b, c, h, w = self.skip.shape
        if self.carry.shape != (b, 2 * c, h // 2, w // 2):
            raise DimensionError(f"carry shape {self.carry.shape} does not follow skip shape {self.skip.shape}")


def init_conv_block(builder: ParamBuilder, prefix: str, c_in: int, c_out: int):
    """Registers the parameters of one conv_block under `prefix`."""
    for r, cin in ((1, c_in), (2, c_out)):
        builder.kaiming(f"{prefix}.conv{r}.weight", (c_out, cin, 3, 3))
        builder.zeros(f"{prefix}.conv{r}.bias", (c_out,))
        builder.ones(f"{prefix}.norm{r}.weight", (c_out,))
        builder.zeros(f"{prefix}.norm{r}.bias", (c_out,))


def init_encode_stage(builder: ParamBuilder, prefix: str, channels: int, switches: Switches):
    init_conv_block(builder, f"{prefix}.block", channels, channels)
    down_in = 4 * channels if switches.db_down else channels
    builder.kaiming(f"{prefix}.down.weight", (2 * channels, down_in))
    builder.zeros(f"{prefix}.down.bias", (2 * channels,))


def conv_block(x: Tensor, params: ParamScope) -> Tensor:
    """Two rounds of 3x3 conv (pad 1) -> instance norm -> leaky ReLU.

    Args:
        x: Input of shape (B, C_in, H, W).
        params: Scope holding conv{1,2}.weight/bias and norm{1,2}.weight/bias.

    Returns:
        Tensor of shape (B, C_out, H, W).
    """
    for r in (1, 2):
        x = conv2d(x, params[f"conv{r}.weight"], params[f"conv{r}.bias"], stride=1, pad=1)
        x = instance_norm(x, NORM_EPS, params[f"norm{r}.weight"], params[f"norm{r}.bias"])
        x = leaky_relu(x, LEAKY_SLOPE)
    return x


def downsample(skip: Tensor, params: ParamScope, arch: ArchConfig, switches: Switches) -> Tensor:
    """Halves the resolution of `skip` and doubles its channels.

    With DB downsampling the four subbands (FLC-calibrated when FLC is on)
    are channel-stacked and projected 4C -> 2C. Without it the skip is
    average-pooled and projected C -> 2C; `arch.lowpass_pool` adds the
    Fourier low-pass before the pool when FLC is on.
    """
    if switches.db_down:
        spec = WaveletSpec.daubechies(arch.wavelet_order)
        if switches.flc:
            bands = flc_block(skip, arch.tau, spec, arch.subband_policy)
        else:
            bands = dwt2(skip, spec)
        stacked = bands.stacked()
    else:
        source = lowpass_filter(skip, arch.tau) if switches.flc and arch.lowpass_pool else skip
        stacked = avg_pool2(source)
    return conv1x1(stacked, params["weight"], params["bias"])


def encode_stage(x: Tensor, params: ParamScope, arch: ArchConfig, switches: Switches) -> EncoderStageOutput:
    """Runs one encoder stage: skip = conv_block(x), carry = downsample(skip).

    Raises:
        DimensionError: If H or W is odd.
    """
    if x.ndim != 4 or x.shape[2] % 2 or x.shape[3] % 2:
        raise DimensionError(f"encode_stage needs even H and W, got shape {x.shape}")
    skip = conv_block(x, params.scope("block"))
    carry = downsample(skip, params.scope("down"), arch, switches)
    logger.debug("encode_stage skip=%s carry=%s", skip.shape, carry.shape)
    return EncoderStageOutput(skip=skip, carry=carry)
