"""
Network Assembly for frequnet
This module wires the stem, the frequency encoder stages, the bottleneck,
the learnable decoder stages, the segmentation head and the optional
deep-supervision heads into one forward pass, and provides parameter
initialization, the deep-supervision loss and parameter-count audits.
"""

import logging
from typing import List, Optional, Tuple

import numpy as np

from .encoder import conv_block, encode_stage, init_conv_block, init_encode_stage
from .errors import ConfigError, DimensionError
from .losses import LossReport, LossWeights, combine_reports, total_loss
from .params import ModelParams, ParamBuilder
from .run_config import ArchConfig, RunConfig, Switches
from .sld import UpsampleConfig, decode_stage, init_decode_stage
from .tensor_core import Tape, Tensor, conv1x1
from .wavelet import WaveletSpec

logger = logging.getLogger(__name__)


def upsample_config(arch: ArchConfig) -> UpsampleConfig:
    return UpsampleConfig(scale=arch.scale, groups=arch.groups)


def init_params(cfg: RunConfig, seed: Optional[int] = None) -> ModelParams:
    """Deterministic initialization; the key set depends only on arch and switches.

    Convolution and projection weights are Kaiming-uniform, biases zero,
    norm scales one; offset and fusion layers of the decoder are zero.
    """
    arch, switches = cfg.arch, cfg.switches
    arch.validate()
    builder = ParamBuilder(cfg.train.seed if seed is None else seed)
    ucfg = upsample_config(arch)
    init_conv_block(builder, "stem", arch.in_channels, arch.base_width)
    for i in range(1, arch.depth + 1):
        init_encode_stage(builder, f"enc{i}", arch.stage_width(i), switches)
    deepest = 2 * arch.stage_width(arch.depth)
    init_conv_block(builder, "bottleneck", deepest, deepest)
    for i in range(arch.depth, 0, -1):
        init_decode_stage(builder, f"dec{i}", 2 * arch.stage_width(i), arch.stage_width(i), ucfg, switches.sld)
    builder.kaiming("head.weight", (arch.num_classes, arch.base_width))
    builder.zeros("head.bias", (arch.num_classes,))
    if switches.deep_supervision:
        for i in range(arch.depth, 1, -1):
            builder.kaiming(f"aux{i}.weight", (arch.num_classes, arch.stage_width(i)))
            builder.zeros(f"aux{i}.bias", (arch.num_classes,))
    params = builder.build()
    logger.debug("initialized params tensors=%d scalars=%d", len(params), params.count())
    return params


def forward(x: Tensor, params: ModelParams, cfg: RunConfig) -> Tuple[Tensor, List[Tensor]]:
    """Runs the network.

    Args:
        x: Images of shape (B, in_channels, H, W), H and W multiples of 2^depth.
        params: Parameters from `init_params` (or a checkpoint).
        cfg: Run configuration; only arch and switches are read.

    Returns:
        (logits (B, K, H, W), auxiliary logits ordered coarse to fine).
    """
    arch, switches = cfg.arch, cfg.switches
    if x.ndim != 4 or x.shape[1] != arch.in_channels:
        raise DimensionError(f"forward expects (B, {arch.in_channels}, H, W) input, got {x.shape}")
    multiple = arch.multiple()
    if x.shape[2] % multiple or x.shape[3] % multiple:
        raise ConfigError(f"input spatial shape {x.shape[2:]} must be a multiple of 2^depth={multiple}")
    ucfg = upsample_config(arch)

    h = conv_block(x, params.scope("stem"))
    skips = []
    for i in range(1, arch.depth + 1):
        stage = encode_stage(h, params.scope(f"enc{i}"), arch, switches)
        skips.append(stage.skip)
        h = stage.carry
    h = conv_block(h, params.scope("bottleneck"))

    aux = []
    for i in range(arch.depth, 0, -1):
        h = decode_stage(h, skips[i - 1], params.scope(f"dec{i}"), ucfg, switches.sld)
        if switches.deep_supervision and i > 1:
            aux.append(conv1x1(h, params[f"aux{i}.weight"], params[f"aux{i}.bias"]))
    logits = conv1x1(h, params["head.weight"], params["head.bias"])
    return logits, aux


def predict(x: Tensor, params: ModelParams, cfg: RunConfig) -> np.ndarray:
    """Hard labels (B, H, W) by argmax over the main logits."""
    logits, _ = forward(x, params, cfg)
    return logits.data.argmax(axis=1)


def downsample_labels(labels: np.ndarray, factor: int) -> np.ndarray:
    """Nearest-neighbour label downsampling; keeps the top-left label of each block."""
    labels = np.asarray(labels)
    if labels.shape[1] % factor or labels.shape[2] % factor:
        raise DimensionError(f"labels {labels.shape[1:]} not divisible by factor {factor}")
    return labels[:, ::factor, ::factor]


def supervised_loss(logits: Tensor, aux: List[Tensor], labels: np.ndarray, weights: LossWeights,
                    spec: WaveletSpec) -> LossReport:
    """Main composite loss plus sum_j 2^-(j+1) * aux loss j (coarse to fine).

    Auxiliary heads see labels downsampled to their resolution and drop the
    frequency term.
    """
    main = total_loss(logits, labels, weights, spec)
    if not aux:
        return main
    aux_weights = weights.without_freq()
    terms = []
    for j, head in enumerate(aux):
        factor = logits.shape[2] // head.shape[2]
        report = total_loss(head, downsample_labels(labels, factor), aux_weights, spec)
        terms.append((2.0 ** -(j + 1), report))
    return combine_reports(main, tuple(terms))


# --- Parameter audits ---


def _conv_block_count(c_in: int, c_out: int) -> int:
    return 9 * c_in * c_out + 9 * c_out * c_out + 6 * c_out


def parameter_count(arch: ArchConfig, switches: Switches) -> int:
    """Closed-form scalar parameter count per block."""
    ucfg = upsample_config(arch)
    k = arch.num_classes
    total = _conv_block_count(arch.in_channels, arch.base_width)
    for i in range(1, arch.depth + 1):
        c = arch.stage_width(i)
        total += _conv_block_count(c, c) + 2 * c * (4 * c if switches.db_down else c) + 2 * c
    deepest = 2 * arch.stage_width(arch.depth)
    total += _conv_block_count(deepest, deepest)
    s2 = ucfg.scale ** 2
    for i in range(1, arch.depth + 1):
        skip = arch.stage_width(i)
        carry = 2 * skip
        if switches.sld:
            native_off = 2 * ucfg.groups * s2
            exchange_off = 2 * ucfg.exchange_groups(carry)
            total += 2 * (native_off * carry + native_off)
            total += 2 * (exchange_off * (carry // s2) + exchange_off)
            total += carry * (carry // s2) + carry
            total += 2 * 2 * carry * 9 + 2
        total += skip * carry + skip
        total += _conv_block_count(2 * skip, skip)
    total += k * arch.base_width + k
    if switches.deep_supervision:
        total += sum(k * arch.stage_width(i) + k for i in range(2, arch.depth + 1))
    return total


def count_reached_parameters(params: ModelParams, cfg: RunConfig) -> int:
    """Counts scalars of every parameter the recorded forward graph consumes."""
    side = 2 * cfg.arch.multiple()
    x = Tensor(np.zeros((1, cfg.arch.in_channels, side, side)))
    by_id = {id(t): t for t in params.values()}
    seen = {}
    with Tape() as tape:
        forward(x, params, cfg)
        for node in tape.nodes:
            for inp in node.inputs:
                if id(inp) in by_id:
                    seen[id(inp)] = inp.size
    return int(sum(seen.values()))
