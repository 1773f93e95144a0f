"""
Finite-difference gradient checking for frequnet
Compares the tape's vector-Jacobian products with central differences. Each
case builds a function of named leaf arrays; the function output is reduced
with a fixed random cotangent so every output entry is exercised.

The relative error of one coordinate is |analytic - numeric| / max(1, |numeric|).
A coordinate that fails at step h is retried at h / 100 and keeps the smaller
error, which absorbs kinks (leaky ReLU, |.|, bilinear cell edges) that a
random point happens to straddle.
"""

import logging
from dataclasses import dataclass
from typing import Callable, Dict, List, Mapping, Optional, Tuple

import numpy as np

from .encoder import conv_block, encode_stage, init_conv_block, init_encode_stage
from .losses import LossWeights, dice_loss, freq_aware_loss, one_hot, topk_ce_loss, total_loss
from .network import forward, init_params, supervised_loss
from .params import ModelParams, ParamBuilder
from .run_config import ArchConfig, RunConfig, Switches
from .sld import (UpsampleConfig, adaptive_fuse, decode_stage, grid_sample, init_decode_stage,
                  native_space_pathway, space_channel_pathway)
from .spectral import SubbandPolicy, flc_block, lowpass_filter
from .tensor_core import (Tape, Tensor, add, avg_pool2, channel_slice, concat_channel, conv1x1, conv2d, div,
                          instance_norm, leaky_relu, linear, log_softmax_channel, mul, parameter, pixel_shuffle,
                          pixel_unshuffle, sigmoid, softmax_channel, tanh, upsample_nearest)
from .wavelet import WaveletSpec, dwt2_stacked, synthesis_stacked

logger = logging.getLogger(__name__)

OP_THRESHOLD = 1e-3
END_TO_END_THRESHOLD = 1e-2
STEP = 1e-4

Leaves = Mapping[str, Tensor]
CaseFn = Callable[[Leaves], Tensor]


@dataclass(frozen=True)
class GradcheckResult:
    name: str
    max_rel_error: float
    threshold: float
    checked: int

    @property
    def passed(self) -> bool:
        return bool(self.max_rel_error < self.threshold)


@dataclass(frozen=True)
class GradcheckCase:
    """A named check: `build(rng)` returns the function and its leaf arrays."""
    name: str
    build: Callable[[np.random.Generator], Tuple[CaseFn, Dict[str, np.ndarray]]]
    threshold: float = OP_THRESHOLD
    max_coords: Optional[int] = None


def relative_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(1.0, abs(numeric))


def check_function(name: str, fn: CaseFn, inputs: Dict[str, np.ndarray], threshold: float = OP_THRESHOLD,
                   h: float = STEP, max_coords: Optional[int] = None, seed: int = 0) -> GradcheckResult:
    """Checks every (or a random subset of) input coordinate of `fn`."""
    rng = np.random.default_rng(seed)
    leaves = {key: parameter(value) for key, value in inputs.items()}
    with Tape() as tape:
        out = fn(leaves)
    cotangent = rng.standard_normal(out.shape)
    grads = tape.backward(output=out, seed=cotangent)

    def objective(arrays: Dict[str, np.ndarray]) -> float:
        return float((fn({k: Tensor(v) for k, v in arrays.items()}).data * cotangent).sum())

    coords = [(key, idx) for key, value in inputs.items() for idx in np.ndindex(value.shape)]
    if max_coords is not None and len(coords) > max_coords:
        picks = np.sort(rng.choice(len(coords), size=max_coords, replace=False))
        coords = [coords[i] for i in picks]

    work = {key: np.array(value, dtype=np.float64) for key, value in inputs.items()}
    worst = 0.0
    for key, idx in coords:
        leaf = leaves[key]
        analytic = float(grads.array(leaf)[idx]) if leaf in grads else 0.0
        err = None
        for step in (h, h * 1e-2):
            original = work[key][idx]
            work[key][idx] = original + step
            plus = objective(work)
            work[key][idx] = original - step
            minus = objective(work)
            work[key][idx] = original
            e = relative_error(analytic, (plus - minus) / (2.0 * step))
            err = e if err is None else min(err, e)
            if err < threshold:
                break
        worst = max(worst, err)
    result = GradcheckResult(name=name, max_rel_error=worst, threshold=threshold, checked=len(coords))
    logger.debug("gradcheck op=%s worst=%.3e checked=%d", name, worst, len(coords))
    return result


# --- Cases ---


def _away_from_zero(rng: np.random.Generator, shape) -> np.ndarray:
    return rng.uniform(0.1, 1.0, size=shape) * rng.choice([-1.0, 1.0], size=shape)


def _scope_params(leaves: Leaves, prefix: str) -> ModelParams:
    return ModelParams({k: v for k, v in leaves.items() if k.startswith(prefix + ".")})


def _jittered(params: ModelParams, rng: np.random.Generator, scale: float = 0.3) -> Dict[str, np.ndarray]:
    """Parameter arrays with all-zero tensors replaced by small random values."""
    return {name: (t.numpy() if t.data.any() else scale * rng.standard_normal(t.shape))
            for name, t in params.items()}


def _case_conv2d(rng):
    inputs = {"x": rng.standard_normal((1, 2, 5, 5)), "w": rng.standard_normal((3, 2, 3, 3)),
              "b": rng.standard_normal(3)}
    return (lambda p: conv2d(p["x"], p["w"], p["b"], stride=1, pad=1)), inputs


def _case_conv2d_stride2(rng):
    inputs = {"x": rng.standard_normal((1, 2, 6, 6)), "w": rng.standard_normal((2, 2, 3, 3))}
    return (lambda p: conv2d(p["x"], p["w"], None, stride=2, pad=1)), inputs


def _case_instance_norm(rng):
    inputs = {"x": rng.standard_normal((2, 3, 4, 4)), "gamma": rng.standard_normal(3),
              "beta": rng.standard_normal(3)}
    return (lambda p: instance_norm(p["x"], 1e-5, p["gamma"], p["beta"])), inputs


def _case_leaky_relu(rng):
    return (lambda p: leaky_relu(p["x"], 0.01)), {"x": _away_from_zero(rng, (2, 3, 3, 3))}


def _case_unary(op):
    def build(rng):
        return (lambda p: op(p["x"])), {"x": rng.standard_normal((1, 3, 4, 4))}
    return build


def _case_elementwise(rng):
    inputs = {"a": rng.standard_normal((1, 3, 4, 4)), "b": rng.uniform(1.0, 2.0, size=(1, 1, 4, 4)),
              "c": rng.standard_normal((3, 1, 1))}
    return (lambda p: div(add(mul(p["a"], p["c"]), p["b"]), p["b"])), inputs


def _case_linear(rng):
    inputs = {"x": rng.standard_normal((2, 4)), "w": rng.standard_normal((3, 4)), "b": rng.standard_normal(3)}
    return (lambda p: linear(p["x"], p["w"], p["b"])), inputs


def _case_conv1x1(rng):
    inputs = {"x": rng.standard_normal((1, 4, 3, 3)), "w": rng.standard_normal((5, 4)), "b": rng.standard_normal(5)}
    return (lambda p: conv1x1(p["x"], p["w"], p["b"])), inputs


def _case_layout(rng):
    inputs = {"a": rng.standard_normal((1, 2, 4, 4)), "b": rng.standard_normal((1, 6, 4, 4))}

    def fn(p):
        joined = concat_channel([p["a"], p["b"]])
        shuffled = pixel_shuffle(channel_slice(joined, 0, 8), 2)
        return pixel_unshuffle(upsample_nearest(avg_pool2(shuffled), 2), 2)

    return fn, inputs


def _case_dwt2(rng):
    spec = WaveletSpec.daubechies(2)
    return (lambda p: dwt2_stacked(p["x"], spec)), {"x": rng.standard_normal((1, 2, 8, 8))}


def _case_idwt2(rng):
    spec = WaveletSpec.daubechies(4)
    return (lambda p: synthesis_stacked(p["s"], spec)), {"s": rng.standard_normal((1, 8, 4, 4))}


def _case_lowpass(rng):
    return (lambda p: lowpass_filter(p["x"], 0.25)), {"x": rng.standard_normal((1, 2, 8, 8))}


def _case_flc(rng):
    spec = WaveletSpec.daubechies(2)
    return ((lambda p: flc_block(p["x"], 0.25, spec, SubbandPolicy.LL_ONLY).stacked()),
            {"x": rng.standard_normal((1, 1, 8, 8))})


def _case_grid_sample(rng):
    inputs = {"x": rng.standard_normal((1, 4, 4, 4)), "grid": rng.uniform(-1.1, 1.1, size=(1, 4, 6, 6))}
    return (lambda p: grid_sample(p["x"], p["grid"])), inputs


def _sld_params(rng, build) -> Dict[str, np.ndarray]:
    builder = ParamBuilder(int(rng.integers(1 << 31)))
    build(builder)
    return _jittered(builder.build(), rng)


def _case_native(rng):
    cfg = UpsampleConfig(scale=2, groups=2)
    inputs = {"x": rng.standard_normal((1, 4, 4, 4))}
    for layer in ("gate", "magnitude"):
        inputs[f"p.{layer}.weight"] = 0.5 * rng.standard_normal((16, 4))
        inputs[f"p.{layer}.bias"] = 0.5 * rng.standard_normal(16)
    return (lambda p: native_space_pathway(p["x"], _scope_params(p, "p").scope("p"), cfg)), inputs


def _case_exchange(rng):
    cfg = UpsampleConfig(scale=2, groups=2)
    inputs = {"x": rng.standard_normal((1, 8, 4, 4))}
    for layer in ("gate", "magnitude"):
        inputs[f"p.{layer}.weight"] = 0.5 * rng.standard_normal((4, 2))
        inputs[f"p.{layer}.bias"] = 0.5 * rng.standard_normal(4)
    inputs["p.proj.weight"] = rng.standard_normal((8, 2))
    inputs["p.proj.bias"] = rng.standard_normal(8)
    return (lambda p: space_channel_pathway(p["x"], _scope_params(p, "p").scope("p"), cfg)), inputs


def _case_fuse(rng):
    inputs = {"f1": rng.standard_normal((1, 3, 4, 4)), "f2": rng.standard_normal((1, 3, 4, 4)),
              "p.weight": 0.3 * rng.standard_normal((2, 6, 3, 3)), "p.bias": rng.standard_normal(2)}
    return (lambda p: adaptive_fuse(p["f1"], p["f2"], _scope_params(p, "p").scope("p"))), inputs


def _case_conv_block(rng):
    inputs = _sld_params(rng, lambda b: init_conv_block(b, "p", 2, 3))
    inputs["x"] = rng.standard_normal((1, 2, 4, 4))
    return (lambda p: conv_block(p["x"], _scope_params(p, "p").scope("p"))), inputs


def _case_encode_stage(rng):
    arch = ArchConfig(wavelet_order=2, tau=0.25)
    switches = Switches()
    inputs = _sld_params(rng, lambda b: init_encode_stage(b, "p", 2, switches))
    inputs["x"] = rng.standard_normal((1, 2, 8, 8))
    return (lambda p: encode_stage(p["x"], _scope_params(p, "p").scope("p"), arch, switches).carry), inputs


def _case_decode_stage(rng):
    cfg = UpsampleConfig(scale=2, groups=2)
    inputs = _sld_params(rng, lambda b: init_decode_stage(b, "p", 8, 4, cfg, True))
    inputs["carry"] = rng.standard_normal((1, 8, 4, 4))
    inputs["skip"] = rng.standard_normal((1, 4, 8, 8))
    return (lambda p: decode_stage(p["carry"], p["skip"], _scope_params(p, "p").scope("p"), cfg)), inputs


def _loss_inputs(rng):
    labels = rng.integers(0, 2, size=(1, 8, 8))
    return labels, {"logits": rng.standard_normal((1, 2, 8, 8))}


def _case_freq_loss(rng):
    labels, inputs = _loss_inputs(rng)
    spec = WaveletSpec.daubechies(2)
    return (lambda p: freq_aware_loss(softmax_channel(p["logits"]), one_hot(labels, 2), spec)), inputs


def _case_dice_loss(rng):
    labels, inputs = _loss_inputs(rng)
    return (lambda p: dice_loss(softmax_channel(p["logits"]), one_hot(labels, 2))), inputs


def _case_topk_loss(rng):
    labels, inputs = _loss_inputs(rng)
    return (lambda p: topk_ce_loss(p["logits"], labels, 25.0)), inputs


def _case_total_loss(rng):
    labels, inputs = _loss_inputs(rng)
    weights, spec = LossWeights(1.0, 1.0, 0.5), WaveletSpec.daubechies(4)
    return (lambda p: total_loss(p["logits"], labels, weights, spec).loss), inputs


def end_to_end_config() -> RunConfig:
    return RunConfig(arch=ArchConfig(depth=2, base_width=4, num_classes=3, groups=4))


def _case_end_to_end(rng):
    cfg = end_to_end_config()
    params = init_params(cfg, seed=int(rng.integers(1 << 31)))
    inputs = _jittered(params, rng, scale=0.1)
    x = Tensor(rng.standard_normal((1, 1, 16, 16)))
    labels = rng.integers(0, cfg.arch.num_classes, size=(1, 16, 16))
    spec = WaveletSpec.daubechies(cfg.arch.wavelet_order)

    def fn(p):
        logits, aux = forward(x, ModelParams(p), cfg)
        return supervised_loss(logits, aux, labels, cfg.effective_loss(), spec).loss

    return fn, inputs


CASES: Dict[str, GradcheckCase] = {case.name: case for case in (
    GradcheckCase("conv2d", _case_conv2d),
    GradcheckCase("conv2d_stride2", _case_conv2d_stride2),
    GradcheckCase("instance_norm", _case_instance_norm),
    GradcheckCase("leaky_relu", _case_leaky_relu),
    GradcheckCase("sigmoid", _case_unary(sigmoid)),
    GradcheckCase("tanh", _case_unary(tanh)),
    GradcheckCase("softmax_channel", _case_unary(softmax_channel)),
    GradcheckCase("log_softmax_channel", _case_unary(log_softmax_channel)),
    GradcheckCase("elementwise", _case_elementwise),
    GradcheckCase("linear", _case_linear),
    GradcheckCase("conv1x1", _case_conv1x1),
    GradcheckCase("layout", _case_layout),
    GradcheckCase("dwt2", _case_dwt2),
    GradcheckCase("idwt2", _case_idwt2),
    GradcheckCase("lowpass_filter", _case_lowpass),
    GradcheckCase("flc_block", _case_flc),
    GradcheckCase("grid_sample", _case_grid_sample),
    GradcheckCase("native_space_pathway", _case_native),
    GradcheckCase("space_channel_pathway", _case_exchange),
    GradcheckCase("adaptive_fuse", _case_fuse),
    GradcheckCase("conv_block", _case_conv_block),
    GradcheckCase("encode_stage", _case_encode_stage),
    GradcheckCase("decode_stage", _case_decode_stage, max_coords=200),
    GradcheckCase("freq_aware_loss", _case_freq_loss),
    GradcheckCase("dice_loss", _case_dice_loss),
    GradcheckCase("topk_ce_loss", _case_topk_loss),
    GradcheckCase("total_loss", _case_total_loss),
    GradcheckCase("end_to_end", _case_end_to_end, threshold=END_TO_END_THRESHOLD, max_coords=120),
)}


def run_case(case: GradcheckCase, seed: int = 0) -> GradcheckResult:
    rng = np.random.default_rng(seed)
    fn, inputs = case.build(rng)
    return check_function(case.name, fn, inputs, case.threshold, max_coords=case.max_coords, seed=seed)


def run_suite(names: Optional[List[str]] = None, seed: int = 0) -> List[GradcheckResult]:
    """Runs the named cases (all registered cases by default)."""
    selected = list(CASES) if not names else names
    results = []
    for name in selected:
        result = run_case(CASES[name], seed)
        level = logging.INFO if result.passed else logging.WARNING
        logger.log(level, "gradcheck op=%s worst=%.3e threshold=%.0e passed=%s",
                   name, result.max_rel_error, result.threshold, result.passed)
        results.append(result)
    return results
