"""
Tensor Core for frequnet
This module implements the dense tensor value type and a minimal reverse-mode
gradient engine. Every differentiable operation records a node on the active
tape carrying its vector-Jacobian product (VJP); `backward` walks the tape once
in reverse order and returns the gradient of every leaf that requires it.

The operator vocabulary is deliberately closed: it covers exactly what the
frequency encoder, the spatial decoder and the composite loss need.
"""

import logging
import threading
from dataclasses import dataclass
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigError, DimensionError, TapeError

logger = logging.getLogger(__name__)

ArrayLike = Union[np.ndarray, float, int, Sequence[float]]
VJP = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]

# --- Tensor ---


class Tensor:
    """An immutable dense array of float64 scalars.

    Feature maps are rank-4 (batch, channel, height, width); parameters keep
    their natural rank and loss values are rank-0.

    Attributes:
        data: Read-only float64 array holding the values.
        requires_grad: Whether gradients flow back to (or through) this tensor.
    """

    __array_ufunc__ = None

    def __init__(self, data: ArrayLike, requires_grad: bool = False):
        arr = np.array(data, dtype=np.float64)
        arr.setflags(write=False)
        self.data = arr
        self.requires_grad = bool(requires_grad)

    @classmethod
    def _wrap(cls, data: np.ndarray, requires_grad: bool) -> "Tensor":
        """Wraps an op result without a defensive copy."""
        arr = np.asarray(data, dtype=np.float64)
        if not arr.flags.c_contiguous:
            arr = arr.copy()
        arr.setflags(write=False)
        out = cls.__new__(cls)
        out.data = arr
        out.requires_grad = requires_grad
        return out

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        """Returns a writable copy of the values."""
        return self.data.copy()

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __add__(self, other): return add(self, other)
    def __radd__(self, other): return add(other, self)
    def __sub__(self, other): return sub(self, other)
    def __rsub__(self, other): return sub(other, self)
    def __mul__(self, other): return mul(self, other)
    def __rmul__(self, other): return mul(other, self)
    def __truediv__(self, other): return div(self, other)
    def __rtruediv__(self, other): return div(other, self)
    def __neg__(self): return mul(self, -1.0)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return tensor_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return tensor_mean(self, axis=axis, keepdims=keepdims)


def as_tensor(value: Union[Tensor, ArrayLike]) -> Tensor:
    """Returns `value` unchanged if it is a Tensor, else a constant Tensor."""
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def parameter(data: ArrayLike) -> Tensor:
    """Creates a leaf tensor that requires gradients."""
    return Tensor(data, requires_grad=True)


# --- Tape ---


@dataclass
class Node:
    """One recorded operation.

    Attributes:
        op: Operation name, used in diagnostics.
        inputs: Tensors the operation consumed.
        output: Tensor the operation produced.
        vjp: Maps the output cotangent to one cotangent per input (None where
            an input needs no gradient).
    """
    op: str
    inputs: Tuple[Tensor, ...]
    output: Tensor
    vjp: VJP


class GradientMap:
    """Gradients of the leaves reached by a backward pass, keyed by tensor identity."""

    def __init__(self, grads: Dict[int, np.ndarray], leaves: Dict[int, Tensor]):
        self._grads = grads
        self._leaves = leaves

    def __contains__(self, tensor: Tensor) -> bool:
        return id(tensor) in self._grads and self._leaves.get(id(tensor)) is tensor

    def __getitem__(self, tensor: Tensor) -> Tensor:
        if tensor not in self:
            raise KeyError(f"no gradient recorded for {tensor!r}")
        return Tensor._wrap(self._grads[id(tensor)], False)

    def __len__(self) -> int:
        return len(self._grads)

    def get(self, tensor: Tensor, default: Optional[Tensor] = None) -> Optional[Tensor]:
        return self[tensor] if tensor in self else default

    def array(self, tensor: Tensor) -> np.ndarray:
        """Returns the raw gradient array of `tensor`."""
        return self[tensor].data

    def leaves(self) -> Iterator[Tensor]:
        return iter(self._leaves.values())


class Tape:
    """Records operations of one forward pass.

    A tape is used as a context manager; operations executed inside the block
    on tensors that require gradients are appended in execution order, which is
    a topological order. A tape is single-threaded and freed by `backward`.
    """

    def __init__(self):
        self.nodes: List[Node] = []
        self._released = False

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        stack = _tape_stack()
        if stack and stack[-1] is self:
            stack.pop()
        return False

    def record(self, node: Node):
        if self._released:
            raise TapeError("cannot record on a tape that was already consumed by backward()")
        self.nodes.append(node)

    @property
    def output(self) -> Tensor:
        if not self.nodes:
            raise TapeError("tape has no recorded forward pass")
        return self.nodes[-1].output

    def backward(self, output: Optional[Tensor] = None, seed: Optional[ArrayLike] = None) -> GradientMap:
        """Runs reverse-mode accumulation over the recorded nodes.

        Args:
            output: Tensor to differentiate; defaults to the last recorded output.
            seed: Cotangent of `output`; defaults to ones.

        Returns:
            A GradientMap holding one gradient per reached leaf.
        """
        if self._released:
            raise TapeError("tape was already consumed by backward(); record a new forward pass")
        if not self.nodes:
            raise TapeError("backward() called on a tape with no recorded forward pass")
        target = self.output if output is None else output
        if seed is None:
            seed_arr = np.ones(target.shape)
        else:
            seed_arr = np.asarray(seed.data if isinstance(seed, Tensor) else seed, dtype=np.float64)
            if seed_arr.shape != target.shape:
                raise DimensionError(f"seed shape {seed_arr.shape} does not match output shape {target.shape}")

        grads: Dict[int, np.ndarray] = {id(target): seed_arr}
        reached: Dict[int, Tensor] = {}
        for node in reversed(self.nodes):
            g = grads.pop(id(node.output), None)
            if g is None:
                continue
            for inp, gi in zip(node.inputs, node.vjp(g)):
                if gi is None or not inp.requires_grad:
                    continue
                key = id(inp)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
                    reached[key] = inp
        self.nodes.clear()
        self._released = True
        leaves = {key: reached[key] for key in grads if key in reached}
        return GradientMap({key: grads[key] for key in leaves}, leaves)


_state = threading.local()


def _tape_stack() -> List[Tape]:
    stack = getattr(_state, "stack", None)
    if stack is None:
        stack = _state.stack = []
    return stack


def current_tape() -> Optional[Tape]:
    """Returns the innermost active tape of the calling thread, if any."""
    stack = _tape_stack()
    return stack[-1] if stack else None


def backward(tape: Tape, seed: Optional[ArrayLike] = None, output: Optional[Tensor] = None) -> GradientMap:
    """Functional form of `Tape.backward`."""
    return tape.backward(output=output, seed=seed)


def record(op: str, inputs: Sequence[Tensor], data: np.ndarray, vjp: VJP) -> Tensor:
    """Wraps an op result and registers its VJP on the active tape.

    Args:
        op: Operation name.
        inputs: Tensors consumed by the op, in the order `vjp` returns cotangents.
        data: Forward result.
        vjp: Backward rule.

    Returns:
        The output tensor.
    """
    requires = any(t.requires_grad for t in inputs)
    out = Tensor._wrap(data, requires)
    tape = current_tape()
    if requires and tape is not None:
        tape.record(Node(op, tuple(inputs), out, vjp))
    return out


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sums out broadcast dimensions so `grad` matches `shape`."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for dim, size in enumerate(shape):
        if size == 1 and grad.shape[dim] != 1:
            grad = grad.sum(axis=dim, keepdims=True)
    return grad


def _require_rank4(x: Tensor, op: str):
    if x.ndim != 4:
        raise DimensionError(f"{op} expects a (B, C, H, W) tensor, got shape {x.shape}")


# --- Elementwise and reductions ---


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return record("add", (a, b), a.data + b.data,
                  lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return record("sub", (a, b), a.data - b.data,
                  lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return record("mul", (a, b), a.data * b.data,
                  lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data

    def vjp(g):
        return (_unbroadcast(g / b.data, a.shape),
                _unbroadcast(-g * out / b.data, b.shape))

    return record("div", (a, b), out, vjp)


def tensor_sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape),)

    return record("sum", (x,), out, vjp)


def tensor_mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = x.size if axis is None else int(np.prod([x.shape[a] for a in np.atleast_1d(axis)]))
    return mul(tensor_sum(x, axis=axis, keepdims=keepdims), 1.0 / count)


def tensor_abs(x: Tensor) -> Tensor:
    return record("abs", (x,), np.abs(x.data), lambda g: (g * np.sign(x.data),))


def sigmoid(x: Tensor) -> Tensor:
    out = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return record("sigmoid", (x,), out, lambda g: (g * out * (1.0 - out),))


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)
    return record("tanh", (x,), out, lambda g: (g * (1.0 - out * out),))


def leaky_relu(x: Tensor, slope: float = 0.01) -> Tensor:
    """Elementwise max(x, slope * x)."""
    if not 0.0 < slope < 1.0:
        raise ConfigError(f"leaky_relu slope must lie in (0, 1), got {slope}")
    factor = np.where(x.data > 0.0, 1.0, slope)
    return record("leaky_relu", (x,), x.data * factor, lambda g: (g * factor,))


def softmax_channel(x: Tensor) -> Tensor:
    """Softmax over axis 1 (channels)."""
    shifted = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=1, keepdims=True)

    def vjp(g):
        return (out * (g - (g * out).sum(axis=1, keepdims=True)),)

    return record("softmax_channel", (x,), out, vjp)


def log_softmax_channel(x: Tensor) -> Tensor:
    """Log-softmax over axis 1 (channels)."""
    shifted = x.data - x.data.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    out = shifted - logsum
    prob = np.exp(out)

    def vjp(g):
        return (g - prob * g.sum(axis=1, keepdims=True),)

    return record("log_softmax_channel", (x,), out, vjp)


# --- Linear maps ---


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """Applies y = x W^T + b over the last axis of `x`.

    Args:
        x: Input of shape (..., F_in).
        weight: Matrix of shape (F_out, F_in).
        bias: Optional vector of shape (F_out,).

    Returns:
        Tensor of shape (..., F_out).
    """
    if weight.ndim != 2 or x.shape[-1] != weight.shape[1]:
        raise DimensionError(f"linear: input features {x.shape[-1]} do not match weight shape {weight.shape}")
    out = x.data @ weight.data.T
    if bias is not None:
        out = out + bias.data
    inputs = (x, weight) if bias is None else (x, weight, bias)

    def vjp(g):
        flat_g = g.reshape(-1, g.shape[-1])
        flat_x = x.data.reshape(-1, x.shape[-1])
        grads = [g @ weight.data, flat_g.T @ flat_x]
        if bias is not None:
            grads.append(flat_g.sum(axis=0))
        return grads

    return record("linear", inputs, out, vjp)


def conv1x1(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """Per-pixel linear map over channels; `weight` has shape (C_out, C_in)."""
    _require_rank4(x, "conv1x1")
    if weight.ndim != 2 or weight.shape[1] != x.shape[1]:
        raise DimensionError(f"conv1x1: input channels {x.shape[1]} do not match weight shape {weight.shape}")
    out = np.tensordot(weight.data, x.data, axes=([1], [1])).transpose(1, 0, 2, 3)
    if bias is not None:
        out = out + bias.data[None, :, None, None]
    inputs = (x, weight) if bias is None else (x, weight, bias)

    def vjp(g):
        grads = [np.tensordot(weight.data, g, axes=([0], [1])).transpose(1, 0, 2, 3),
                 np.tensordot(g, x.data, axes=([0, 2, 3], [0, 2, 3]))]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return grads

    return record("conv1x1", inputs, out, vjp)


def conv2d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None, stride: int = 1, pad: int = 0) -> Tensor:
    """2D cross-correlation (no kernel flip) with zero padding.

    Args:
        x: Input of shape (B, C_in, H, W).
        weight: Kernel of shape (C_out, C_in, k, k), k odd.
        bias: Optional vector of shape (C_out,).
        stride: Step between output samples.
        pad: Zero padding on each spatial border.

    Returns:
        Tensor of shape (B, C_out, (H + 2 pad - k) // stride + 1, ...).
    """
    _require_rank4(x, "conv2d")
    if weight.ndim != 4 or weight.shape[1] != x.shape[1]:
        raise DimensionError(f"conv2d: input channels {x.shape[1]} do not match weight shape {weight.shape}")
    k = weight.shape[2]
    if weight.shape[3] != k or k % 2 == 0:
        raise DimensionError(f"conv2d: kernel must be square with odd size, got {weight.shape[2:]}")
    b, _, h, w = x.shape
    if h + 2 * pad < k or w + 2 * pad < k:
        raise DimensionError(f"conv2d: kernel {k} larger than padded input {(h + 2 * pad, w + 2 * pad)}")

    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    cols = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    out_h, out_w = cols.shape[2], cols.shape[3]
    out = np.tensordot(cols, weight.data, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    if bias is not None:
        out = out + bias.data[None, :, None, None]
    inputs = (x, weight) if bias is None else (x, weight, bias)

    def vjp(g):
        grad_w = np.tensordot(g, cols, axes=([0, 2, 3], [0, 2, 3]))
        dcols = np.tensordot(g, weight.data, axes=([1], [0]))
        grad_xp = np.zeros_like(xp)
        for i in range(k):
            for j in range(k):
                grad_xp[:, :, i:i + stride * out_h:stride, j:j + stride * out_w:stride] += \
                    dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        grads = [grad_xp[:, :, pad:pad + h, pad:pad + w], grad_w]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return grads

    return record("conv2d", inputs, out, vjp)


# --- Normalization ---


def instance_norm(x: Tensor, eps: float = 1e-5, weight: Optional[Tensor] = None,
                  bias: Optional[Tensor] = None) -> Tensor:
    """Normalizes every (b, c) slice to zero mean and unit variance.

    A constant slice maps to zeros; `eps` guards the variance. When `weight`
    and `bias` (shape (C,)) are given they scale and shift every channel.
    """
    _require_rank4(x, "instance_norm")
    n = x.shape[2] * x.shape[3]
    if n < 2:
        raise DimensionError(f"instance_norm needs H*W >= 2, got spatial shape {x.shape[2:]}")
    centered = x.data - x.data.mean(axis=(2, 3), keepdims=True)
    inv_std = 1.0 / np.sqrt((centered * centered).mean(axis=(2, 3), keepdims=True) + eps)
    xhat = centered * inv_std
    gamma = np.ones((1, x.shape[1], 1, 1)) if weight is None else weight.data[None, :, None, None]
    out = xhat * gamma
    if bias is not None:
        out = out + bias.data[None, :, None, None]
    inputs = [x]
    if weight is not None:
        inputs.append(weight)
    if bias is not None:
        inputs.append(bias)

    def vjp(g):
        gxhat = g * gamma
        grad_x = inv_std / n * (n * gxhat - gxhat.sum(axis=(2, 3), keepdims=True)
                                - xhat * (gxhat * xhat).sum(axis=(2, 3), keepdims=True))
        grads = [grad_x]
        if weight is not None:
            grads.append((g * xhat).sum(axis=(0, 2, 3)))
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return grads

    return record("instance_norm", inputs, out, vjp)


# --- Layout ---


def concat_channel(xs: Sequence[Tensor]) -> Tensor:
    """Concatenates rank-4 tensors along the channel axis."""
    for x in xs:
        _require_rank4(x, "concat_channel")
    spatial = {(x.shape[0],) + x.shape[2:] for x in xs}
    if len(spatial) != 1:
        raise DimensionError(f"concat_channel: inconsistent batch/spatial shapes {[x.shape for x in xs]}")
    bounds = np.cumsum([0] + [x.shape[1] for x in xs])

    def vjp(g):
        return [g[:, lo:hi] for lo, hi in zip(bounds[:-1], bounds[1:])]

    return record("concat_channel", tuple(xs), np.concatenate([x.data for x in xs], axis=1), vjp)


def channel_slice(x: Tensor, start: int, stop: int) -> Tensor:
    """Returns channels [start, stop) of a rank-4 tensor."""
    _require_rank4(x, "channel_slice")
    if not 0 <= start < stop <= x.shape[1]:
        raise DimensionError(f"channel_slice [{start}, {stop}) out of range for {x.shape[1]} channels")

    def vjp(g):
        full = np.zeros(x.shape)
        full[:, start:stop] = g
        return (full,)

    return record("channel_slice", (x,), x.data[:, start:stop], vjp)


def _shuffle(data: np.ndarray, s: int) -> np.ndarray:
    b, c, h, w = data.shape
    return data.reshape(b, c // (s * s), s, s, h, w).transpose(0, 1, 4, 2, 5, 3).reshape(b, c // (s * s), h * s, w * s)


def _unshuffle(data: np.ndarray, s: int) -> np.ndarray:
    b, c, h, w = data.shape
    return data.reshape(b, c, h // s, s, w // s, s).transpose(0, 1, 3, 5, 2, 4).reshape(b, c * s * s, h // s, w // s)


def pixel_shuffle(x: Tensor, s: int) -> Tensor:
    """Rearranges (B, C, H, W) into (B, C / s^2, sH, sW)."""
    _require_rank4(x, "pixel_shuffle")
    if x.shape[1] % (s * s) != 0:
        raise DimensionError(f"pixel_shuffle: channels {x.shape[1]} not divisible by s^2 = {s * s}")
    return record("pixel_shuffle", (x,), _shuffle(x.data, s), lambda g: (_unshuffle(g, s),))


def pixel_unshuffle(x: Tensor, s: int) -> Tensor:
    """Rearranges (B, C, H, W) into (B, C s^2, H / s, W / s)."""
    _require_rank4(x, "pixel_unshuffle")
    if x.shape[2] % s or x.shape[3] % s:
        raise DimensionError(f"pixel_unshuffle: spatial shape {x.shape[2:]} not divisible by {s}")
    return record("pixel_unshuffle", (x,), _unshuffle(x.data, s), lambda g: (_shuffle(g, s),))


def avg_pool2(x: Tensor) -> Tensor:
    """Stride-2 2x2 average pooling."""
    _require_rank4(x, "avg_pool2")
    b, c, h, w = x.shape
    if h % 2 or w % 2:
        raise DimensionError(f"avg_pool2 needs even spatial dims, got {(h, w)}")
    out = x.data.reshape(b, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))

    def vjp(g):
        return (np.repeat(np.repeat(g, 2, axis=2), 2, axis=3) * 0.25,)

    return record("avg_pool2", (x,), out, vjp)


def upsample_nearest(x: Tensor, s: int = 2) -> Tensor:
    """Nearest-neighbour upsampling by an integer factor."""
    _require_rank4(x, "upsample_nearest")
    b, c, h, w = x.shape
    out = np.repeat(np.repeat(x.data, s, axis=2), s, axis=3)

    def vjp(g):
        return (g.reshape(b, c, h, s, w, s).sum(axis=(3, 5)),)

    return record("upsample_nearest", (x,), out, vjp)
