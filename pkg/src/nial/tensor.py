"""Dense float64 tensors with reverse-mode automatic differentiation.

Every primitive below computes its forward value with numpy and, when any
input requires a gradient, records a closure mapping the output gradient to
one gradient per input. :func:`backward` walks those records in reverse
execution order.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterator, Optional, Sequence, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ContractError, DimensionError, LabelError

ArrayLike = Union["Tensor", np.ndarray, float, int, Sequence]

_grad_enabled = True


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Run ops without recording them (evaluation passes, finite differences)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "op", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.array(data, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad)
        self.op = "leaf"
        self._parents: tuple = ()
        self._backward: Optional[Callable] = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self.op}{flag})"

    def backward(self) -> None:
        backward(self)

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)


def as_tensor(x: ArrayLike) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: tuple, backward_fn: Callable, op: str) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.op = op
    out.requires_grad = _grad_enabled and any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = parents
        out._backward = backward_fn
    else:
        out._parents = ()
        out._backward = None
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# tape and backward
# ---------------------------------------------------------------------------


class GradTape:
    """Recorded ops reachable from ``root``, in an order consistent with execution.

    Each tensor appears once; iterating ``reversed(tape)`` visits every op
    after all of its consumers.
    """

    def __init__(self, root: Tensor):
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))
        self.nodes = order

    def __len__(self) -> int:
        return len(self.nodes)

    def __iter__(self):
        return iter(self.nodes)

    def __reversed__(self):
        return reversed(self.nodes)


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(t) into ``t.grad`` for every reachable ``t`` requiring grad.

    Gradients add to whatever is already stored, so two calls without
    zeroing leave exactly twice the gradient.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ContractError("loss does not depend on any tensor with requires_grad=True")

    pending = {id(loss): np.ones_like(loss.data)}
    for node in reversed(GradTape(loss)):
        g = pending.pop(id(node), None)
        if g is None:
            continue
        node.grad = g.copy() if node.grad is None else node.grad + g
        if node._backward is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            pending[key] = pg if key not in pending else pending[key] + pg


def grad_check(f: Callable, x, h: float = 1e-5) -> float:
    """Largest symmetric relative error between analytic and central-difference gradients.

    ``x`` is a tensor or a sequence of tensors; ``f(x)`` must return a
    scalar tensor. Existing ``.grad`` buffers of ``x`` are cleared. The
    error for each element is ``|a - n| / max(1, |a|, |n|)``.
    """
    tensors = [x] if isinstance(x, Tensor) else list(x)
    for t in tensors:
        t.grad = None
    backward(f(x))

    worst = 0.0
    with no_grad():
        for t in tensors:
            analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
            for idx in np.ndindex(t.data.shape):
                orig = t.data[idx]
                t.data[idx] = orig + h
                f_plus = f(x).item()
                t.data[idx] = orig - h
                f_minus = f(x).item()
                t.data[idx] = orig
                numeric = (f_plus - f_minus) / (2.0 * h)
                a = analytic[idx]
                err = abs(a - numeric) / max(1.0, abs(a), abs(numeric))
                worst = max(worst, err)
    return worst


# ---------------------------------------------------------------------------
# elementwise and structural ops
# ---------------------------------------------------------------------------


def add(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def _bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(a.data + b.data, (a, b), _bw, "add")


def sub(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def _bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make(a.data - b.data, (a, b), _bw, "sub")


def mul(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def _bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(a.data * b.data, (a, b), _bw, "mul")


def div(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def _bw(g):
        ga = g / b.data
        gb = -g * a.data / (b.data * b.data)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _make(a.data / b.data, (a, b), _bw, "div")


def tsum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is not None:
        axis = tuple(int(a) % x.ndim for a in np.atleast_1d(axis))
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def _bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _make(np.asarray(out, dtype=np.float64), (x,), _bw, "sum")


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = x.data.size if axis is None else np.prod([x.shape[int(a)] for a in np.atleast_1d(axis)])
    return tsum(x, axis, keepdims) * (1.0 / float(n))


def reshape(x: Tensor, shape: tuple) -> Tensor:
    def _bw(g):
        return (g.reshape(x.shape),)

    return _make(x.data.reshape(shape), (x,), _bw, "reshape")


def transpose(x: Tensor, axes: Optional[tuple] = None) -> Tensor:
    axes = tuple(range(x.ndim))[::-1] if axes is None else tuple(axes)
    inverse = tuple(np.argsort(axes))

    def _bw(g):
        return (g.transpose(inverse),)

    return _make(x.data.transpose(axes), (x,), _bw, "transpose")


def matmul(a: ArrayLike, b: ArrayLike) -> Tensor:
    """Matrix product over the last two axes; leading axes broadcast."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} @ {b.shape}")

    def _bw(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _make(a.data @ b.data, (a, b), _bw, "matmul")


# ---------------------------------------------------------------------------
# activations
# ---------------------------------------------------------------------------


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0

    def _bw(g):
        return (g * mask,)

    return _make(np.maximum(x.data, 0.0), (x,), _bw, "relu")


def _sigmoid(z: np.ndarray) -> np.ndarray:
    # tanh form never overflows and gives exactly 0.5 at 0
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def sigmoid(x: Tensor) -> Tensor:
    s = _sigmoid(x.data)

    def _bw(g):
        return (g * s * (1.0 - s),)

    return _make(s, (x,), _bw, "sigmoid")


def _check_axis(x: Tensor, axis: int) -> int:
    if not -x.ndim <= axis < x.ndim:
        raise DimensionError(f"axis {axis} out of range for shape {x.shape}")
    return axis % x.ndim


def _softmax(z: np.ndarray, axis: int) -> np.ndarray:
    e = np.exp(z - z.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    axis = _check_axis(x, axis)
    y = _softmax(x.data, axis)

    def _bw(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _make(y, (x,), _bw, "softmax")


def layernorm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis with population variance, then scale and shift."""
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise DimensionError(
            f"layernorm: last dim {d} does not match gamma {gamma.shape} / beta {beta.shape}"
        )
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    inv_std = 1.0 / np.sqrt((centered * centered).mean(axis=-1, keepdims=True) + eps)
    xhat = centered * inv_std

    def _bw(g):
        dxhat = g * gamma.data
        dx = inv_std * (
            dxhat
            - dxhat.mean(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        )
        lead = tuple(range(g.ndim - 1))
        return dx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return _make(xhat * gamma.data + beta.data, (x, gamma, beta), _bw, "layernorm")


def dropout(x: Tensor, p: float, rng: np.random.Generator, training: bool = True) -> Tensor:
    """Inverted dropout; identity when not training or ``p == 0``."""
    if not training or p == 0.0:
        return x
    mask = (rng.random(x.shape) >= p) / (1.0 - p)

    def _bw(g):
        return (g * mask,)

    return _make(x.data * mask, (x,), _bw, "dropout")


# ---------------------------------------------------------------------------
# convolution and pooling
# ---------------------------------------------------------------------------


def conv1d_out_len(length: int, kernel: int, stride: int = 1, padding: int = 0) -> int:
    return (length + 2 * padding - kernel) // stride + 1


def pool1d_out_len(length: int, window: int, stride: int) -> int:
    return (length - window) // stride + 1


def conv1d(
    x: Tensor, w: Tensor, bias: Optional[Tensor] = None, stride: int = 1, padding: int = 0
) -> Tensor:
    """Cross-correlation of ``x`` (B, Cin, L) with ``w`` (Cout, Cin, K)."""
    if x.ndim != 3 or w.ndim != 3:
        raise DimensionError(f"conv1d expects 3-d input and weight, got {x.shape} and {w.shape}")
    batch, cin, length = x.shape
    cout, wcin, k = w.shape
    if wcin != cin:
        raise DimensionError(f"conv1d channel mismatch: input {x.shape}, weight {w.shape}")
    if stride < 1 or padding < 0:
        raise DimensionError(f"conv1d needs stride >= 1 and padding >= 0 (got {stride}, {padding})")
    padded_len = length + 2 * padding
    if k > padded_len:
        raise DimensionError(f"conv1d kernel {k} larger than padded input length {padded_len}")
    if bias is not None and bias.shape != (cout,):
        raise DimensionError(f"conv1d bias shape {bias.shape} != ({cout},)")

    lout = conv1d_out_len(length, k, stride, padding)
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding))) if padding else x.data
    cols = sliding_window_view(xp, k, axis=2)[:, :, ::stride, :][:, :, :lout, :]
    out = np.einsum("bclk,ock->bol", cols, w.data, optimize=True)
    if bias is not None:
        out = out + bias.data[None, :, None]

    def _bw(g):
        gw = np.einsum("bol,bclk->ock", g, cols, optimize=True)
        gcols = np.einsum("bol,ock->bclk", g, w.data, optimize=True)
        gxp = np.zeros_like(xp)
        span = stride * (lout - 1) + 1
        for j in range(k):
            gxp[:, :, j : j + span : stride] += gcols[:, :, :, j]
        gx = gxp[:, :, padding : padding + length]
        gb = g.sum(axis=(0, 2)) if bias is not None else None
        return gx, gw, gb

    parents = (x, w) if bias is None else (x, w, bias)
    return _make(out, parents, _bw, "conv1d")


def maxpool1d(x: Tensor, window: int, stride: Optional[int] = None) -> Tensor:
    """Max over sliding windows of the last axis; ties route gradient to the first max."""
    stride = window if stride is None else stride
    if x.ndim != 3:
        raise DimensionError(f"maxpool1d expects (B, C, L), got {x.shape}")
    length = x.shape[2]
    if window < 1 or stride < 1:
        raise DimensionError(f"maxpool1d needs window, stride >= 1 (got {window}, {stride})")
    if window > length:
        raise DimensionError(f"maxpool1d window {window} larger than input length {length}")
    lout = pool1d_out_len(length, window, stride)
    windows = sliding_window_view(x.data, window, axis=2)[:, :, ::stride, :][:, :, :lout, :]
    arg = windows.argmax(axis=-1)
    out = np.take_along_axis(windows, arg[..., None], axis=-1)[..., 0]
    src = arg + stride * np.arange(lout)

    def _bw(g):
        gx = np.zeros_like(x.data)
        b_idx, c_idx, _ = np.indices(src.shape)
        np.add.at(gx, (b_idx, c_idx, src), g)
        return (gx,)

    return _make(out, (x,), _bw, "maxpool1d")


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------


def categorical_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of ``labels`` under softmax(``logits``)."""
    if logits.ndim != 2:
        raise DimensionError(f"categorical_cross_entropy expects (B, K) logits, got {logits.shape}")
    batch, k = logits.shape
    labels = np.asarray(labels)
    if labels.shape != (batch,):
        raise DimensionError(f"labels shape {labels.shape} does not match batch size {batch}")
    bad = np.flatnonzero((labels < 0) | (labels >= k) | (labels != np.round(labels)))
    if bad.size:
        i = int(bad[0])
        raise LabelError(f"label {labels[i]} at row {i} outside [0, {k})")
    labels = labels.astype(np.int64)

    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - log_z
    rows = np.arange(batch)
    loss = -log_probs[rows, labels].mean()

    def _bw(g):
        grad = np.exp(log_probs)
        grad[rows, labels] -= 1.0
        return (grad * (g / batch),)

    return _make(np.asarray(loss), (logits,), _bw, "cross_entropy")


def binary_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean BCE on raw logits of shape (B, 1) or (B,), in the overflow-free logit form."""
    z = logits.data.reshape(-1)
    if logits.ndim not in (1, 2) or (logits.ndim == 2 and logits.shape[1] != 1):
        raise DimensionError(f"binary_cross_entropy expects (B, 1) logits, got {logits.shape}")
    y = np.asarray(labels, dtype=np.float64).reshape(-1)
    if y.shape != z.shape:
        raise DimensionError(f"labels shape {np.shape(labels)} does not match logits {logits.shape}")
    bad = np.flatnonzero((y != 0.0) & (y != 1.0))
    if bad.size:
        i = int(bad[0])
        raise LabelError(f"non-binary label {y[i]} at row {i}")
    batch = z.size
    loss = (np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))).mean()

    def _bw(g):
        return (((_sigmoid(z) - y) * (g / batch)).reshape(logits.shape),)

    return _make(np.asarray(loss), (logits,), _bw, "binary_cross_entropy")
