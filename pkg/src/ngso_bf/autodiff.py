"""Tape-based reverse-mode differentiation over real f64 arrays.

Operations whose inputs carry no tape run eagerly and record nothing,
which is how inference avoids the bookkeeping cost. Complex quantities
are handled by the callers as separate real and imaginary tensors.

Example::

    tape = Tape()
    x = tape.leaf(np.array([1.0, -1.0]))
    loss = ad.sum(ad.selu(x))
    grads = tape.backward(loss)
    grads[x]  # array([1.0507..., 0.6467...])
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

SELU_LAMBDA = 1.0507009873554805
SELU_ALPHA = 1.6732632423543772


class Tensor:
    """Real f64 array, optionally registered on a :class:`Tape`."""

    __slots__ = ("value", "tape", "node_id", "grad", "name", "extras")
    __array_ufunc__ = None  # make ``ndarray op Tensor`` defer to Tensor

    def __init__(self, value, tape: "Tape | None" = None, name: str | None = None):
        self.value = np.asarray(value, dtype=np.float64)
        self.tape = tape
        self.node_id: int | None = None
        self.grad: np.ndarray | None = None
        self.name = name
        self.extras: dict | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, node={self.node_id})"

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

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return slice_(self, index)


@dataclass
class Node:
    op: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None


class Tape:
    """Ordered record of primitive operations; backward replays it in reverse."""

    def __init__(self):
        self.nodes: list[Node] = []

    def __len__(self):
        return len(self.nodes)

    def leaf(self, value, name: str | None = None) -> Tensor:
        t = Tensor(np.array(value, dtype=np.float64), self, name)
        self._register(Node("leaf", (), t, None))
        return t

    def _register(self, node: Node) -> None:
        node.output.node_id = len(self.nodes)
        node.output.tape = self
        self.nodes.append(node)

    def backward(self, loss: Tensor) -> dict[Tensor, np.ndarray]:
        """Gradients of scalar ``loss`` for every leaf on this tape.

        Leaves that do not influence ``loss`` get zero gradients. The
        gradients are also stored on each leaf's ``grad`` attribute.
        """
        if loss.value.size != 1:
            raise ValueError(f"loss must be scalar, got shape {loss.shape}")
        if loss.tape is not self:
            raise ValueError("loss was not recorded on this tape")
        grads: list[np.ndarray | None] = [None] * len(self.nodes)
        owned: set[int] = set()  # gradient buffers safe to update in place
        grads[loss.node_id] = np.ones_like(loss.value)
        for node in reversed(self.nodes):
            g = grads[node.output.node_id]
            if g is None or node.backward is None:
                continue
            for inp, gi in zip(node.inputs, node.backward(g)):
                if gi is None or inp.tape is not self:
                    continue
                idx = inp.node_id
                if isinstance(gi, _IndexedGrad):
                    if idx not in owned:
                        base = grads[idx]
                        grads[idx] = np.zeros(gi.shape) if base is None else base.copy()
                        owned.add(idx)
                    grads[idx][gi.index] += gi.values
                elif grads[idx] is None:
                    grads[idx] = gi
                elif idx in owned:
                    grads[idx] += gi
                else:
                    grads[idx] = grads[idx] + gi
                    owned.add(idx)
        out = {}
        for node in self.nodes:
            if node.op == "leaf":
                g = grads[node.output.node_id]
                g = np.zeros_like(node.output.value) if g is None else g
                node.output.grad = g
                out[node.output] = g
        return out


@dataclass
class _IndexedGrad:
    """Gradient nonzero only at ``index``; accumulated in place by the tape."""

    shape: tuple[int, ...]
    index: object
    values: np.ndarray


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _tape_of(*xs: Tensor) -> Tape | None:
    for x in xs:
        if x.tape is not None:
            return x.tape
    return None


def _record(op: str, inputs: tuple[Tensor, ...], value: np.ndarray, backward) -> Tensor:
    out = Tensor(value)
    tape = _tape_of(*inputs)
    if tape is not None:
        tape._register(Node(op, inputs, out, backward))
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _check_broadcast(op: str, a: Tensor, b: Tensor) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ValueError(f"{op}: shape mismatch {a.shape} vs {b.shape}") from None


# elementwise binary


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("add", a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _record("add", (a, b), a.value + b.value, backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("mul", a, b)

    def backward(g):
        return _unbroadcast(g * b.value, a.shape), _unbroadcast(g * a.value, b.shape)

    return _record("mul", (a, b), a.value * b.value, backward)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("div", a, b)
    out = a.value / b.value

    def backward(g):
        ga = g / b.value
        return _unbroadcast(ga, a.shape), _unbroadcast(-ga * out, b.shape)

    return _record("div", (a, b), out, backward)


def sub(a, b) -> Tensor:
    return add(a, mul(b, -1.0))


# linear algebra


def matmul(a, b) -> Tensor:
    """Batched ``a @ b`` with numpy broadcasting; both operands >= 2-D."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul: shape mismatch {a.shape} @ {b.shape}")

    def backward(g):
        ga = g @ np.swapaxes(b.value, -1, -2)
        gb = np.swapaxes(a.value, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _record("matmul", (a, b), a.value @ b.value, backward)


def _im2col(xp: np.ndarray, k: int, length: int) -> np.ndarray:
    # cols[b, c*k + j, t] = xp[b, c, t + j]
    bsz, cin, _ = xp.shape
    cols = np.empty((bsz, cin, k, length))
    for j in range(k):
        cols[:, :, j, :] = xp[:, :, j : j + length]
    return cols.reshape(bsz, cin * k, length)


def conv1d(x, weight, bias=None) -> Tensor:
    """Stride-1 'same' cross-correlation.

    ``x``: (B, C_in, T); ``weight``: (C_out, C_in, k); ``bias``: (C_out,).
    Output (B, C_out, T). Even ``k`` pads one more on the right.
    """
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 3 or weight.ndim != 3 or x.shape[1] != weight.shape[1]:
        raise ValueError(f"conv1d: shape mismatch {x.shape} * {weight.shape}")
    inputs = (x, weight)
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (weight.shape[0],):
            raise ValueError(f"conv1d: bias shape {bias.shape} != ({weight.shape[0]},)")
        inputs = (x, weight, bias)
    cout, cin, k = weight.shape
    bsz, _, length = x.shape
    left = (k - 1) // 2
    xp = np.pad(x.value, ((0, 0), (0, 0), (left, k - 1 - left)))
    cols = _im2col(xp, k, length)
    w2 = weight.value.reshape(cout, cin * k)
    out = w2 @ cols
    if bias is not None:
        out = out + bias.value[:, None]

    def backward(g):
        gw = np.einsum("bot,bkt->ok", g, cols).reshape(weight.shape)
        gcols = (w2.T @ g).reshape(bsz, cin, k, length)
        gxp = np.zeros_like(xp)
        for j in range(k):
            gxp[:, :, j : j + length] += gcols[:, :, j, :]
        gx = gxp[:, :, left : left + length]
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2))

    return _record("conv1d", inputs, out, backward)


def maxpool1d(x, kernel: int, stride: int | None = None) -> Tensor:
    """Max over windows of the last axis; ties go to the lowest index."""
    x = as_tensor(x)
    stride = kernel if stride is None else stride
    length = x.shape[-1]
    if kernel < 1 or stride < 1 or length < kernel:
        raise ValueError(f"maxpool1d: kernel {kernel} / stride {stride} invalid for length {length}")
    n_out = (length - kernel) // stride + 1
    starts = np.arange(n_out) * stride
    windows = x.value[..., starts[:, None] + np.arange(kernel)]  # (..., n_out, kernel)
    arg = np.argmax(windows, axis=-1)  # first maximum wins
    src = starts + arg  # (..., n_out)
    out = np.take_along_axis(x.value, src, axis=-1)

    def backward(g):
        gx = np.zeros_like(x.value)
        flat_g = g.reshape(-1, n_out)
        flat_src = src.reshape(-1, n_out)
        view = gx.reshape(-1, length)
        rows = np.arange(view.shape[0])[:, None]
        np.add.at(view, (rows, flat_src), flat_g)
        return (gx,)

    return _record("maxpool1d", (x,), out, backward)


# elementwise unary


def selu(x) -> Tensor:
    x = as_tensor(x)
    pos = x.value > 0
    neg_part = SELU_LAMBDA * SELU_ALPHA * np.exp(np.minimum(x.value, 0.0))
    out = np.where(pos, SELU_LAMBDA * x.value, neg_part - SELU_LAMBDA * SELU_ALPHA)

    def backward(g):
        return (g * np.where(pos, SELU_LAMBDA, neg_part),)

    return _record("selu", (x,), out, backward)


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    out = np.empty_like(x.value)
    pos = x.value >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x.value[pos]))
    ex = np.exp(x.value[~pos])
    out[~pos] = ex / (1.0 + ex)

    def backward(g):
        return (g * out * (1.0 - out),)

    return _record("sigmoid", (x,), out, backward)


def tanh(x) -> Tensor:
    x = as_tensor(x)
    out = np.tanh(x.value)

    def backward(g):
        return (g * (1.0 - out * out),)

    return _record("tanh", (x,), out, backward)


def square(x) -> Tensor:
    x = as_tensor(x)

    def backward(g):
        return (2.0 * g * x.value,)

    return _record("square", (x,), x.value * x.value, backward)


def sqrt(x) -> Tensor:
    x = as_tensor(x)
    out = np.sqrt(x.value)

    def backward(g):
        return (g / (2.0 * out),)

    return _record("sqrt", (x,), out, backward)


def log(x) -> Tensor:
    x = as_tensor(x)

    def backward(g):
        return (g / x.value,)

    return _record("log", (x,), np.log(x.value), backward)


# reductions and shape


def sum(x, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    x = as_tensor(x)
    out = np.sum(x.value, axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _record("sum", (x,), out, backward)


def mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    n = x.value.size if axis is None else int(np.prod([x.shape[a] for a in np.atleast_1d(axis)]))
    out = np.mean(x.value, axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / n, x.shape).copy(),)

    return _record("mean", (x,), out, backward)


def concat(xs: Sequence, axis: int = 0) -> Tensor:
    xs = tuple(as_tensor(x) for x in xs)
    if not xs:
        raise ValueError("concat: need at least one tensor")
    try:
        out = np.concatenate([x.value for x in xs], axis=axis)
    except ValueError as exc:
        raise ValueError(f"concat: shape mismatch ({exc})") from None
    bounds = np.cumsum([x.shape[axis] for x in xs])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _record("concat", xs, out, backward)


def slice_(x, index) -> Tensor:
    """Basic (view) indexing: ints, slices, Ellipsis, None."""
    x = as_tensor(x)
    out = x.value[index]

    def backward(g):
        return (_IndexedGrad(x.shape, index, g),)

    return _record("slice", (x,), np.array(out), backward)


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)

    def backward(g):
        return (g.reshape(x.shape),)

    return _record("reshape", (x,), x.value.reshape(shape), backward)


def transpose(x, axes=None) -> Tensor:
    x = as_tensor(x)
    inv = None if axes is None else np.argsort(axes)

    def backward(g):
        return (np.transpose(g, inv),)

    return _record("transpose", (x,), np.transpose(x.value, axes), backward)


def batch_stats_normalize(x, axes, eps: float = 1e-5) -> Tensor:
    """``(x - mean) / sqrt(var + eps)`` with biased statistics over ``axes``.

    The batch mean and variance are exposed (not differentiated) in
    ``out.extras`` for running-statistics updates.
    """
    x = as_tensor(x)
    axes = tuple(np.atleast_1d(axes))
    n = int(np.prod([x.shape[a] for a in axes]))
    mu = x.value.mean(axis=axes, keepdims=True)
    centered = x.value - mu
    var = (centered * centered).mean(axis=axes, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std

    def backward(g):
        sg = g.sum(axis=axes, keepdims=True)
        sgx = (g * xhat).sum(axis=axes, keepdims=True)
        return (inv_std / n * (n * g - sg - xhat * sgx),)

    out = _record("batch_stats_normalize", (x,), xhat, backward)
    out.extras = {"mean": np.squeeze(mu, axis=axes), "var": np.squeeze(var, axis=axes)}
    return out


def _numeric_grad(f: Callable[..., Tensor], values: list[np.ndarray], h: float) -> list[np.ndarray]:
    grads = []
    for i, v in enumerate(values):
        g = np.zeros_like(v)
        flat = g.reshape(-1)
        for j in range(v.size):
            plus = [u.copy() for u in values]
            minus = [u.copy() for u in values]
            plus[i].reshape(-1)[j] += h
            minus[i].reshape(-1)[j] -= h
            fp = float(f(*[Tensor(u) for u in plus]).value)
            fm = float(f(*[Tensor(u) for u in minus]).value)
            flat[j] = (fp - fm) / (2 * h)
        grads.append(g)
    return grads


def relative_error(analytic: np.ndarray, numeric: np.ndarray, f_scale: float = 1.0, floor_frac: float = 1e-3) -> float:
    """Max over coordinates of ``|a - n| / max(|a|, |n|, floor)``.

    ``floor`` is the larger of ``floor_frac * max|n|`` and
    ``1e-4 * max(1, f_scale)``: coordinates whose gradient is tiny (or
    exactly zero) are judged against the gradient's and the function's
    scale instead of against finite-difference round-off.
    """
    a = np.ravel(analytic)
    n = np.ravel(numeric)
    if a.size == 0:
        return 0.0
    floor = max(floor_frac * float(np.max(np.abs(n))), 1e-4 * max(1.0, abs(f_scale)))
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom))


def gradient_check(f: Callable[..., Tensor], point: Sequence[np.ndarray], h: float = 1e-6) -> float:
    """Max relative error between tape gradients and central differences.

    ``f`` receives one :class:`Tensor` per array in ``point`` and must
    return a scalar tensor.
    """
    if h <= 0:
        raise ValueError("step h must be positive")
    values = [np.array(p, dtype=np.float64) for p in point]
    tape = Tape()
    leaves = [tape.leaf(v) for v in values]
    loss = f(*leaves)
    grads = tape.backward(loss)
    numeric = _numeric_grad(f, values, h)
    err = 0.0
    for leaf, num in zip(leaves, numeric):
        err = max(err, relative_error(grads[leaf], num, float(loss.value)))
    return err if math.isfinite(err) else float("inf")
