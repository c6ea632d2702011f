"""Dense float64 tensors with reverse-mode automatic differentiation.

Every array the model touches is a Tensor holding a contiguous float64
numpy buffer. Operations record themselves on an implicit tape (parent
references plus a backward closure), and ``Tensor.backward`` walks the
tape in reverse topological order. Non-finite values are treated as an
error condition, not propagated.

Broadcasting policy: elementwise ops only broadcast over *leading* batch
axes (the trailing shapes must match exactly); anything else needs an
explicit reshape. ``matmul`` additionally allows numpy-style broadcasting
of its batch dimensions.
"""

from __future__ import annotations

import contextlib
import threading
from typing import Iterable, Sequence

import numpy as np


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class TapeError(RuntimeError):
    """The computation tape is missing, broken, or already consumed."""


_state = threading.local()


def _grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block (inference/benchmark path)."""
    prev = _grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


# Finite-output validation. Cheap relative to the matmuls it guards, and it
# turns silent NaN propagation into an immediate error per the data contract.
FINITE_CHECKS = True


def _check_finite(data: np.ndarray, op: str) -> None:
    # a non-finite entry always drives the sum non-finite (inf - inf is nan),
    # so one reduction pass suffices instead of a full isfinite scan
    if FINITE_CHECKS and not np.isfinite(data.sum()):
        if np.all(np.isfinite(data)):
            raise FloatingPointError(f"{op} produced values overflowing a float64 sum")
        raise FloatingPointError(f"{op} produced non-finite values")


class Tensor:
    """A float64 array plus the bookkeeping needed for backpropagation."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn", "_consumed")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        _check_finite(arr, "tensor construction")
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward_fn = None
        self._consumed = False

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            # copy: g may be a view of (or aliased with) another node's buffer
            self.grad = np.array(g, dtype=np.float64)
        else:
            self.grad += g

    def backward(self) -> None:
        """Backpropagate from a scalar; each call consumes the tape once."""
        if self.data.size != 1:
            raise TapeError(f"backward requires a scalar loss, got shape {self.shape}")
        if self._consumed:
            raise TapeError("backward already invoked on this tensor; rebuild the graph")
        self._consumed = True

        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))

        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward_fn is not None:
                node._backward_fn(node.grad)

    # -- operator sugar ------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(neg(self), other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], (tuple, list)) else shape)

    def transpose(self, *axes):
        return transpose(self, axes[0] if len(axes) == 1 and isinstance(axes[0], (tuple, list)) else axes)

    def sum(self, axis=None):
        return tensor_sum(self, axis)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _make(data: np.ndarray, parents: Sequence[Tensor], backward_fn, op: str) -> Tensor:
    _check_finite(data, op)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out._consumed = False
    if _grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward_fn = backward_fn
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward_fn = None
    return out


def _check_leading_broadcast(a: tuple[int, ...], b: tuple[int, ...], op: str) -> None:
    """Allow broadcast only over extra leading axes: trailing shapes must match."""
    small, big = (a, b) if len(a) <= len(b) else (b, a)
    if small == ():
        return
    if big[len(big) - len(small):] != small:
        raise ShapeError(f"{op}: shapes {a} and {b} only broadcast over leading batch axes")


def _reduce_to_shape(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum gradient over the leading axes that were broadcast away."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    # matmul batch dims may broadcast through size-1 extents
    ones = tuple(i for i, (gs, s) in enumerate(zip(g.shape, shape)) if s == 1 and gs != 1)
    if ones:
        g = g.sum(axis=ones, keepdims=True)
    return g


# -- elementwise arithmetic ---------------------------------------------


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_leading_broadcast(a.shape, b.shape, "add")
    out_data = a.data + b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_reduce_to_shape(g, a.shape))
        if b.requires_grad:
            b._accumulate(_reduce_to_shape(g, b.shape))

    return _make(out_data, (a, b), backward, "add")


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_leading_broadcast(a.shape, b.shape, "sub")
    out_data = a.data - b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_reduce_to_shape(g, a.shape))
        if b.requires_grad:
            b._accumulate(_reduce_to_shape(-g, b.shape))

    return _make(out_data, (a, b), backward, "sub")


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_leading_broadcast(a.shape, b.shape, "mul")
    out_data = a.data * b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_reduce_to_shape(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_reduce_to_shape(g * a.data, b.shape))

    return _make(out_data, (a, b), backward, "mul")


def neg(a) -> Tensor:
    a = _as_tensor(a)

    def backward(g):
        if a.requires_grad:
            a._accumulate(-g)

    return _make(-a.data, (a,), backward, "neg")


# -- linear algebra -------------------------------------------------------


def matmul(a, b) -> Tensor:
    """Matrix product over the trailing two axes; batch axes broadcast."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul expects rank >= 2 operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions disagree: {a.shape} x {b.shape}")
    try:
        out_data = np.matmul(a.data, b.data)
    except ValueError as exc:
        raise ShapeError(f"matmul batch dimensions incompatible: {a.shape} x {b.shape}") from exc

    def backward(g):
        if a.requires_grad:
            ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
            a._accumulate(_reduce_to_shape(ga, a.shape))
        if b.requires_grad:
            gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
            b._accumulate(_reduce_to_shape(gb, b.shape))

    return _make(out_data, (a, b), backward, "matmul")


# -- shape manipulation ----------------------------------------------------


def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    shape = tuple(int(s) for s in shape)
    out_data = a.data.reshape(shape)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g.reshape(a.shape))

    return _make(out_data, (a,), backward, "reshape")


def transpose(a, axes) -> Tensor:
    a = _as_tensor(a)
    axes = tuple(int(x) for x in axes)
    out_data = np.transpose(a.data, axes)
    inv = tuple(np.argsort(axes))

    def backward(g):
        if a.requires_grad:
            a._accumulate(np.transpose(g, inv))

    return _make(out_data, (a,), backward, "transpose")


def concat(tensors: Iterable[Tensor], axis: int) -> Tensor:
    ts = [_as_tensor(t) for t in tensors]
    out_data = np.concatenate([t.data for t in ts], axis=axis)
    sizes = [t.shape[axis] for t in ts]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(ts, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                t._accumulate(g[tuple(idx)])

    return _make(out_data, ts, backward, "concat")


def narrow(a, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice of ``length`` elements along ``axis``."""
    a = _as_tensor(a)
    idx = [slice(None)] * a.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)
    out_data = a.data[idx].copy()

    def backward(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            full[idx] = g
            a._accumulate(full)

    return _make(out_data, (a,), backward, "narrow")


def take_rows(a, indices) -> Tensor:
    """Gather rows along axis 0. Gradient scatter-adds back."""
    a = _as_tensor(a)
    idx = np.asarray(indices, dtype=np.intp)
    out_data = a.data[idx]

    def backward(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            np.add.at(full, idx, g)
            a._accumulate(full)

    return _make(out_data, (a,), backward, "take_rows")


# -- reductions -------------------------------------------------------------


def tensor_sum(a, axis=None) -> Tensor:
    a = _as_tensor(a)
    out_data = a.data.sum(axis=axis)

    def backward(g):
        if a.requires_grad:
            if axis is None:
                a._accumulate(np.broadcast_to(g, a.shape).copy())
            else:
                a._accumulate(np.broadcast_to(np.expand_dims(g, axis), a.shape).copy())

    return _make(out_data, (a,), backward, "sum")


def mean(a, axis=None) -> Tensor:
    a = _as_tensor(a)
    count = a.size if axis is None else a.shape[axis]
    return mul(tensor_sum(a, axis), 1.0 / count)


def mean_pool(a, axis: int, chunk: int | None = None) -> Tensor:
    """Average along ``axis``; with ``chunk`` set, average within groups of
    that size (the axis extent must be divisible by it)."""
    a = _as_tensor(a)
    if a.shape[axis] < 1:
        raise ShapeError(f"mean_pool needs extent >= 1 along axis {axis}")
    if chunk is None:
        return mean(a, axis)
    extent = a.shape[axis]
    if extent % chunk != 0:
        raise ShapeError(f"mean_pool chunk {chunk} does not divide extent {extent}")
    out_shape = a.shape[:axis] + (extent // chunk,) + a.shape[axis + 1:]
    grouped = a.data.reshape(a.shape[:axis] + (extent // chunk, chunk) + a.shape[axis + 1:])
    out_data = grouped.mean(axis=axis + 1)

    def backward(g):
        if a.requires_grad:
            expanded = np.repeat(np.expand_dims(g, axis + 1), chunk, axis=axis + 1) / chunk
            a._accumulate(expanded.reshape(a.shape))

    out = _make(out_data, (a,), backward, "mean_pool")
    assert out.shape == out_shape
    return out


# -- nonlinearities ----------------------------------------------------------


def relu(a) -> Tensor:
    a = _as_tensor(a)
    out_data = np.maximum(a.data, 0.0)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * (a.data > 0.0))

    return _make(out_data, (a,), backward, "relu")


def softmax(a, axis: int = -1) -> Tensor:
    """Numerically stabilized softmax along ``axis``."""
    a = _as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        if a.requires_grad:
            dot = (g * out_data).sum(axis=axis, keepdims=True)
            a._accumulate(out_data * (g - dot))

    return _make(out_data, (a,), backward, "softmax")


def logsumexp(a, axis: int = -1) -> Tensor:
    a = _as_tensor(a)
    c = a.data.max(axis=axis, keepdims=True)
    e = np.exp(a.data - c)
    s = e.sum(axis=axis, keepdims=True)
    out_data = np.squeeze(np.log(s) + c, axis=axis)
    soft = e / s

    def backward(g):
        if a.requires_grad:
            a._accumulate(np.expand_dims(g, axis) * soft)

    return _make(out_data, (a,), backward, "logsumexp")


def layernorm(a, gain, bias, axis: int = -1, eps: float = 1e-5) -> Tensor:
    """Normalize to zero mean / unit variance along ``axis``, then affine."""
    a, gain, bias = _as_tensor(a), _as_tensor(gain), _as_tensor(bias)
    extent = a.shape[axis]
    if gain.size != extent or bias.size != extent:
        raise ShapeError(
            f"layernorm gain/bias must have {extent} elements for axis {axis}, "
            f"got {gain.shape} and {bias.shape}"
        )
    x = np.moveaxis(a.data, axis, -1)
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x - mu) * inv
    g_flat = gain.data.reshape(extent)
    b_flat = bias.data.reshape(extent)
    out_data = np.moveaxis(xhat * g_flat + b_flat, -1, axis)

    def backward(g):
        gm = np.moveaxis(g, axis, -1)
        if gain.requires_grad:
            gg = (gm * xhat).reshape(-1, extent).sum(axis=0)
            gain._accumulate(gg.reshape(gain.shape))
        if bias.requires_grad:
            gb = gm.reshape(-1, extent).sum(axis=0)
            bias._accumulate(gb.reshape(bias.shape))
        if a.requires_grad:
            gy = gm * g_flat
            m1 = gy.mean(axis=-1, keepdims=True)
            m2 = (gy * xhat).mean(axis=-1, keepdims=True)
            gx = (gy - m1 - xhat * m2) * inv
            a._accumulate(np.moveaxis(gx, -1, axis))

    return _make(out_data, (a, gain, bias), backward, "layernorm")


def dropout(a, p: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout; identity when p == 0."""
    if p <= 0.0:
        return _as_tensor(a)
    a = _as_tensor(a)
    keep = (rng.random(a.shape) >= p) / (1.0 - p)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * keep)

    return _make(a.data * keep, (a,), backward, "dropout")
