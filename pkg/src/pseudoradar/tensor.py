"""Dense float64 tensors with tape-based reverse-mode differentiation.

Covers exactly the operations the loss stack needs: elementwise arithmetic
with numpy-style broadcasting, matmul, softmax, layer norm, trailing-axis
transposition, concatenation, gathering, and reductions. Every gradient is
verifiable against central finite differences via :func:`finite_diff_check`.

Graphs are throwaway: build, call :func:`backward` once, read ``.grad`` off
the leaves. Calling backward again on a fresh graph over the same leaves
accumulates into ``.grad``; call :func:`zero_grad` between steps when
accumulation is not wanted.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np


class ShapeError(ValueError):
    """Raised when operand shapes violate an operation's contract."""


class Tensor:
    """A float64 ndarray plus optional gradient and a backward closure.

    ``data`` is always a contiguous float64 array. ``grad`` is lazily
    allocated by :func:`backward` and has the same shape as ``data``.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        # ascontiguousarray would promote 0-d scalars to 1-D, so guard it
        if arr.ndim and not arr.flags["C_CONTIGUOUS"]:
            arr = np.ascontiguousarray(arr)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # arithmetic sugar; scalars are promoted to constant tensors
    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    def __rmul__(self, other):
        return mul(_as_tensor(other), self)

    def __truediv__(self, other):
        return div(self, _as_tensor(other))

    def __rtruediv__(self, other):
        return div(_as_tensor(other), self)

    def __neg__(self):
        return mul(self, Tensor(-1.0))

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, shape) -> "Tensor":
        return reshape(self, shape)

    def backward(self) -> None:
        backward(self)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _make(data: np.ndarray, parents: Sequence[Tensor], backward_fn: Callable) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _accum(grads: dict, t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    g = _unbroadcast(g, t.data.shape)
    key = id(t)
    if key in grads:
        grads[key] = grads[key] + g
    else:
        grads[key] = g


# ---------------------------------------------------------------------------
# primitives


def add(a: Tensor, b: Tensor) -> Tensor:
    data = a.data + b.data

    def bw(g, grads):
        _accum(grads, a, g)
        _accum(grads, b, g)

    return _make(data, (a, b), bw)


def sub(a: Tensor, b: Tensor) -> Tensor:
    data = a.data - b.data

    def bw(g, grads):
        _accum(grads, a, g)
        _accum(grads, b, -g)

    return _make(data, (a, b), bw)


def mul(a: Tensor, b: Tensor) -> Tensor:
    data = a.data * b.data

    def bw(g, grads):
        _accum(grads, a, g * b.data)
        _accum(grads, b, g * a.data)

    return _make(data, (a, b), bw)


def div(a: Tensor, b: Tensor) -> Tensor:
    data = a.data / b.data

    def bw(g, grads):
        _accum(grads, a, g / b.data)
        _accum(grads, b, -g * a.data / (b.data * b.data))

    return _make(data, (a, b), bw)


def power(a: Tensor, exponent: float) -> Tensor:
    p = float(exponent)
    data = a.data**p

    def bw(g, grads):
        _accum(grads, a, g * p * a.data ** (p - 1.0))

    return _make(data, (a,), bw)


def sqrt(a: Tensor) -> Tensor:
    return power(a, 0.5)


def exp(a: Tensor) -> Tensor:
    data = np.exp(a.data)

    def bw(g, grads):
        _accum(grads, a, g * data)

    return _make(data, (a,), bw)


def log(a: Tensor) -> Tensor:
    data = np.log(a.data)

    def bw(g, grads):
        _accum(grads, a, g / a.data)

    return _make(data, (a,), bw)


def sigmoid(a: Tensor) -> Tensor:
    # evaluate exp only on the non-overflowing side
    z = np.exp(-np.abs(a.data))
    data = np.where(a.data >= 0, 1.0 / (1.0 + z), z / (1.0 + z))

    def bw(g, grads):
        _accum(grads, a, g * data * (1.0 - data))

    return _make(data, (a,), bw)


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g, grads):
        g = np.asarray(g)
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accum(grads, a, np.broadcast_to(g, a.data.shape))

    return _make(data, (a,), bw)


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = a.data.size if axis is None else a.data.shape[axis]
    return mul(tsum(a, axis=axis, keepdims=keepdims), Tensor(1.0 / n))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the trailing two axes; leading axes must agree."""
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ShapeError(f"matmul needs rank >= 2 operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2] or a.shape[:-2] != b.shape[:-2]:
        raise ShapeError(f"matmul shapes do not align: {a.shape} x {b.shape}")
    data = a.data @ b.data

    def bw(g, grads):
        _accum(grads, a, g @ b.data.swapaxes(-1, -2))
        _accum(grads, b, a.data.swapaxes(-1, -2) @ g)

    return _make(data, (a, b), bw)


def transpose_last2(a: Tensor) -> Tensor:
    """Swap the trailing two axes. Self-inverse."""
    if a.data.ndim < 2:
        raise ShapeError(f"transpose_last2 needs rank >= 2, got shape {a.shape}")
    data = a.data.swapaxes(-1, -2).copy()

    def bw(g, grads):
        _accum(grads, a, g.swapaxes(-1, -2))

    return _make(data, (a,), bw)


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    data = a.data.reshape(shape)

    def bw(g, grads):
        _accum(grads, a, g.reshape(a.data.shape))

    return _make(data, (a,), bw)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    ts = list(tensors)
    if not ts:
        raise ShapeError("concat of an empty list")
    ref = ts[0].shape
    for t in ts[1:]:
        if len(t.shape) != len(ref) or any(
            t.shape[i] != ref[i] for i in range(len(ref)) if i != axis % len(ref)
        ):
            raise ShapeError(f"concat shapes differ off axis {axis}: {ref} vs {t.shape}")
    data = np.concatenate([t.data for t in ts], axis=axis)
    sizes = [t.shape[axis] for t in ts]
    offsets = np.cumsum([0] + sizes)

    def bw(g, grads):
        for t, lo, hi in zip(ts, offsets[:-1], offsets[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            _accum(grads, t, g[tuple(sl)])

    return _make(data, ts, bw)


def take(a: Tensor, indices, axis: int) -> Tensor:
    """Gather along an axis. A scalar index drops the axis, numpy style."""
    scalar = np.isscalar(indices) or (isinstance(indices, np.ndarray) and indices.ndim == 0)
    idx = np.asarray(indices, dtype=np.intp)
    data = np.take(a.data, idx if not scalar else int(idx), axis=axis)

    def bw(g, grads):
        if not a.requires_grad:
            return
        full = np.zeros_like(a.data)
        if scalar:
            sl = [slice(None)] * a.data.ndim
            sl[axis] = int(idx)
            full[tuple(sl)] = g
        else:
            moved = np.moveaxis(full, axis, 0)
            np.add.at(moved, idx, np.moveaxis(g, axis, 0))
        _accum(grads, a, full)

    return _make(data, (a,), bw)


def stack_scalars(scalars: Sequence[Tensor]) -> Tensor:
    """Stack single-element tensors into a vector."""
    return concat([reshape(s, (1,)) for s in scalars], axis=0)


# ---------------------------------------------------------------------------
# composites


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    """Softmax along ``axis`` using max subtraction for overflow safety.

    The subtracted maximum is held constant; softmax is shift invariant so
    the composed gradient equals the true one.
    """
    if a.data.ndim == 0:
        raise ShapeError("softmax needs at least rank 1")
    shift = Tensor(a.data.max(axis=axis, keepdims=True))
    e = exp(sub(a, shift))
    return div(e, tsum(e, axis=axis, keepdims=True))


def logsumexp(a: Tensor, axis: int = -1) -> Tensor:
    """log(sum(exp(a))) along ``axis``, max-shifted; keeps the axis collapsed."""
    shift_arr = a.data.max(axis=axis, keepdims=True)
    e = exp(sub(a, Tensor(shift_arr)))
    return add(log(tsum(e, axis=axis)), Tensor(np.squeeze(shift_arr, axis=axis)))


def layer_norm(a: Tensor, axis: int = -1, eps: float = 1e-5) -> Tensor:
    """Zero-mean unit-variance normalization of each slice along ``axis``."""
    mu = tmean(a, axis=axis, keepdims=True)
    centered = sub(a, mu)
    var = tmean(mul(centered, centered), axis=axis, keepdims=True)
    return div(centered, sqrt(add(var, Tensor(eps))))


def dot(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 1 or b.data.ndim != 1 or a.shape != b.shape:
        raise ShapeError(f"dot needs equal-length vectors, got {a.shape} and {b.shape}")
    return tsum(mul(a, b))


def cosine_sim(a: Tensor, b: Tensor, eps: float = 1e-12) -> Tensor:
    """Cosine similarity of two vectors as a scalar tensor.

    ``eps`` is added to both norms, so a zero vector has similarity 0 to
    everything and the value always lies strictly inside [-1, 1].
    """
    num = dot(a, b)
    na = sqrt(tsum(mul(a, a)))
    nb = sqrt(tsum(mul(b, b)))
    return div(num, mul(add(na, Tensor(eps)), add(nb, Tensor(eps))))


# ---------------------------------------------------------------------------
# backward pass


def _topo_order(root: Tensor) -> list[Tensor]:
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
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(node) into ``.grad`` of every reachable node.

    ``loss`` must hold a single element. Gradients add onto whatever is in
    ``.grad`` already; reset with :func:`zero_grad` between evaluations.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    order = _topo_order(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.grad is None:
            node.grad = g.copy()
        else:
            node.grad = node.grad + g
        if node._backward is not None:
            node._backward(g, grads)


def zero_grad(*tensors: Tensor) -> None:
    for t in tensors:
        t.grad = None


def finite_diff_check(
    f: Callable[[Tensor], Tensor],
    x: Tensor,
    h: float = 1e-5,
    eps: float = 1e-12,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``f`` must be a pure scalar function of ``x``; it is re-evaluated twice
    per coordinate. Error per coordinate is
    ``|analytic - numeric| / (|analytic| + |numeric| + eps)``.
    """
    if not x.requires_grad:
        raise ValueError("finite_diff_check needs requires_grad=True on x")
    x.grad = None
    out = f(x)
    if out.data.size != 1:
        raise ShapeError(f"finite_diff_check needs a scalar function, got shape {out.shape}")
    backward(out)
    analytic = np.zeros_like(x.data) if x.grad is None else x.grad.copy()

    flat = x.data.reshape(-1)
    numeric = np.zeros_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        hi = float(f(x).data.reshape(()))
        flat[i] = orig - h
        lo = float(f(x).data.reshape(()))
        flat[i] = orig
        numeric[i] = (hi - lo) / (2.0 * h)
    a = analytic.reshape(-1)
    rel = np.abs(a - numeric) / (np.abs(a) + np.abs(numeric) + eps)
    x.grad = None
    return float(rel.max()) if rel.size else 0.0
