"""Dense tensors with reverse-mode differentiation.

A :class:`Tensor` wraps a numpy array (float32 or float64) plus an optional
gradient buffer. Operations build a tape of backward closures; calling
:func:`backward` on a scalar walks the tape in reverse topological order and
accumulates gradients into every reachable tensor that requires them.

Only the operations the classification network composes are provided: dense
matmul, elementwise arithmetic with row-vector/scalar broadcasting, the
transcendental maps used by the aggregation operator families, segment
(scatter) reductions keyed by integer ids, row gathers, and axis reductions.
Every forward result is checked for NaN/inf and rejects with
:class:`NonFiniteError`.

Segment reductions accumulate in ascending row order (``np.add.at``), so
outputs are bit-reproducible for a fixed input ordering.
"""

from __future__ import annotations

import numpy as np

FLOAT_DTYPES = (np.float32, np.float64)


class NonFiniteError(FloatingPointError):
    """A forward operation produced NaN or infinity."""


class GraphConsumedError(RuntimeError):
    """backward() was called again through an already-consumed graph."""


def _finite(arr: np.ndarray) -> np.ndarray:
    if not np.isfinite(arr).all():
        raise NonFiniteError("non-finite values in operation output")
    return arr


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_consumed")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in FLOAT_DTYPES:
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple = ()
        self._backward = None
        self._consumed = False

    # -- bookkeeping -------------------------------------------------------

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def values(self) -> np.ndarray:
        """Flat row-major view of the stored values."""
        return self.data.reshape(-1)

    @property
    def grad_values(self) -> np.ndarray | None:
        return None if self.grad is None else self.grad.reshape(-1)

    def zero_grad(self) -> None:
        self.grad = None

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    # -- operator sugar ----------------------------------------------------

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

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(_as_tensor(other, self.dtype), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def sin(self):
        return sin(self)

    def cos(self):
        return cos(self)

    def sqrt(self):
        return sqrt(self)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean_(self, axis=axis, keepdims=keepdims)


def _as_tensor(x, dtype) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _make(data: np.ndarray, parents: tuple, backward) -> Tensor:
    out = Tensor(_finite(data))
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum gradient ``g`` down to ``shape`` (reverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# -- arithmetic --------------------------------------------------------------


def add(a: Tensor, b) -> Tensor:
    b = _as_tensor(b, a.dtype)

    def backward(out):
        g = out.grad
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.data.shape))

    return _make(a.data + b.data, (a, b), backward)


def sub(a: Tensor, b) -> Tensor:
    b = _as_tensor(b, a.dtype)

    def backward(out):
        g = out.grad
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g, b.data.shape))

    return _make(a.data - b.data, (a, b), backward)


def neg(a: Tensor) -> Tensor:
    def backward(out):
        if a.requires_grad:
            a._accumulate(-out.grad)

    return _make(-a.data, (a,), backward)


def mul(a: Tensor, b) -> Tensor:
    b = _as_tensor(b, a.dtype)

    def backward(out):
        g = out.grad
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.data.shape))

    return _make(a.data * b.data, (a, b), backward)


def div(a: Tensor, b) -> Tensor:
    b = _as_tensor(b, a.dtype)

    def backward(out):
        g = out.grad
        if a.requires_grad:
            a._accumulate(_unbroadcast(g / b.data, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

    return _make(a.data / b.data, (a, b), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ValueError("matmul requires 2-d operands")
    if a.data.shape[1] != b.data.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.data.shape} @ {b.data.shape}")

    def backward(out):
        g = out.grad
        if a.requires_grad:
            a._accumulate(g @ b.data.T)
        if b.requires_grad:
            b._accumulate(a.data.T @ g)

    return _make(a.data @ b.data, (a, b), backward)


# -- elementwise maps --------------------------------------------------------


def exp(a: Tensor) -> Tensor:
    out_data = np.exp(a.data)

    def backward(out):
        if a.requires_grad:
            a._accumulate(out.grad * out_data)

    return _make(out_data, (a,), backward)


def log(a: Tensor) -> Tensor:
    def backward(out):
        if a.requires_grad:
            a._accumulate(out.grad / a.data)

    return _make(np.log(a.data), (a,), backward)


def sin(a: Tensor) -> Tensor:
    def backward(out):
        if a.requires_grad:
            a._accumulate(out.grad * np.cos(a.data))

    return _make(np.sin(a.data), (a,), backward)


def cos(a: Tensor) -> Tensor:
    def backward(out):
        if a.requires_grad:
            a._accumulate(out.grad * -np.sin(a.data))

    return _make(np.cos(a.data), (a,), backward)


def sqrt(a: Tensor) -> Tensor:
    out_data = np.sqrt(a.data)

    def backward(out):
        if a.requires_grad:
            a._accumulate(out.grad * (0.5 / out_data))

    return _make(out_data, (a,), backward)


def leaky_relu(a: Tensor, slope: float = 0.01) -> Tensor:
    """x for x >= 0 else slope*x. The subgradient at exactly 0 is slope."""
    if not 0.0 < slope < 1.0:
        raise ValueError(f"slope must lie in (0, 1), got {slope}")
    s = a.dtype.type(slope)

    def backward(out):
        if a.requires_grad:
            scale = s + (a.dtype.type(1) - s) * (a.data > 0)
            a._accumulate(out.grad * scale)

    # maximum(x, s*x) equals the two-branch form for 0 < s < 1
    return _make(np.maximum(a.data, s * a.data), (a,), backward)


# -- shape / reduction -------------------------------------------------------


def concat(tensors: list[Tensor], axis: int = 1) -> Tensor:
    datas = [t.data for t in tensors]
    splits = np.cumsum([d.shape[axis] for d in datas])[:-1]

    def backward(out):
        parts = np.split(out.grad, splits, axis=axis)
        for t, g in zip(tensors, parts):
            if t.requires_grad:
                t._accumulate(g)

    return _make(np.concatenate(datas, axis=axis), tuple(tensors), backward)


def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    def backward(out):
        if not a.requires_grad:
            return
        g = out.grad
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        a._accumulate(np.broadcast_to(g, a.data.shape).copy())

    return _make(a.data.sum(axis=axis, keepdims=keepdims), (a,), backward)


def mean_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = a.data.size if axis is None else a.data.shape[axis]
    return mul(sum_(a, axis=axis, keepdims=keepdims), 1.0 / n)


def take_rows(a: Tensor, index: np.ndarray) -> Tensor:
    """out[i] = a[index[i]]; backward scatter-adds into the gathered rows."""
    index = np.asarray(index, dtype=np.int64)

    def backward(out):
        if a.requires_grad:
            g = np.zeros_like(a.data)
            np.add.at(g, index, out.grad)
            a._accumulate(g)

    return _make(a.data[index], (a,), backward)


def pick_columns(a: Tensor, cols: np.ndarray) -> Tensor:
    """out[i] = a[i, cols[i]] for a 2-d tensor."""
    cols = np.asarray(cols, dtype=np.int64)
    rows = np.arange(a.data.shape[0])

    def backward(out):
        if a.requires_grad:
            g = np.zeros_like(a.data)
            g[rows, cols] = out.grad
            a._accumulate(g)

    return _make(a.data[rows, cols], (a,), backward)


def reshape(a: Tensor, shape: tuple) -> Tensor:
    def backward(out):
        if a.requires_grad:
            a._accumulate(out.grad.reshape(a.data.shape))

    return _make(a.data.reshape(shape), (a,), backward)


def stop_gradient(a: Tensor) -> Tensor:
    return Tensor(a.data)


def rowmax_detached(a: Tensor, axis: int = 1) -> np.ndarray:
    """Max over an axis as a plain array (used as a constant shift)."""
    return a.data.max(axis=axis, keepdims=True)


# -- segment (scatter) reductions --------------------------------------------


def segment_counts(ids: np.ndarray, num_segments: int) -> np.ndarray:
    return np.bincount(ids, minlength=num_segments)


def segment_sum_np(x: np.ndarray, ids: np.ndarray, num_segments: int) -> np.ndarray:
    out = np.zeros((num_segments,) + x.shape[1:], dtype=x.dtype)
    np.add.at(out, ids, x)
    return out


def segment_mean_np(x: np.ndarray, ids: np.ndarray, num_segments: int) -> np.ndarray:
    sums = segment_sum_np(x, ids, num_segments)
    counts = np.maximum(segment_counts(ids, num_segments), 1)
    return sums / counts.astype(x.dtype).reshape((-1,) + (1,) * (x.ndim - 1))


def segment_max_np(x: np.ndarray, ids: np.ndarray, num_segments: int, want_arg: bool = False):
    """Channel-wise per-segment max over sorted runs.

    Returns (out, argrows): empty segments yield zero rows, argrows holds the
    source row feeding each output element (ties resolve to the lowest row
    index; ``n`` marks elements of empty segments; None when not requested).
    Max is order-independent, so the sorted evaluation is exact.
    """
    n = x.shape[0]
    out = np.zeros((num_segments,) + x.shape[1:], dtype=x.dtype)
    if n == 0:
        return out, (np.full(out.shape, 0, dtype=np.int64) if want_arg else None)
    order = np.argsort(ids, kind="stable")
    sx = x[order]
    sids = ids[order]
    starts = np.concatenate([[0], np.flatnonzero(np.diff(sids)) + 1])
    run_ids = sids[starts]
    run_max = np.maximum.reduceat(sx, starts, axis=0)
    out[run_ids] = run_max
    if not want_arg:
        return out, None
    return out, segment_argmax(x, ids, out)


def segment_argmax(x: np.ndarray, ids: np.ndarray, seg_max: np.ndarray) -> np.ndarray:
    """Lowest source row attaining each segment's channel max; n marks
    elements of empty segments."""
    n = x.shape[0]
    arg = np.full(seg_max.shape, n, dtype=np.int64)
    hit = x == seg_max[ids]
    pos = np.arange(n, dtype=np.int64).reshape((-1,) + (1,) * (x.ndim - 1))
    cand = np.where(hit, pos, n)
    np.minimum.at(arg, ids, cand)
    return arg


def segment_sum(a: Tensor, ids: np.ndarray, num_segments: int) -> Tensor:
    ids = np.asarray(ids, dtype=np.int64)

    def backward(out):
        if a.requires_grad:
            a._accumulate(out.grad[ids])

    return _make(segment_sum_np(a.data, ids, num_segments), (a,), backward)


def segment_mean(a: Tensor, ids: np.ndarray, num_segments: int) -> Tensor:
    ids = np.asarray(ids, dtype=np.int64)
    counts = np.maximum(segment_counts(ids, num_segments), 1).astype(a.dtype)
    inv = (1.0 / counts).reshape((-1,) + (1,) * (a.data.ndim - 1))

    def backward(out):
        if a.requires_grad:
            a._accumulate((out.grad * inv)[ids])

    return _make(segment_sum_np(a.data, ids, num_segments) * inv, (a,), backward)


def segment_max(a: Tensor, ids: np.ndarray, num_segments: int) -> Tensor:
    ids = np.asarray(ids, dtype=np.int64)
    out_data, _ = segment_max_np(a.data, ids, num_segments)

    def backward(out):
        if not a.requires_grad:
            return
        arg = segment_argmax(a.data, ids, out_data)
        valid = arg < a.data.shape[0]
        g = np.zeros_like(a.data)
        cols = np.broadcast_to(np.arange(int(np.prod(a.data.shape[1:]))).reshape(a.data.shape[1:]), out.grad.shape)
        np.add.at(g.reshape(a.data.shape[0], -1), (arg[valid], cols[valid]), out.grad[valid])
        a._accumulate(g)

    return _make(out_data, (a,), backward)


# -- backward pass -----------------------------------------------------------


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(t) into ``t.grad`` for every reachable tensor.

    ``loss`` must be a scalar produced by a live (not yet consumed) graph.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward requires a scalar, got shape {loss.data.shape}")
    if loss._consumed:
        raise GraphConsumedError("backward() already ran through this graph")

    topo: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in visited:
                stack.append((parent, False))

    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        if node._backward is not None and node.grad is not None:
            node._backward(node)
        node._consumed = True
        # free the tape as we go; intermediates are one-shot
        if node is not loss and node._parents:
            node._backward = None
            node._parents = ()
    loss._backward = None
    loss._parents = ()
