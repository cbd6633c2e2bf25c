"""Reverse-mode differentiation over a recorded operation tape.

Every operation returns a new :class:`Tensor` whose backward closure knows
how to push gradients into its parents.  The op set is exactly what the
unrolled message-passing network needs: dense linear algebra, row gathers
and segment sums for the bipartite graph, fused LSTM gate arithmetic, and a
fused softmax cross-entropy.  All math is float64.

Calling ``backward()`` on a scalar loss walks the tape in reverse
topological order and accumulates ``grad`` arrays on every tensor that
requires one.  Gradient accumulation order is deterministic, so repeated
runs are bit-identical.
"""

from __future__ import annotations

import numpy as np

from ..errors import DimensionError, GraphError


class Tensor:
    """A float64 array with an optional gradient slot and tape linkage."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backprop")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backprop = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def tracked(self) -> bool:
        return self.requires_grad or bool(self._parents)

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, tracked={self.tracked})"

    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def backward(self) -> None:
        if self.data.size != 1:
            raise DimensionError("backward requires a scalar loss")
        if not self.tracked:
            raise GraphError("loss is detached from the recorded graph")
        order: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in visited and parent.tracked:
                    stack.append((parent, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backprop is not None and node.grad is not None:
                node._backprop(node.grad)


def _as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _node(data, parents: tuple[Tensor, ...], backprop) -> Tensor:
    out = Tensor(data)
    if any(p.tracked for p in parents):
        out._parents = parents
        out._backprop = backprop
    return out


def _accum(t: Tensor, g: np.ndarray) -> None:
    """Add a gradient contribution that may alias other arrays."""
    if not t.tracked:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64, copy=True)
    else:
        t.grad += g


def _accum_owned(t: Tensor, g: np.ndarray) -> None:
    """Add a gradient contribution from a freshly allocated array.

    The first contribution is adopted without copying, so callers must pass
    arrays they would otherwise discard.
    """
    if not t.tracked:
        return
    if t.grad is None:
        t.grad = g
    else:
        t.grad += g


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce ``grad`` back to ``shape`` after numpy broadcasting."""
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)

    def backprop(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(g, b.data.shape))

    return _node(a.data + b.data, (a, b), backprop)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)

    def backprop(g):
        _accum_owned(a, _unbroadcast(g * b.data, a.data.shape))
        _accum_owned(b, _unbroadcast(g * a.data, b.data.shape))

    return _node(a.data * b.data, (a, b), backprop)


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.shape[-1] != b.data.shape[0]:
        raise DimensionError(f"matmul mismatch: {a.shape} @ {b.shape}")

    def backprop(g):
        _accum_owned(a, g @ b.data.T)
        _accum_owned(b, a.data.T @ g)

    return _node(a.data @ b.data, (a, b), backprop)


def linear(x, w, b=None) -> Tensor:
    """``x @ w.T (+ b)`` with the fused backward of a dense layer."""
    x, w = _as_tensor(x), _as_tensor(w)
    if x.data.shape[-1] != w.data.shape[1]:
        raise DimensionError(f"linear mismatch: {x.shape} x {w.shape}")
    out = x.data @ w.data.T
    if b is None:

        def backprop(g):
            _accum_owned(x, g @ w.data)
            _accum_owned(w, g.T @ x.data)

        return _node(out, (x, w), backprop)
    b = _as_tensor(b)

    def backprop_bias(g):
        _accum_owned(x, g @ w.data)
        _accum_owned(w, g.T @ x.data)
        if g.ndim > 1:
            _accum_owned(b, g.sum(axis=0))
        else:
            _accum(b, g)

    return _node(out + b.data, (x, w, b), backprop_bias)


def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)

    def backprop(g):
        _accum(a, g.reshape(a.data.shape))

    return _node(a.data.reshape(shape), (a,), backprop)


class SegmentPlan:
    """Precomputed sort order for summing rows that share an index.

    Reused across iterations and between forward and backward so the
    argsort happens once per graph instead of once per op call.
    """

    __slots__ = ("idx", "order", "starts", "targets")

    def __init__(self, idx: np.ndarray):
        self.idx = np.asarray(idx, dtype=np.intp)
        self.order = np.argsort(self.idx, kind="stable")
        sorted_idx = self.idx[self.order]
        if len(sorted_idx):
            self.starts = np.concatenate(([0], np.flatnonzero(np.diff(sorted_idx)) + 1))
            self.targets = sorted_idx[self.starts]
        else:
            self.starts = np.zeros(0, dtype=np.intp)
            self.targets = np.zeros(0, dtype=np.intp)

    def sum_into(self, values: np.ndarray, rows: int) -> np.ndarray:
        out = np.zeros((rows,) + values.shape[1:], dtype=values.dtype)
        if len(self.idx):
            out[self.targets] = np.add.reduceat(values[self.order], self.starts, axis=0)
        return out


def _segment_sum(values: np.ndarray, idx: np.ndarray, rows: int, plan: SegmentPlan | None = None) -> np.ndarray:
    if plan is None:
        plan = SegmentPlan(idx)
    return plan.sum_into(values, rows)


def gather_rows(a, idx, plan: SegmentPlan | None = None) -> Tensor:
    """Select rows ``a[idx]``; backward scatter-adds into the source rows."""
    a = _as_tensor(a)
    idx = np.asarray(idx, dtype=np.intp)

    def backprop(g):
        _accum_owned(a, _segment_sum(g, idx, a.data.shape[0], plan))

    return _node(a.data[idx], (a,), backprop)


def scatter_sum(a, idx, rows: int, plan: SegmentPlan | None = None) -> Tensor:
    """``out[j] = sum over i with idx[i] == j of a[i]`` for j in [0, rows)."""
    a = _as_tensor(a)
    idx = np.asarray(idx, dtype=np.intp)
    if len(idx) != a.data.shape[0]:
        raise DimensionError("scatter_sum index length must match row count")

    def backprop(g):
        _accum_owned(a, g[idx])

    return _node(_segment_sum(a.data, idx, rows, plan), (a,), backprop)


def place_rows(parts: list[tuple], rows: int) -> Tensor:
    """Assemble a matrix from (index array, tensor) pairs with disjoint,
    unique indices; unassigned rows stay zero."""
    parts = [(np.asarray(idx, dtype=np.intp), _as_tensor(t)) for idx, t in parts]
    width = parts[0][1].data.shape[1]
    data = np.zeros((rows, width))
    for idx, t in parts:
        data[idx] = t.data

    def backprop(g):
        for idx, t in parts:
            _accum_owned(t, g[idx])

    return _node(data, tuple(t for _, t in parts), backprop)


def slice_cols(a, start: int, stop: int) -> Tensor:
    a = _as_tensor(a)

    def backprop(g):
        full = np.zeros_like(a.data)
        full[:, start:stop] = g
        _accum_owned(a, full)

    return _node(a.data[:, start:stop].copy(), (a,), backprop)


def slice_rows(a, start: int, stop: int) -> Tensor:
    a = _as_tensor(a)

    def backprop(g):
        full = np.zeros_like(a.data)
        full[start:stop] = g
        _accum_owned(a, full)

    return _node(a.data[start:stop].copy(), (a,), backprop)


def concat_rows(parts) -> Tensor:
    parts = [_as_tensor(p) for p in parts]
    sizes = [p.data.shape[0] for p in parts]
    offsets = np.concatenate(([0], np.cumsum(sizes)))

    def backprop(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            _accum(p, g[lo:hi])

    return _node(np.concatenate([p.data for p in parts], axis=0), tuple(parts), backprop)


def sigmoid(a) -> Tensor:
    a = _as_tensor(a)
    out = 1.0 / (1.0 + np.exp(-a.data))

    def backprop(g):
        _accum_owned(a, g * out * (1.0 - out))

    return _node(out, (a,), backprop)


def tanh(a) -> Tensor:
    a = _as_tensor(a)
    out = np.tanh(a.data)

    def backprop(g):
        _accum_owned(a, g * (1.0 - out * out))

    return _node(out, (a,), backprop)


def relu(a) -> Tensor:
    a = _as_tensor(a)
    out = np.maximum(a.data, 0.0)

    def backprop(g):
        _accum_owned(a, g * (a.data > 0.0))

    return _node(out, (a,), backprop)


def lstm_gates(pre, c_prev) -> Tensor:
    """Fused LSTM pointwise block.

    ``pre`` holds the four gate pre-activations ``[i | f | o | g]`` side by
    side (shape ``(m, 4h)``); the result stacks the new hidden and cell
    states as ``[h' | c']`` (shape ``(m, 2h)``).  The sigmoid gates sit in
    one contiguous block so a single exp pass covers all three.
    """
    pre, c_prev = _as_tensor(pre), _as_tensor(c_prev)
    m, four_h = pre.data.shape
    h = four_h // 4
    if four_h != 4 * h or c_prev.data.shape != (m, h):
        raise DimensionError(f"lstm_gates mismatch: pre {pre.shape}, cell {c_prev.shape}")
    sig = np.exp(-pre.data[:, : 3 * h])
    sig += 1.0
    np.reciprocal(sig, out=sig)
    gi, gf, go = sig[:, :h], sig[:, h : 2 * h], sig[:, 2 * h :]
    gg = np.tanh(pre.data[:, 3 * h :])
    c_new = gf * c_prev.data
    c_new += gi * gg
    tc = np.tanh(c_new)
    out = np.empty((m, 2 * h))
    np.multiply(go, tc, out=out[:, :h])
    out[:, h:] = c_new

    def backprop(g):
        dh, dc_ext = g[:, :h], g[:, h:]
        dc = 1.0 - tc * tc
        dc *= dh * go
        dc += dc_ext
        dpre = np.empty_like(pre.data)
        np.multiply(dc * gg, gi * (1.0 - gi), out=dpre[:, :h])
        np.multiply(dc * c_prev.data, gf * (1.0 - gf), out=dpre[:, h : 2 * h])
        np.multiply(dh * tc, go * (1.0 - go), out=dpre[:, 2 * h : 3 * h])
        np.multiply(dc * gi, 1.0 - gg * gg, out=dpre[:, 3 * h :])
        _accum_owned(pre, dpre)
        _accum_owned(c_prev, dc * gf)

    return _node(out, (pre, c_prev), backprop)


def softmax(logits: np.ndarray) -> np.ndarray:
    """Numerically stable softmax over the last axis (plain numpy helper)."""
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits, targets) -> Tensor:
    """Per-row cross-entropy of integer ``targets`` under ``logits``."""
    logits = _as_tensor(logits)
    targets = np.asarray(targets, dtype=np.intp)
    m, n = logits.data.shape
    if targets.shape != (m,):
        raise DimensionError("one target index per logits row required")
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    total = exp.sum(axis=1)
    probs = exp / total[:, None]
    losses = np.log(total) - shifted[np.arange(m), targets]

    def backprop(g):
        d = probs * g[:, None]
        d[np.arange(m), targets] -= g
        _accum_owned(logits, d)

    return _node(losses, (logits,), backprop)


def sum_all(a) -> Tensor:
    a = _as_tensor(a)

    def backprop(g):
        _accum_owned(a, np.broadcast_to(g, a.data.shape).copy())

    return _node(a.data.sum(), (a,), backprop)


def mean_all(a) -> Tensor:
    a = _as_tensor(a)
    size = a.data.size

    def backprop(g):
        _accum_owned(a, np.broadcast_to(g / size, a.data.shape).copy())

    return _node(a.data.mean(), (a,), backprop)


def dropout(a, rate: float, rng: np.random.Generator, training: bool = True) -> Tensor:
    """Inverted dropout; identity when ``rate`` is 0 or not training."""
    if not training or rate == 0.0:
        return _as_tensor(a)
    a = _as_tensor(a)
    mask = (rng.random(a.data.shape) >= rate) / (1.0 - rate)
    return mul(a, Tensor(mask))
