"""A minimal reverse-mode autodiff tape over dense numpy arrays.

Values are recorded on a :class:`Tape` in execution order, which is therefore a
topological order; :meth:`Tape.backward` walks it once in reverse. Only the
primitives defined here exist. Everything the GNN layers need is composed from
them.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

from ..errors import NonFiniteInput, ShapeMismatch, UntrackedParameter


class Var:
    __slots__ = ("value", "tape", "index", "parents", "backward_fn", "requires_grad", "grad")

    def __init__(self, value, tape, index, parents=(), backward_fn=None, requires_grad=False):
        self.value = value
        self.tape = tape
        self.index = index
        self.parents = parents
        self.backward_fn = backward_fn
        self.requires_grad = requires_grad
        self.grad = None

    @property
    def shape(self):
        return self.value.shape

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        return f"Var(shape={self.value.shape}, requires_grad={self.requires_grad})"


class Tape:
    def __init__(self, check_finite: bool = True):
        self.nodes: list[Var] = []
        self.check_finite = check_finite

    def _new(self, value, parents=(), backward_fn=None, requires_grad=False) -> Var:
        v = Var(value, self, len(self.nodes), parents, backward_fn, requires_grad)
        self.nodes.append(v)
        return v

    def param(self, value) -> Var:
        value = np.array(value, dtype=np.float64)
        _check_finite(self, value)
        return self._new(value, requires_grad=True)

    def const(self, value) -> Var:
        value = np.asarray(value, dtype=np.float64)
        _check_finite(self, value)
        return self._new(value)

    def record(self, value, parents: Sequence[Var], backward_fn: Callable) -> Var:
        needs = any(p.requires_grad for p in parents)
        return self._new(value, tuple(parents), backward_fn if needs else None, needs)

    def backward(self, loss: Var) -> None:
        """Populate ``.grad`` on every tracked node upstream of ``loss``."""
        if loss.tape is not self:
            raise UntrackedParameter("loss was not recorded on this tape")
        if loss.value.size != 1:
            raise ShapeMismatch(f"backward needs a scalar loss, got shape {loss.value.shape}")
        for n in self.nodes:
            n.grad = None
        loss.grad = np.ones_like(loss.value)
        for node in reversed(self.nodes[: loss.index + 1]):
            if node.grad is None or node.backward_fn is None:
                continue
            for parent, g in zip(node.parents, node.backward_fn(node.grad)):
                if g is None or not parent.requires_grad:
                    continue
                parent.grad = g if parent.grad is None else parent.grad + g

    def gradients(self, loss: Var, params: Sequence[Var]) -> list[np.ndarray]:
        for p in params:
            if p.tape is not self or self.nodes[p.index] is not p:
                raise UntrackedParameter("parameter was not recorded on this tape")
        self.backward(loss)
        return [np.zeros_like(p.value) if p.grad is None else p.grad for p in params]


def _check_finite(tape: Tape, *arrays) -> None:
    if tape.check_finite:
        for a in arrays:
            if not np.isfinite(a).all():
                raise NonFiniteInput("non-finite value entering the tape")


def _tape_of(*xs) -> Tape:
    tape = None
    for x in xs:
        if isinstance(x, Var):
            if tape is None:
                tape = x.tape
            elif x.tape is not tape:
                raise UntrackedParameter("operands recorded on different tapes")
    if tape is None:
        raise TypeError("at least one operand must be a tape variable")
    return tape


def _lift(tape: Tape, x) -> Var:
    return x if isinstance(x, Var) else tape.const(x)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _broadcast_shape(a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeMismatch(f"cannot broadcast {a.shape} with {b.shape}") from None


# ------------------------------------------------------------------ primitives


def matmul(a, b) -> Var:
    tape = _tape_of(a, b)
    a, b = _lift(tape, a), _lift(tape, b)
    if a.value.ndim != 2 or b.value.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeMismatch(f"matmul {a.shape} @ {b.shape}")
    av, bv = a.value, b.value
    return tape.record(av @ bv, (a, b), lambda g: (g @ bv.T, av.T @ g))


def add(a, b) -> Var:
    tape = _tape_of(a, b)
    a, b = _lift(tape, a), _lift(tape, b)
    _broadcast_shape(a.value, b.value)
    sa, sb = a.shape, b.shape
    return tape.record(
        a.value + b.value, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb))
    )


def sub(a, b) -> Var:
    tape = _tape_of(a, b)
    a, b = _lift(tape, a), _lift(tape, b)
    _broadcast_shape(a.value, b.value)
    sa, sb = a.shape, b.shape
    return tape.record(
        a.value - b.value, (a, b), lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb))
    )


def mul(a, b) -> Var:
    tape = _tape_of(a, b)
    a, b = _lift(tape, a), _lift(tape, b)
    _broadcast_shape(a.value, b.value)
    av, bv = a.value, b.value
    return tape.record(
        av * bv,
        (a, b),
        lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)),
    )


def scale(x: Var, c: float) -> Var:
    return x.tape.record(x.value * c, (x,), lambda g: (g * c,))


def relu(x: Var) -> Var:
    mask = x.value > 0
    return x.tape.record(x.value * mask, (x,), lambda g: (g * mask,))


def leaky_relu(x: Var, alpha: float = 0.2) -> Var:
    slope = np.where(x.value > 0, 1.0, alpha)
    return x.tape.record(x.value * slope, (x,), lambda g: (g * slope,))


def sigmoid(x: Var) -> Var:
    y = 0.5 * (1.0 + np.tanh(0.5 * x.value))
    return x.tape.record(y, (x,), lambda g: (g * y * (1.0 - y),))


def tanh(x: Var) -> Var:
    y = np.tanh(x.value)
    return x.tape.record(y, (x,), lambda g: (g * (1.0 - y * y),))


def identity(x: Var) -> Var:
    return x


def row_softmax(x: Var) -> Var:
    z = x.value - x.value.max(axis=1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=1, keepdims=True)
    return x.tape.record(y, (x,), lambda g: (y * (g - (g * y).sum(axis=1, keepdims=True)),))


def row_l2_normalize(x: Var) -> Var:
    """Rows scaled to unit norm; all-zero rows pass through unchanged."""
    norms = np.linalg.norm(x.value, axis=1, keepdims=True)
    safe = np.where(norms == 0, 1.0, norms)
    y = x.value / safe
    zero = norms == 0

    def back(g):
        proj = g - y * (g * y).sum(axis=1, keepdims=True)
        return (np.where(zero, g, proj / safe),)

    return x.tape.record(y, (x,), back)


def concat_cols(*xs) -> Var:
    tape = _tape_of(*xs)
    xs = [_lift(tape, x) for x in xs]
    rows = {x.shape[0] for x in xs}
    if len(rows) != 1:
        raise ShapeMismatch(f"concat_cols row counts differ: {sorted(rows)}")
    bounds = np.cumsum([0] + [x.shape[1] for x in xs])
    return tape.record(
        np.concatenate([x.value for x in xs], axis=1),
        xs,
        lambda g: tuple(g[:, bounds[i] : bounds[i + 1]] for i in range(len(xs))),
    )


def slice_cols(x: Var, start: int, stop: int) -> Var:
    shape = x.shape

    def back(g):
        full = np.zeros(shape)
        full[:, start:stop] = g
        return (full,)

    return x.tape.record(x.value[:, start:stop], (x,), back)


def take_row_as_matrix(x: Var, row: int, shape: tuple[int, int]) -> Var:
    """Row ``row`` of ``x`` reshaped into a matrix (used for stacked weights)."""
    if shape[0] * shape[1] != x.shape[1]:
        raise ShapeMismatch(f"cannot view a row of length {x.shape[1]} as {shape}")
    full_shape = x.shape

    def back(g):
        full = np.zeros(full_shape)
        full[row] = g.reshape(-1)
        return (full,)

    return x.tape.record(x.value[row].reshape(shape), (x,), back)


def sum_all(x: Var) -> Var:
    shape = x.shape
    return x.tape.record(np.array(x.value.sum()), (x,), lambda g: (np.full(shape, float(g)),))


def rowdot(a: Var, b: Var) -> Var:
    """Per-row inner products, shape (n, 1)."""
    if a.shape != b.shape:
        raise ShapeMismatch(f"rowdot {a.shape} vs {b.shape}")
    av, bv = a.value, b.value
    return a.tape.record(
        (av * bv).sum(axis=1, keepdims=True), (a, b), lambda g: (g * bv, g * av)
    )


def spmm(m: sp.spmatrix, x: Var) -> Var:
    """Constant sparse matrix times a tape variable."""
    if m.shape[1] != x.shape[0]:
        raise ShapeMismatch(f"spmm {m.shape} @ {x.shape}")
    mt = m.T.tocsr()
    return x.tape.record(np.asarray(m @ x.value), (x,), lambda g: (np.asarray(mt @ g),))


def gather_rows(x: Var, idx) -> Var:
    idx = np.asarray(idx, dtype=np.int64)
    n = x.shape[0]
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise ShapeMismatch("gather index out of range")

    def back(g):
        full = np.zeros((n,) + g.shape[1:])
        np.add.at(full, idx, g)
        return (full,)

    return x.tape.record(x.value[idx], (x,), back)


def segment_sum(x: Var, segments, num_segments: int) -> Var:
    """Sum rows of ``x`` into ``num_segments`` buckets given by ``segments``."""
    seg = np.asarray(segments, dtype=np.int64)
    if seg.shape[0] != x.shape[0]:
        raise ShapeMismatch("segment ids must match row count")
    out = np.zeros((num_segments,) + x.shape[1:])
    np.add.at(out, seg, x.value)
    return x.tape.record(out, (x,), lambda g: (g[seg],))


def segment_softmax(s: Var, segments, num_segments: int) -> Var:
    """Softmax of a column vector ``s`` (n, 1) within each segment."""
    seg = np.asarray(segments, dtype=np.int64)
    col = s.value[:, 0]
    peak = np.full(num_segments, -np.inf)
    np.maximum.at(peak, seg, col)
    e = np.exp(col - peak[seg])
    denom = np.zeros(num_segments)
    np.add.at(denom, seg, e)
    y = (e / denom[seg])[:, None]

    def back(g):
        dot = np.zeros(num_segments)
        np.add.at(dot, seg, (g * y)[:, 0])
        return (y * (g - dot[seg][:, None]),)

    return s.tape.record(y, (s,), back)


def mean_squared_l2_loss(pred: Var, target) -> Var:
    """Mean over rows of the squared L2 distance between matching rows."""
    tape = pred.tape
    target = _lift(tape, target)
    if pred.shape != target.shape:
        raise ShapeMismatch(f"loss shapes {pred.shape} vs {target.shape}")
    diff = pred.value - target.value
    n = max(pred.shape[0], 1)
    val = np.array((diff * diff).sum() / n)
    return tape.record(
        val, (pred, target), lambda g: (2.0 * float(g) * diff / n, -2.0 * float(g) * diff / n)
    )


def cross_entropy_from_logits(logits: Var, labels, class_mask=None) -> Var:
    """Mean softmax cross-entropy; columns where ``class_mask`` is False are excluded.

    Excluded columns get exactly zero gradient.
    """
    labels = np.asarray(labels, dtype=np.int64)
    n, c = logits.shape
    if labels.shape != (n,):
        raise ShapeMismatch(f"labels shape {labels.shape} for logits {logits.shape}")
    mask = np.ones(c, dtype=bool) if class_mask is None else np.asarray(class_mask, dtype=bool)
    if not mask[labels].all():
        raise ShapeMismatch("a label falls in a masked-out class")
    z = np.where(mask, logits.value, -np.inf)
    z = z - z.max(axis=1, keepdims=True)
    e = np.where(mask, np.exp(z), 0.0)
    denom = e.sum(axis=1, keepdims=True)
    log_p = z - np.log(denom)
    val = np.array(-log_p[np.arange(n), labels].mean())
    probs = e / denom

    def back(g):
        d = probs.copy()
        d[np.arange(n), labels] -= 1.0
        return (np.where(mask, d, 0.0) * float(g) / n,)

    return logits.tape.record(val, (logits,), back)
