"""Tape-based reverse-mode differentiation over dense 2-D float64 arrays.

Every primitive records one node on the tape of its inputs. ``backward``
walks the tape in reverse and returns gradients for the leaves that were
registered with :meth:`Tape.param`. A fresh tape is built for every forward
pass; nothing is mutated in place.

Edge-indexed quantities (attention scores, messages) are plain ``(E, c)``
matrices; segments are described by a CSR ``indptr`` whose segments are all
non-empty.
"""

from __future__ import annotations

from typing import Callable, Iterable, Mapping

import numpy as np
import scipy.sparse as sp

PROB_EPS = 1e-12


class GradientError(FloatingPointError):
    """Non-finite value met while differentiating."""


class Var:
    __slots__ = ("data", "tape", "parents", "backward_fn", "name", "index")

    def __init__(self, data, tape: "Tape", parents=(), backward_fn=None, name=None):
        self.data = data
        self.tape = tape
        self.parents = parents
        self.backward_fn = backward_fn
        self.name = name
        self.index = tape._push(self)

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Var{label}(shape={self.data.shape})"

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

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self):
        return transpose(self)


class Tape:
    """Records a computation; parameters are the named leaves."""

    def __init__(self):
        self.nodes: list[Var] = []
        self.params: dict[str, Var] = {}

    def _push(self, v: Var) -> int:
        self.nodes.append(v)
        return len(self.nodes) - 1

    def param(self, name: str, value) -> Var:
        if name in self.params:
            raise KeyError(f"parameter {name!r} already registered")
        v = Var(np.array(value, dtype=np.float64, copy=True), self, name=name)
        self.params[name] = v
        return v

    def const(self, value) -> Var:
        if sp.issparse(value):
            return Var(value, self)
        return Var(np.asarray(value, dtype=np.float64), self)

    def reset(self) -> None:
        self.nodes.clear()
        self.params.clear()


def _tape_of(*xs) -> Tape:
    for x in xs:
        if isinstance(x, Var):
            return x.tape
    raise TypeError("at least one operand must be a Var")


def _lift(x, tape: Tape) -> Var:
    if isinstance(x, Var):
        if x.tape is not tape:
            raise ValueError("operands recorded on different tapes")
        return x
    if np.isscalar(x):
        return tape.const(np.full((1, 1), float(x)))
    return tape.const(x)


def _node(data, parents, backward_fn) -> Var:
    return Var(data, parents[0].tape, tuple(parents), backward_fn)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == shape:
        return g
    for axis, (gs, s) in enumerate(zip(g.shape, shape)):
        if s == 1 and gs != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _needs_grad(v: Var) -> bool:
    return v.name is not None or v.backward_fn is not None


def _check_broadcast(a, b, op):
    if a.shape == b.shape:
        return
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ValueError(f"{op}: shape mismatch {a.shape} vs {b.shape}") from None


# ------------------------------------------------------------------ primitives


def add(a, b) -> Var:
    """Elementwise sum with numpy broadcasting (covers row-broadcast bias)."""
    t = _tape_of(a, b)
    a, b = _lift(a, t), _lift(b, t)
    _check_broadcast(a.data, b.data, "add")
    return _node(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Var:
    t = _tape_of(a, b)
    a, b = _lift(a, t), _lift(b, t)
    _check_broadcast(a.data, b.data, "sub")
    return _node(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)))


def mul(a, b) -> Var:
    t = _tape_of(a, b)
    a, b = _lift(a, t), _lift(b, t)
    _check_broadcast(a.data, b.data, "mul")
    return _node(
        a.data * b.data,
        (a, b),
        lambda g: (
            _unbroadcast(g * b.data, a.shape) if _needs_grad(a) else None,
            _unbroadcast(g * a.data, b.shape) if _needs_grad(b) else None,
        ),
    )


def scale(a: Var, c: float) -> Var:
    return _node(a.data * c, (a,), lambda g: (g * c,))


def matmul(a, b) -> Var:
    """Matrix product; ``a`` may be a constant scipy sparse matrix."""
    t = _tape_of(a, b)
    a, b = _lift(a, t), _lift(b, t)
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul: shape mismatch {a.shape} @ {b.shape}")
    out = a.data @ b.data
    out = np.asarray(out.toarray() if sp.issparse(out) else out)

    def back(g):
        ga = g @ b.data.T if _needs_grad(a) else None
        gb = np.asarray(a.data.T @ g) if _needs_grad(b) else None
        return ga, gb

    return _node(out, (a, b), back)


def transpose(a: Var) -> Var:
    return _node(a.data.T.copy(), (a,), lambda g: (g.T,))


def concat(xs: Iterable[Var]) -> Var:
    """Concatenate along columns."""
    xs = list(xs)
    rows = {x.shape[0] for x in xs}
    if len(rows) != 1:
        raise ValueError(f"concat: row counts differ {sorted(rows)}")
    bounds = np.cumsum([0] + [x.shape[1] for x in xs])

    def back(g):
        return tuple(g[:, bounds[i]:bounds[i + 1]] for i in range(len(xs)))

    return _node(np.concatenate([x.data for x in xs], axis=1), xs, back)


def slice_rows(a: Var, start: int, stop: int) -> Var:
    def back(g):
        full = np.zeros_like(a.data)
        full[start:stop] = g
        return (full,)

    return _node(a.data[start:stop].copy(), (a,), back)


def block_diag_rows(parts: Iterable[Var], start: int, stop: int) -> Var:
    """Block-diagonal (h * w, h) matrix whose column r is rows start:stop of column vector r."""
    parts = list(parts)
    width = stop - start
    h = len(parts)
    for v in parts:
        if v.shape[1] != 1 or v.shape[0] < stop:
            raise ValueError("block_diag_rows: parts must be column vectors covering start:stop")
    out = np.zeros((h * width, h))
    for r, v in enumerate(parts):
        out[r * width:(r + 1) * width, r] = v.data[start:stop, 0]

    def back(g):
        grads = []
        for r, v in enumerate(parts):
            gv = np.zeros(v.shape)
            gv[start:stop, 0] = g[r * width:(r + 1) * width, r]
            grads.append(gv)
        return tuple(grads)

    return _node(out, tuple(parts), back)


def gather_rows(a: Var, index) -> Var:
    index = np.asarray(index, dtype=np.int64)
    n = a.shape[0]

    def back(g):
        scatter = sp.csr_matrix((np.ones(index.size), (index, np.arange(index.size))), shape=(n, index.size))
        return (np.asarray(scatter @ g),)

    if index.size and (index.min() < 0 or index.max() >= n):
        raise IndexError("gather_rows: index out of range")
    return _node(a.data[index], (a,), back)


def segment_sum(a: Var, indptr) -> Var:
    """Sum consecutive row segments ``a[indptr[s]:indptr[s+1]]``."""
    indptr = np.asarray(indptr, dtype=np.int64)
    if indptr[-1] != a.shape[0]:
        raise ValueError("segment_sum: indptr does not cover the rows")
    counts = np.diff(indptr)
    if np.any(counts == 0):
        raise ValueError("segment_sum: empty segment")
    out = np.add.reduceat(a.data, indptr[:-1], axis=0)
    return _node(out, (a,), lambda g: (np.repeat(g, counts, axis=0),))


def neighbor_aggregate(weights: Var, values: Var, indptr, cols, width: int) -> Var:
    """Per-head weighted neighbour sums in CSR layout.

    ``weights`` is (E, h) with one column per head, ``values`` is (N, h * width).
    Row i of head block r is ``sum_e weights[e, r] * values[cols[e], r-block]``
    over the edges e of segment i; evaluated as h sparse products, so no
    (E, h * width) message matrix is formed.
    """
    indptr = np.asarray(indptr, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    n_rows = len(indptr) - 1
    n_edges, heads = weights.shape
    if n_edges != len(cols) or indptr[-1] != n_edges:
        raise ValueError("neighbor_aggregate: weights and CSR structure disagree")
    if values.shape[1] != heads * width:
        raise ValueError(f"neighbor_aggregate: values need {heads * width} columns, got {values.shape[1]}")
    dst = np.repeat(np.arange(n_rows), np.diff(indptr))
    shape = (n_rows, values.shape[0])
    if n_rows * shape[1] <= 4096:
        return _aggregate_small(weights, values, dst, cols, shape, heads, width)
    mats = [sp.csr_matrix((weights.data[:, r], cols, indptr), shape=shape) for r in range(heads)]
    V = values.data
    blocks = [slice(r * width, (r + 1) * width) for r in range(heads)]
    out = np.hstack([np.asarray(m @ V[:, b]) for m, b in zip(mats, blocks)])

    # dense G V^T then pick edges when the graph is dense enough for BLAS to win
    dense_pick = n_rows * shape[1] <= min(32 * n_edges, 25_000_000)

    def back(g):
        dw = np.empty((n_edges, heads))
        dv = np.empty_like(V)
        for r, (m, b) in enumerate(zip(mats, blocks)):
            gb = np.ascontiguousarray(g[:, b])
            dv[:, b] = m.T @ gb
            if dense_pick:
                dw[:, r] = (gb @ V[:, b].T)[dst, cols]
            else:
                dw[:, r] = np.einsum("ij,ij->i", gb[dst], V[cols, b])
        return dw, dv

    return _node(out, (weights, values), back)


def _aggregate_small(weights: Var, values: Var, dst, cols, shape, heads: int, width: int) -> Var:
    """Dense batched form of neighbor_aggregate for tiny graphs (less call overhead)."""
    n_rows, n_cols = shape
    Wd = np.zeros((heads, n_rows, n_cols))
    Wd[:, dst, cols] = weights.data.T
    V = values.data.reshape(n_cols, heads, width).transpose(1, 0, 2)
    out = (Wd @ V).transpose(1, 0, 2).reshape(n_rows, heads * width)

    def back(g):
        G = g.reshape(n_rows, heads, width).transpose(1, 0, 2)
        dv = (Wd.transpose(0, 2, 1) @ G).transpose(1, 0, 2).reshape(n_cols, heads * width)
        dw = (G @ V.transpose(0, 2, 1))[:, dst, cols].T
        return dw, dv

    return _node(out, (weights, values), back)


def segment_softmax(a: Var, indptr) -> Var:
    """Softmax over each row segment, independently per column."""
    indptr = np.asarray(indptr, dtype=np.int64)
    counts = np.diff(indptr)
    if indptr[-1] != a.shape[0] or np.any(counts == 0):
        raise ValueError("segment_softmax: indptr must tile the rows with non-empty segments")
    starts = indptr[:-1]
    shift = np.repeat(np.maximum.reduceat(a.data, starts, axis=0), counts, axis=0)
    ex = np.exp(a.data - shift)
    y = ex / np.repeat(np.add.reduceat(ex, starts, axis=0), counts, axis=0)

    def back(g):
        dot = np.repeat(np.add.reduceat(g * y, starts, axis=0), counts, axis=0)
        return (y * (g - dot),)

    return _node(y, (a,), back)


def leaky_relu(a: Var, slope: float = 0.2) -> Var:
    pos = a.data > 0
    return _node(np.where(pos, a.data, slope * a.data), (a,), lambda g: (np.where(pos, g, slope * g),))


def elu(a: Var, alpha: float = 1.0) -> Var:
    pos = a.data > 0
    neg = alpha * np.expm1(np.minimum(a.data, 0.0))
    out = np.where(pos, a.data, neg)
    return _node(out, (a,), lambda g: (np.where(pos, g, g * (neg + alpha)),))


def relu(a: Var) -> Var:
    pos = a.data > 0
    return _node(np.where(pos, a.data, 0.0), (a,), lambda g: (np.where(pos, g, 0.0),))


def identity(a: Var) -> Var:
    return a


def sigmoid(a: Var) -> Var:
    x = a.data
    y = np.empty_like(x)
    p = x >= 0
    y[p] = 1.0 / (1.0 + np.exp(-x[p]))
    ex = np.exp(x[~p])
    y[~p] = ex / (1.0 + ex)
    return _node(y, (a,), lambda g: (g * y * (1.0 - y),))


def softplus(a: Var) -> Var:
    """log(1 + e^x), evaluated without overflow; derivative sigmoid(x)."""
    x = a.data
    y = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))
    s = 0.5 * (1.0 + np.tanh(0.5 * x))
    return _node(y, (a,), lambda g: (g * s,))


def row_softmax(a: Var) -> Var:
    ex = np.exp(a.data - a.data.max(axis=1, keepdims=True))
    y = ex / ex.sum(axis=1, keepdims=True)
    return _node(y, (a,), lambda g: (y * (g - (g * y).sum(axis=1, keepdims=True)),))


def log(a: Var) -> Var:
    if np.any(a.data <= 0):
        raise GradientError("log of non-positive value")
    return _node(np.log(a.data), (a,), lambda g: (g / a.data,))


def clip(a: Var, lo: float, hi: float) -> Var:
    inside = (a.data >= lo) & (a.data <= hi)
    return _node(np.clip(a.data, lo, hi), (a,), lambda g: (np.where(inside, g, 0.0),))


def clip_prob(a: Var) -> Var:
    """Clamp probabilities to [1e-12, 1 - 1e-12] ahead of a log."""
    return clip(a, PROB_EPS, 1.0 - PROB_EPS)


def total(a: Var) -> Var:
    """Sum of all entries, as a 1x1 value."""
    return _node(np.full((1, 1), a.data.sum()), (a,), lambda g: (np.full(a.shape, g[0, 0]),))


def mean(a: Var) -> Var:
    n = a.data.size
    return _node(np.full((1, 1), a.data.mean()), (a,), lambda g: (np.full(a.shape, g[0, 0] / n),))


def row_sum(a: Var) -> Var:
    return _node(a.data.sum(axis=1, keepdims=True), (a,), lambda g: (np.broadcast_to(g, a.shape).copy(),))


def group_sum_cols(a: Var, group: int) -> Var:
    """Sum each run of ``group`` adjacent columns: (n, r*group) -> (n, r)."""
    n, c = a.shape
    if c % group:
        raise ValueError(f"group_sum_cols: {c} columns not divisible by {group}")
    out = a.data.reshape(n, c // group, group).sum(axis=2)
    return _node(out, (a,), lambda g: (np.repeat(g, group, axis=1),))


def repeat_cols(a: Var, times: int) -> Var:
    """Repeat each column ``times`` times in place: (n, r) -> (n, r*times)."""
    n, c = a.shape
    return _node(np.repeat(a.data, times, axis=1), (a,), lambda g: (g.reshape(n, c, times).sum(axis=2),))


def trace_quadratic(H: Var, operator) -> Var:
    """Tr(H^T B H) for a fixed symmetric operator exposing ``apply`` (B @ H)."""
    BH = operator.apply(H.data)
    val = float(np.sum(H.data * BH))
    return _node(np.full((1, 1), val), (H,), lambda g: (2.0 * g[0, 0] * BH,))


_OPS = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "scale": scale,
    "matmul": matmul,
    "transpose": transpose,
    "concat": concat,
    "slice_rows": slice_rows,
    "gather_rows": gather_rows,
    "block_diag_rows": block_diag_rows,
    "segment_sum": segment_sum,
    "segment_softmax": segment_softmax,
    "neighbor_aggregate": neighbor_aggregate,
    "leaky_relu": leaky_relu,
    "softplus": softplus,
    "elu": elu,
    "relu": relu,
    "identity": identity,
    "sigmoid": sigmoid,
    "row_softmax": row_softmax,
    "log": log,
    "clip": clip,
    "clip_prob": clip_prob,
    "sum": total,
    "mean": mean,
    "row_sum": row_sum,
    "group_sum_cols": group_sum_cols,
    "repeat_cols": repeat_cols,
    "trace_quadratic": trace_quadratic,
}


def op_set() -> dict[str, Callable]:
    """Catalogue of differentiable primitives by name."""
    return dict(_OPS)


def backward(loss: Var) -> dict[str, np.ndarray]:
    """Gradients of a scalar ``loss`` with respect to every registered parameter."""
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not np.isfinite(loss.data).all():
        raise GradientError("loss is not finite")
    tape = loss.tape
    grads: dict[int, np.ndarray] = {loss.index: np.ones_like(loss.data)}
    for node in reversed(tape.nodes[: loss.index + 1]):
        g = grads.pop(node.index, None) if node.name is None else grads.get(node.index)
        if g is None or node.backward_fn is None:
            continue
        for parent, pg in zip(node.parents, node.backward_fn(g)):
            if pg is None:
                continue
            if not np.isfinite(pg).all():
                raise GradientError(f"non-finite gradient flowing into node {parent.index}")
            if parent.index in grads:
                grads[parent.index] = grads[parent.index] + pg
            else:
                grads[parent.index] = pg
    return {
        name: grads.get(v.index, np.zeros_like(v.data)).reshape(v.shape)
        for name, v in tape.params.items()
    }


def grad_check(
    builder: Callable[[Tape, dict[str, Var]], Var],
    params: Mapping[str, np.ndarray],
    epsilon: float = 1e-5,
    floor: float = 1e-7,
) -> dict[str, float]:
    """Worst entrywise relative error of ``backward`` against central differences.

    The relative error of one entry is ``|g - n| / max(|g|, |n|, floor)``.
    """
    params = {k: np.array(v, dtype=np.float64) for k, v in params.items()}

    def evaluate(values) -> tuple[float, Var]:
        tape = Tape()
        vs = {k: tape.param(k, v) for k, v in values.items()}
        out = builder(tape, vs)
        return float(out.data.reshape(-1)[0]), out

    _, out = evaluate(params)
    analytic = backward(out)
    errors = {}
    for name, p in params.items():
        worst = 0.0
        for idx in np.ndindex(p.shape):
            orig = p[idx]
            p[idx] = orig + epsilon
            fp, _ = evaluate(params)
            p[idx] = orig - epsilon
            fm, _ = evaluate(params)
            p[idx] = orig
            num = (fp - fm) / (2.0 * epsilon)
            ana = analytic[name][idx]
            denom = max(abs(ana), abs(num), floor)
            worst = max(worst, abs(ana - num) / denom)
        errors[name] = worst
    return errors
