"""Reconstruction, supervision and modularity losses and their combination."""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from . import autodiff as ad
from .graph import AttributedGraph, PriorLabels


class ModularityOperator:
    """Matrix-free modularity matrix B_ij = (A_ij - d_i d_j / 2M) / 2M.

    ``apply(V)`` returns ``B @ V`` in O(M + N k) without forming B.
    """

    def __init__(self, graph: AttributedGraph):
        if graph.num_edges == 0:
            raise ValueError("modularity is undefined for a graph without edges")
        self.num_edges = graph.num_edges
        self.adjacency: sp.csr_matrix = graph.adjacency()
        self.degrees = np.asarray(graph.degrees, dtype=np.float64)
        self.two_m = 2.0 * graph.num_edges

    def apply(self, V: np.ndarray) -> np.ndarray:
        V = np.asarray(V, dtype=np.float64)
        vec = V.ndim == 1
        if vec:
            V = V[:, None]
        AV = self.adjacency @ V
        dV = self.degrees @ V
        out = (AV - np.outer(self.degrees, dV) / self.two_m) / self.two_m
        return out[:, 0] if vec else out

    def quadratic(self, H: np.ndarray) -> float:
        """Tr(H^T B H)."""
        return float(np.sum(H * self.apply(H)))

    def dense(self) -> np.ndarray:
        A = self.adjacency.toarray()
        return (A - np.outer(self.degrees, self.degrees) / self.two_m) / self.two_m


def reconstruction_loss(graph: AttributedGraph, a_hat: ad.Var, adjacency: np.ndarray | None = None) -> ad.Var:
    """Mean binary cross-entropy over ordered pairs i != j of a dense N x N link matrix.

    ``adjacency`` may pass a precomputed dense 0/1 matrix of ``graph``.
    """
    n = graph.num_nodes
    if a_hat.shape != (n, n):
        raise ValueError(f"expected {n}x{n} link probabilities, got {a_hat.shape}")
    A = graph.adjacency().toarray() if adjacency is None else adjacency
    off = 1.0 - np.eye(n)
    p = ad.clip_prob(a_hat)
    ll = ad.mul(A, ad.log(p)) + ad.mul(off - A, ad.log(1.0 - p))
    return ad.scale(ad.total(ll), -1.0 / (n * (n - 1)))


def reconstruction_loss_from_logits(graph: AttributedGraph, logits: ad.Var, adjacency: np.ndarray | None = None) -> ad.Var:
    """Same mean cross-entropy as :func:`reconstruction_loss`, taking Z Z^T directly.

    Uses -log sigmoid(x) = softplus(-x) and -log(1 - sigmoid(x)) = softplus(x),
    which agrees with the clipped form while |x| < ln(1 / PROB_EPS) and keeps a
    gradient for saturated pairs, where clipping would return zero.
    """
    n = graph.num_nodes
    if logits.shape != (n, n):
        raise ValueError(f"expected {n}x{n} logits, got {logits.shape}")
    A = graph.adjacency().toarray() if adjacency is None else adjacency
    off = 1.0 - np.eye(n)
    per_pair = ad.sub(ad.mul(ad.softplus(logits), off), ad.mul(logits, A))
    return ad.scale(ad.total(per_pair), 1.0 / (n * (n - 1)))


def pair_logits(Z: ad.Var, rows, cols) -> ad.Var:
    """z_i . z_j for the listed pairs, as an (P, 1) column."""
    return ad.row_sum(ad.mul(ad.gather_rows(Z, rows), ad.gather_rows(Z, cols)))


def pair_probabilities(Z: ad.Var, rows, cols) -> ad.Var:
    """sigmoid(z_i . z_j) for the listed pairs, as an (P, 1) column."""
    return ad.sigmoid(pair_logits(Z, rows, cols))


def sampled_reconstruction_loss(graph: AttributedGraph, Z: ad.Var, rng: np.random.Generator) -> ad.Var:
    """Unbiased estimate of :func:`reconstruction_loss` from sampled non-edges.

    Every ordered edge contributes exactly; as many uniform ordered non-edge
    pairs are drawn and reweighted to stand for all non-edges.
    """
    n = graph.num_nodes
    e = graph.edges
    pos_r = np.r_[e[:, 0], e[:, 1]]
    pos_c = np.r_[e[:, 1], e[:, 0]]
    n_pos = len(pos_r)
    n_neg_total = n * (n - 1) - n_pos
    edge_keys = np.unique(pos_r * n + pos_c)
    need = n_pos
    neg_r, neg_c = [], []
    while need > 0:
        r = rng.integers(0, n, size=2 * need)
        c = rng.integers(0, n, size=2 * need)
        ok = (r != c) & ~np.isin(r * n + c, edge_keys, assume_unique=False)
        r, c = r[ok][:need], c[ok][:need]
        neg_r.append(r)
        neg_c.append(c)
        need -= len(r)
    neg_r, neg_c = np.concatenate(neg_r), np.concatenate(neg_c)
    weight = n_neg_total / max(len(neg_r), 1)
    # softplus form, as in reconstruction_loss_from_logits
    pos = ad.total(ad.softplus(ad.scale(pair_logits(Z, pos_r, pos_c), -1.0)))
    neg = ad.total(ad.softplus(pair_logits(Z, neg_r, neg_c)))
    return ad.scale(ad.add(pos, ad.scale(neg, weight)), 1.0 / (n * (n - 1)))


def modularity_loss(H: ad.Var, op: ModularityOperator) -> ad.Var:
    """Relaxed modularity Tr(H^T B H)."""
    return ad.trace_quadratic(H, op)


def modularity_value(H: np.ndarray, op: ModularityOperator) -> float:
    """Factored form (1/2M)[sum_(i,j) in E 2 H_i.H_j - |d^T H|^2 / 2M]."""
    H = np.asarray(H, dtype=np.float64)
    A = op.adjacency
    coo = sp.triu(A, k=1).tocoo()
    inner = np.sum(H[coo.row] * H[coo.col])
    dH = op.degrees @ H
    return float((2.0 * inner - dH @ dH / op.two_m) / op.two_m)


def supervision_loss(H: ad.Var, prior: PriorLabels) -> ad.Var:
    """Cross-entropy over labeled nodes, averaged by the number of labeled nodes."""
    if len(prior) == 0:
        raise ValueError("supervision loss needs at least one prior label")
    if prior.k != H.shape[1]:
        raise ValueError(f"prior has k={prior.k} communities, membership matrix has {H.shape[1]}")
    nodes, Y = prior.matrix()
    logp = ad.log(ad.clip_prob(ad.gather_rows(H, nodes)))
    return ad.scale(ad.total(ad.mul(Y, logp)), -1.0 / len(nodes))


def total_loss(l_r, l_s, l_c, alpha: float, beta: float):
    """L_r + alpha L_s - beta L_c; works on floats and on tape values."""
    if isinstance(l_r, ad.Var) or isinstance(l_s, ad.Var) or isinstance(l_c, ad.Var):
        return ad.add(ad.add(l_r, ad.scale(_as_var(l_s, l_r, l_c), alpha)), ad.scale(_as_var(l_c, l_r, l_s), -beta))
    return l_r + alpha * l_s - beta * l_c


def _as_var(x, *others) -> ad.Var:
    if isinstance(x, ad.Var):
        return x
    tape = next(o.tape for o in others if isinstance(o, ad.Var))
    return tape.const(np.full((1, 1), float(x)))
