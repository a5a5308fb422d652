"""Attribute corruption by exchanging feature rows between random nodes."""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp


def swap_pairs(X, pairs: np.ndarray):
    """Exchange rows ``pairs[t, 0]`` and ``pairs[t, 1]`` for every t."""
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    perm = np.arange(X.shape[0])
    perm[pairs[:, 0]] = pairs[:, 1]
    perm[pairs[:, 1]] = pairs[:, 0]
    return _take_rows(X, perm)


def corruption_pairs(num_nodes: int, p_mis: float, seed: int) -> np.ndarray:
    """Random perfect matching on floor(p_mis * N) nodes, rounded down to even size."""
    if not 0.0 <= p_mis <= 1.0:
        raise ValueError(f"p_mis must lie in [0, 1], got {p_mis}")
    rng = np.random.default_rng(seed)
    count = int(np.floor(p_mis * num_nodes + 1e-9))
    chosen = rng.choice(num_nodes, size=count, replace=False)
    chosen = rng.permutation(chosen[: 2 * (count // 2)])
    return chosen.reshape(-1, 2)


def perturb_attributes(X, p_mis: float, seed: int, mode: str = "swap"):
    """Corrupted copy of ``X``; rows untouched outside the selection.

    ``mode="swap"`` exchanges rows pairwise (an involution).
    ``mode="shuffle"`` instead permutes the selected rows uniformly at random.
    """
    n = X.shape[0]
    if mode == "swap":
        return swap_pairs(X, corruption_pairs(n, p_mis, seed))
    if mode != "shuffle":
        raise ValueError(f"unknown perturbation mode {mode!r}")
    chosen = corruption_pairs(n, p_mis, seed).ravel()
    rng = np.random.default_rng([seed, 1])
    perm = np.arange(n)
    perm[chosen] = chosen[rng.permutation(len(chosen))]
    return _take_rows(X, perm)


def _take_rows(X, perm):
    if sp.issparse(X):
        return sp.csr_matrix(X)[perm]
    return np.asarray(X)[perm].copy()
