"""Agreement between overlapping covers: overlapping NMI and best-match F1.

The NMI follows the lack-of-information construction for covers: each
community is a binary variable over the nodes, each community of one cover
is explained by its best-matching community of the other, and a match is
only admissible when agreement outweighs disagreement. Variants:

* ``"max"``: I(X:Y) / max(H(X), H(Y))  (default)
* ``"sum"``: I(X:Y) / ((H(X) + H(Y)) / 2)
* ``"lfk"``: 1 - (mean normalised H(X_i|Y) + mean normalised H(Y_j|X)) / 2
"""

from __future__ import annotations

import warnings

import numpy as np

from .graph import CommunityCover

ONMI_VARIANTS = ("max", "sum", "lfk")


def _h(w: np.ndarray, n: int) -> np.ndarray:
    p = np.asarray(w, dtype=np.float64) / n
    with np.errstate(divide="ignore", invalid="ignore"):
        out = -p * np.log2(p)
    return np.where(p > 0, out, 0.0)


def _sizes_and_overlaps(a: CommunityCover, b: CommunityCover):
    A, B = a.indicator(), b.indicator()
    return A.sum(axis=0), B.sum(axis=0), A.T @ B


def _conditional(sx, sy, overlap, n):
    """H(X_i | Y) for every community X_i of one cover, plus H(X_i)."""
    n11 = overlap
    n10 = sx[:, None] - overlap
    n01 = sy[None, :] - overlap
    n00 = n - sx[:, None] - sy[None, :] + overlap
    h11, h10, h01, h00 = _h(n11, n), _h(n10, n), _h(n01, n), _h(n00, n)
    cond = h11 + h10 + h01 + h00 - _h(sy, n)[None, :] - _h(n - sy, n)[None, :]
    admissible = h11 + h00 >= h10 + h01
    hx = _h(sx, n) + _h(n - sx, n)
    best = np.where(admissible, cond, np.inf).min(axis=1) if cond.shape[1] else np.full(len(sx), np.inf)
    return np.minimum(np.where(np.isfinite(best), best, hx), hx), hx


def onmi(pred: CommunityCover, truth: CommunityCover, variant: str = "max") -> float:
    """Overlapping normalised mutual information, symmetric, clamped to [0, 1]."""
    if variant not in ONMI_VARIANTS:
        raise ValueError(f"unknown ONMI variant {variant!r}; choose from {ONMI_VARIANTS}")
    if pred.num_nodes != truth.num_nodes:
        raise ValueError("covers address different node universes")
    if pred.k == 0 or truth.k == 0:
        warnings.warn("ONMI of an empty cover is reported as 0", RuntimeWarning, stacklevel=2)
        return 0.0
    if set(pred.communities) == set(truth.communities):
        return 1.0
    n = pred.num_nodes
    sx, sy, ov = _sizes_and_overlaps(pred, truth)
    hx_y, hx = _conditional(sx, sy, ov, n)
    hy_x, hy = _conditional(sy, sx, ov.T, n)
    if variant == "lfk":
        with np.errstate(divide="ignore", invalid="ignore"):
            rx = np.where(hx > 0, hx_y / hx, 0.0)
            ry = np.where(hy > 0, hy_x / hy, 0.0)
        value = 1.0 - 0.5 * (rx.mean() + ry.mean())
    else:
        HX, HY = hx.sum(), hy.sum()
        mutual = 0.5 * (HX - hx_y.sum() + HY - hy_x.sum())
        denom = max(HX, HY) if variant == "max" else 0.5 * (HX + HY)
        value = mutual / denom if denom > 0 else 0.0
    return float(min(1.0, max(0.0, value)))


def f1_matrix(a: CommunityCover, b: CommunityCover) -> np.ndarray:
    """F1 of every community of ``a`` against every community of ``b``."""
    sa, sb, ov = _sizes_and_overlaps(a, b)
    return 2.0 * ov / (sa[:, None] + sb[None, :])


def overlapping_f1(pred: CommunityCover, truth: CommunityCover) -> float:
    """Symmetric average best-match F1."""
    if pred.num_nodes != truth.num_nodes:
        raise ValueError("covers address different node universes")
    if pred.k == 0 or truth.k == 0:
        return 0.0
    F = f1_matrix(pred, truth)
    return float(0.5 * (F.max(axis=1).mean() + F.max(axis=0).mean()))
