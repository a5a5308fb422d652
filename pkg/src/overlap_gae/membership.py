"""Soft memberships to an overlapping cover."""

from __future__ import annotations

import numpy as np

from .graph import CommunityCover


def assign_communities(H: np.ndarray, zeta: float) -> CommunityCover:
    """Put node i in community p when H[i, p] >= zeta.

    Rows with no entry at or above ``zeta`` fall back to their argmax
    (lowest index on ties). Communities left empty are dropped; ``labels``
    on the result keeps the original column of each survivor.
    """
    if not zeta > 0:
        raise ValueError(f"zeta must be positive, got {zeta}")
    H = np.asarray(H, dtype=np.float64)
    member = H >= zeta
    orphans = ~member.any(axis=1)
    member[np.flatnonzero(orphans), np.argmax(H[orphans], axis=1)] = True
    keep = np.flatnonzero(member.any(axis=0))
    comms = tuple(frozenset(np.flatnonzero(member[:, p]).tolist()) for p in keep)
    return CommunityCover(comms, H.shape[0], tuple(int(p) for p in keep))


def orphan_count(H: np.ndarray, zeta: float) -> int:
    """Rows that would need the argmax fallback."""
    return int(np.count_nonzero((np.asarray(H) < zeta).all(axis=1)))
