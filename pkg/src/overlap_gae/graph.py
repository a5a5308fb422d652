"""Attributed graphs, community covers and the dataset file formats.

File formats (all UTF-8 text, ``#`` starts a comment line):

* edge file: ``u v`` per line, integer node ids, undirected, duplicates and
  reversed duplicates collapse to one edge;
* feature file: dense CSV (one row per node, optional header) or sparse
  coordinate text ``node_id feature_id value``;
* cover file: one community per line, whitespace-separated node ids.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp


class DatasetError(ValueError):
    """Raised when an input file cannot be parsed or is inconsistent."""


class SingularThresholdError(ValueError):
    """The membership threshold is undefined for complete (or tiny) graphs."""


def _freeze(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class CommunityCover:
    """Overlapping communities as a tuple of node sets over ``range(num_nodes)``."""

    communities: tuple[frozenset[int], ...]
    num_nodes: int
    # original community index of each entry, when some were dropped
    labels: tuple[int, ...] | None = field(default=None, compare=False)

    def __post_init__(self):
        comms = tuple(frozenset(int(v) for v in c) for c in self.communities)
        object.__setattr__(self, "communities", comms)
        if self.labels is not None and len(self.labels) != len(comms):
            raise ValueError("labels must have one entry per community")
        for q, c in enumerate(comms):
            if not c:
                raise ValueError(f"community {q} is empty")
            bad = [v for v in c if v < 0 or v >= self.num_nodes]
            if bad:
                raise ValueError(f"community {q} has out-of-range member {min(bad)}")

    @property
    def k(self) -> int:
        return len(self.communities)

    def __len__(self) -> int:
        return len(self.communities)

    def __iter__(self):
        return iter(self.communities)

    def indicator(self) -> np.ndarray:
        """N x k 0/1 membership matrix."""
        Y = np.zeros((self.num_nodes, self.k))
        for q, c in enumerate(self.communities):
            Y[list(c), q] = 1.0
        return Y

    def node_memberships(self) -> list[list[int]]:
        out: list[list[int]] = [[] for _ in range(self.num_nodes)]
        for q, c in enumerate(self.communities):
            for v in c:
                out[v].append(q)
        return out

    @classmethod
    def from_lists(cls, communities: Iterable[Iterable[int]], num_nodes: int) -> "CommunityCover":
        return cls(tuple(frozenset(c) for c in communities), num_nodes)


@dataclass(frozen=True)
class PriorLabels:
    """Sparse view of the prior 0/1 matrix: (node, community) pairs."""

    entries: tuple[tuple[int, int], ...]
    k: int

    def __post_init__(self):
        entries = tuple(sorted({(int(i), int(q)) for i, q in self.entries}))
        if len(entries) != len(self.entries):
            raise ValueError("duplicate (node, community) prior entry")
        for i, q in entries:
            if q < 0 or q >= self.k:
                raise ValueError(f"prior community index {q} outside [0, {self.k})")
        object.__setattr__(self, "entries", entries)

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def nodes(self) -> np.ndarray:
        """Sorted distinct labeled nodes."""
        return np.array(sorted({i for i, _ in self.entries}), dtype=np.int64)

    def matrix(self) -> tuple[np.ndarray, np.ndarray]:
        """(labeled nodes, |T| x k 0/1 matrix of their prior rows)."""
        nodes = self.nodes
        pos = {int(v): r for r, v in enumerate(nodes)}
        Y = np.zeros((len(nodes), self.k))
        for i, q in self.entries:
            Y[pos[i], q] = 1.0
        return nodes, Y


@dataclass(frozen=True, eq=False)
class AttributedGraph:
    """Immutable undirected attributed graph.

    ``edges`` holds each undirected edge once as ``(i, j)`` with ``i < j``.
    The neighbour index is a CSR structure (``indptr``, ``indices``) that
    includes one self-loop per node; degrees, ``num_edges`` and the
    adjacency matrix never count self-loops.
    """

    num_nodes: int
    edges: np.ndarray
    features: np.ndarray | sp.csr_matrix
    ground_truth: CommunityCover | None = None
    node_ids: np.ndarray | None = None
    degrees: np.ndarray = field(init=False)
    indptr: np.ndarray = field(init=False)
    indices: np.ndarray = field(init=False)

    def __post_init__(self):
        n = int(self.num_nodes)
        e = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        deg = np.bincount(e.ravel(), minlength=n).astype(np.int64) if e.size else np.zeros(n, np.int64)
        loops = np.arange(n, dtype=np.int64)
        dst = np.concatenate([e[:, 0], e[:, 1], loops])
        src = np.concatenate([e[:, 1], e[:, 0], loops])
        order = np.lexsort((src, dst))
        indptr = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(np.bincount(dst, minlength=n), out=indptr[1:])
        if self.node_ids is None:
            object.__setattr__(self, "node_ids", np.arange(n, dtype=np.int64))
        object.__setattr__(self, "edges", _freeze(e))
        object.__setattr__(self, "degrees", _freeze(deg))
        object.__setattr__(self, "indptr", _freeze(indptr))
        object.__setattr__(self, "indices", _freeze(src[order].copy()))
        if isinstance(self.features, np.ndarray):
            object.__setattr__(self, "features", _freeze(np.asarray(self.features, dtype=np.float64)))

    @property
    def num_edges(self) -> int:
        return int(self.edges.shape[0])

    @property
    def num_features(self) -> int:
        return int(self.features.shape[1])

    @property
    def density(self) -> float:
        n = self.num_nodes
        return 2.0 * self.num_edges / (n * (n - 1)) if n > 1 else 0.0

    def neighbors(self, i: int) -> np.ndarray:
        """Neighbourhood of ``i`` used for attention, self included."""
        return self.indices[self.indptr[i]:self.indptr[i + 1]]

    def attention_pairs(self) -> tuple[np.ndarray, np.ndarray]:
        """(target, source) index arrays for every neighbourhood entry, grouped by target."""
        dst = np.repeat(np.arange(self.num_nodes), np.diff(self.indptr))
        return dst, np.asarray(self.indices)

    def adjacency(self) -> sp.csr_matrix:
        n = self.num_nodes
        e = self.edges
        data = np.ones(2 * len(e))
        A = sp.coo_matrix((data, (np.r_[e[:, 0], e[:, 1]], np.r_[e[:, 1], e[:, 0]])), shape=(n, n))
        return A.tocsr()

    def dense_features(self) -> np.ndarray:
        X = self.features
        return X.toarray() if sp.issparse(X) else np.asarray(X)

    def with_features(self, features) -> "AttributedGraph":
        return AttributedGraph(self.num_nodes, self.edges, features, self.ground_truth, self.node_ids)


def from_edge_list(
    num_nodes: int,
    edges: Iterable[Sequence[int]],
    features=None,
    ground_truth: CommunityCover | None = None,
) -> AttributedGraph:
    """Build a graph from possibly-duplicated undirected pairs (self-loops dropped)."""
    pairs = {(min(int(u), int(v)), max(int(u), int(v))) for u, v in edges if int(u) != int(v)}
    e = np.array(sorted(pairs), dtype=np.int64).reshape(-1, 2)
    if features is None:
        features = np.ones((num_nodes, 1))
    return AttributedGraph(num_nodes, e, features, ground_truth)


def validate_graph(graph: AttributedGraph) -> list[str]:
    """Return human-readable invariant violations; an empty list means valid."""
    problems = []
    n = graph.num_nodes
    e = np.asarray(graph.edges)
    if e.size:
        if e.min() < 0 or e.max() >= n:
            problems.append("edge endpoint outside [0, N)")
        if np.any(e[:, 0] == e[:, 1]):
            problems.append("self-loop present in edge list")
        canon = np.sort(e, axis=1)
        if len(np.unique(canon, axis=0)) != len(e):
            problems.append("duplicate undirected edge")
    deg = np.asarray(graph.degrees)
    if len(deg) != n:
        problems.append(f"degree vector has length {len(deg)}, expected N={n}")
    else:
        if int(deg.sum()) != 2 * len(e):
            problems.append(f"degree-sum violation: sum(degrees)={int(deg.sum())} != 2M={2 * len(e)}")
        elif e.size and np.any(np.bincount(e.ravel(), minlength=n) != deg):
            problems.append("degree mismatch: degrees disagree with incident edge counts")
    rows = graph.features.shape[0]
    if rows != n:
        problems.append(f"feature row-count violation: {rows} rows for N={n} nodes")
    indptr, idx = np.asarray(graph.indptr), np.asarray(graph.indices)
    if len(indptr) == n + 1 and len(idx) == indptr[-1]:
        dst = np.repeat(np.arange(n), np.diff(indptr))
        off = dst != idx
        fwd = set(zip(dst[off].tolist(), idx[off].tolist()))
        if any((j, i) not in fwd for i, j in fwd):
            problems.append("neighbour index is not symmetric")
        if np.count_nonzero(~off) != n:
            problems.append("neighbour index must hold exactly one self-loop per node")
    else:
        problems.append("malformed neighbour index")
    gt = graph.ground_truth
    if gt is not None and gt.num_nodes != n:
        problems.append(f"ground-truth cover addresses {gt.num_nodes} nodes, graph has {n}")
    return problems


def zeta_from_counts(num_nodes: int, num_edges: int) -> float:
    if num_nodes < 2:
        raise SingularThresholdError("threshold needs at least two nodes")
    density = 2.0 * num_edges / (num_nodes * (num_nodes - 1))
    if density >= 1.0:
        raise SingularThresholdError(f"edge density {density:g} >= 1 makes log(1 - density) singular")
    return math.sqrt(-math.log1p(-density))


def zeta_threshold(graph: AttributedGraph) -> float:
    """Density-derived membership cutoff sqrt(-ln(1 - 2M / (N(N-1))))."""
    return zeta_from_counts(graph.num_nodes, graph.num_edges)


# --------------------------------------------------------------------------- io


def _data_lines(path: Path):
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            s = line.strip()
            if not s or s.startswith("#"):
                continue
            yield lineno, s


def _read_edges(path: Path) -> list[tuple[int, int]]:
    out = []
    for lineno, s in _data_lines(path):
        parts = s.split()
        if len(parts) < 2:
            raise DatasetError(f"{path}:{lineno}: expected two node ids, got {s!r}")
        try:
            u, v = int(parts[0]), int(parts[1])
        except ValueError:
            raise DatasetError(f"{path}:{lineno}: node ids must be integers, got {s!r}") from None
        if u < 0 or v < 0:
            raise DatasetError(f"{path}:{lineno}: negative node id")
        out.append((u, v))
    return out


def _read_dense_features(path: Path) -> np.ndarray:
    rows = []
    first = True
    for lineno, s in _data_lines(path):
        parts = [p.strip() for p in s.replace("\t", ",").split(",")]
        try:
            rows.append([float(p) for p in parts])
        except ValueError:
            if first:
                first = False
                continue  # header
            raise DatasetError(f"{path}:{lineno}: non-numeric feature value in {s!r}") from None
        first = False
        if len(rows[-1]) != len(rows[0]):
            raise DatasetError(f"{path}:{lineno}: expected {len(rows[0])} columns, got {len(rows[-1])}")
    if not rows:
        raise DatasetError(f"{path}: no feature rows")
    return np.array(rows, dtype=np.float64)


def _read_sparse_features(path: Path) -> list[tuple[int, int, float, int]]:
    out = []
    for lineno, s in _data_lines(path):
        parts = s.split()
        if len(parts) != 3:
            raise DatasetError(f"{path}:{lineno}: expected 'node_id feature_id value', got {s!r}")
        try:
            out.append((int(parts[0]), int(parts[1]), float(parts[2]), lineno))
        except ValueError:
            raise DatasetError(f"{path}:{lineno}: malformed sparse feature entry {s!r}") from None
    return out


def _read_cover_ids(path: Path) -> list[tuple[int, list[int]]]:
    out = []
    for lineno, s in _data_lines(path):
        try:
            out.append((lineno, [int(p) for p in s.split()]))
        except ValueError:
            raise DatasetError(f"{path}:{lineno}: community members must be integer ids") from None
    return out


def feature_format(path: str | Path, fmt: str | None = None) -> str:
    if fmt in ("dense", "sparse"):
        return fmt
    if fmt not in (None, "auto"):
        raise ValueError(f"unknown feature format {fmt!r}")
    return "dense" if Path(path).suffix.lower() in (".csv", ".tsv") else "sparse"


def load_dataset(
    edge_path: str | Path,
    feature_path: str | Path,
    cover_path: str | Path | None = None,
    feature_format_hint: str | None = None,
    normalize_features: bool = False,
) -> AttributedGraph:
    """Read the three dataset files into a validated :class:`AttributedGraph`.

    Node ids are remapped densely to ``0..N-1`` in sorted order; the
    original ids are kept in ``graph.node_ids``. A dense feature file whose
    row count covers every id (``max id < rows``) keeps ids as row indices,
    which lets isolated nodes exist.
    """
    edge_path, feature_path = Path(edge_path), Path(feature_path)
    raw_edges = _read_edges(edge_path)
    raw_cover = _read_cover_ids(Path(cover_path)) if cover_path is not None else None
    fmt = feature_format(feature_path, feature_format_hint)

    seen = {u for e in raw_edges for u in e}
    if fmt == "dense":
        X = _read_dense_features(feature_path)
        if not seen or max(seen) < X.shape[0]:
            ids = np.arange(X.shape[0], dtype=np.int64)
        else:
            ids = np.array(sorted(seen), dtype=np.int64)
        if X.shape[0] != len(ids):
            raise DatasetError(f"{feature_path}: {X.shape[0]} feature rows for N={len(ids)} nodes")
        features = X
    else:
        entries = _read_sparse_features(feature_path)
        ids = np.array(sorted(seen | {t[0] for t in entries}), dtype=np.int64)
        remap = {int(v): i for i, v in enumerate(ids)}
        m = 1 + max((t[1] for t in entries), default=-1)
        rows = [remap[t[0]] for t in entries]
        cols = [t[1] for t in entries]
        for t in entries:
            if t[1] < 0:
                raise DatasetError(f"{feature_path}:{t[3]}: negative feature id")
        features = sp.csr_matrix(([t[2] for t in entries], (rows, cols)), shape=(len(ids), m))
        features.sum_duplicates()

    remap = {int(v): i for i, v in enumerate(ids)}
    n = len(ids)
    edges = [(remap[u], remap[v]) for u, v in raw_edges]

    cover = None
    if raw_cover is not None:
        comms = []
        for lineno, members in raw_cover:
            missing = [v for v in members if v not in remap]
            if missing:
                raise DatasetError(f"{cover_path}:{lineno}: community member id {missing[0]} out of range")
            if members:
                comms.append([remap[v] for v in members])
        cover = CommunityCover.from_lists(comms, n)

    if normalize_features:
        features = l2_normalize_rows(features)

    g = from_edge_list(n, edges, features, cover)
    object.__setattr__(g, "node_ids", _freeze(ids))
    problems = validate_graph(g)
    if problems:
        raise DatasetError("; ".join(problems))
    return g


def l2_normalize_rows(X):
    if sp.issparse(X):
        norms = np.sqrt(np.asarray(X.multiply(X).sum(axis=1)).ravel())
        norms[norms == 0] = 1.0
        return sp.diags(1.0 / norms) @ X
    X = np.asarray(X, dtype=np.float64)
    norms = np.linalg.norm(X, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    return X / norms


def write_edges(graph: AttributedGraph, path: str | Path) -> None:
    ids = graph.node_ids
    with open(path, "w", encoding="utf-8") as fh:
        for u, v in graph.edges:
            fh.write(f"{ids[u]} {ids[v]}\n")


def write_features(X, path: str | Path, node_ids: np.ndarray | None = None, fmt: str | None = None) -> None:
    """Write features; dense CSV rows follow node index order, sparse uses original ids."""
    fmt = feature_format(path, fmt)
    n = X.shape[0]
    ids = np.arange(n) if node_ids is None else node_ids
    with open(path, "w", encoding="utf-8") as fh:
        if fmt == "dense":
            D = X.toarray() if sp.issparse(X) else np.asarray(X)
            for row in D:
                fh.write(",".join(repr(float(x)) for x in row) + "\n")
        else:
            C = sp.coo_matrix(X)
            order = np.lexsort((C.col, C.row))
            for r, c, v in zip(C.row[order], C.col[order], C.data[order]):
                fh.write(f"{ids[r]} {c} {float(v)!r}\n")


def write_cover(cover: CommunityCover, path: str | Path, node_ids: np.ndarray | None = None) -> None:
    ids = np.arange(cover.num_nodes) if node_ids is None else node_ids
    with open(path, "w", encoding="utf-8") as fh:
        for c in cover.communities:
            fh.write(" ".join(str(int(ids[v])) for v in sorted(c)) + "\n")


def read_cover(path: str | Path, num_nodes: int | None = None, node_ids: np.ndarray | None = None) -> CommunityCover:
    """Read a cover file; ids are mapped through ``node_ids`` when given."""
    raw = _read_cover_ids(Path(path))
    if node_ids is not None:
        remap = {int(v): i for i, v in enumerate(node_ids)}
        n = len(node_ids)
    else:
        remap = None
        n = num_nodes if num_nodes is not None else 1 + max((max(m) for _, m in raw if m), default=-1)
    comms = []
    for lineno, members in raw:
        if not members:
            continue
        if remap is not None:
            bad = [v for v in members if v not in remap]
            if bad:
                raise DatasetError(f"{path}:{lineno}: community member id {bad[0]} out of range")
            members = [remap[v] for v in members]
        elif any(v >= n for v in members):
            raise DatasetError(f"{path}:{lineno}: community member id {max(members)} out of range")
        comms.append(members)
    return CommunityCover.from_lists(comms, n)


def write_dataset(graph: AttributedGraph, edge_path, feature_path, cover_path=None, fmt=None) -> None:
    write_edges(graph, edge_path)
    write_features(graph.features, feature_path, graph.node_ids, fmt)
    if cover_path is not None and graph.ground_truth is not None:
        write_cover(graph.ground_truth, cover_path, graph.node_ids)


# ------------------------------------------------------------------- synthetic


def planted_partition(
    block_size: int = 20,
    n_blocks: int = 2,
    p_in: float = 0.5,
    p_out: float = 0.02,
    features_per_block: int = 4,
    p_feature_on: float = 1.0,
    p_feature_off: float = 0.0,
    seed: int = 0,
) -> AttributedGraph:
    """Stochastic block model with block-informative binary features.

    Node ``v`` in block ``b`` switches on each of block ``b``'s features with
    probability ``p_feature_on`` and every other feature with
    ``p_feature_off``; the defaults give clean block indicators. The blocks
    form the ground-truth cover.
    """
    rng = np.random.default_rng(seed)
    n = block_size * n_blocks
    block = np.repeat(np.arange(n_blocks), block_size)
    iu, ju = np.triu_indices(n, k=1)
    p = np.where(block[iu] == block[ju], p_in, p_out)
    keep = rng.random(len(iu)) < p
    edges = np.stack([iu[keep], ju[keep]], axis=1)
    m = features_per_block * n_blocks
    own = np.repeat(np.arange(n_blocks), features_per_block)[None, :] == block[:, None]
    X = (rng.random((n, m)) < np.where(own, p_feature_on, p_feature_off)).astype(np.float64)
    cover = CommunityCover.from_lists([np.flatnonzero(block == b) for b in range(n_blocks)], n)
    return AttributedGraph(n, edges, X, cover)
