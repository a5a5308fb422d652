import math

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from overlap_gae.graph import (
    AttributedGraph,
    CommunityCover,
    DatasetError,
    PriorLabels,
    SingularThresholdError,
    from_edge_list,
    load_dataset,
    planted_partition,
    validate_graph,
    write_dataset,
    zeta_from_counts,
    zeta_threshold,
)

from conftest import random_graph


def _write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return p


def test_minimal_graph(tmp_path):
    e = _write(tmp_path, "e.txt", "0 1\n")
    f = _write(tmp_path, "f.csv", "1.0\n2.0\n")
    g = load_dataset(e, f)
    assert (g.num_nodes, g.num_edges) == (2, 1)
    assert g.degrees.tolist() == [1, 1]
    assert g.features.shape == (2, 1)


def test_reversed_duplicate_edges_collapse(tmp_path):
    e = _write(tmp_path, "e.txt", "# comment\n0 1\n1 0\n0 1\n1 2\n")
    f = _write(tmp_path, "f.csv", "a,b\n1,0\n0,1\n1,1\n")
    g = load_dataset(e, f)
    assert g.num_edges == 2
    assert g.features.shape == (3, 2)  # header skipped


def test_arbitrary_ids_are_remapped(tmp_path):
    e = _write(tmp_path, "e.txt", "10 30\n30 20\n")
    f = _write(tmp_path, "f.txt", "10 0 1.0\n20 1 2.0\n30 0 3.0\n")
    c = _write(tmp_path, "c.txt", "10 20\n30\n")
    g = load_dataset(e, f, c)
    assert g.node_ids.tolist() == [10, 20, 30]
    assert sorted(map(tuple, g.edges.tolist())) == [(0, 2), (1, 2)]
    assert sp.issparse(g.features)
    assert g.features.toarray().tolist() == [[1.0, 0.0], [0.0, 2.0], [3.0, 0.0]]
    assert [sorted(cm) for cm in g.ground_truth] == [[0, 1], [2]]


def test_malformed_line_reports_line_number(tmp_path):
    e = _write(tmp_path, "e.txt", "0 1\n1 x\n")
    f = _write(tmp_path, "f.csv", "1\n2\n")
    with pytest.raises(DatasetError, match=r"e.txt:2"):
        load_dataset(e, f)


def test_feature_row_count_mismatch(tmp_path):
    e = _write(tmp_path, "e.txt", "0 1\n1 2\n")
    f = _write(tmp_path, "f.csv", "1\n2\n")
    with pytest.raises(DatasetError, match="feature rows"):
        load_dataset(e, f)


def test_cover_member_out_of_range(tmp_path):
    e = _write(tmp_path, "e.txt", "0 1\n")
    f = _write(tmp_path, "f.csv", "1\n2\n")
    c = _write(tmp_path, "c.txt", "0 1\n1 5\n")
    with pytest.raises(DatasetError, match=r"c.txt:2.*out of range"):
        load_dataset(e, f, c)


def test_isolated_nodes_via_dense_rows(tmp_path):
    e = _write(tmp_path, "e.txt", "0 1\n")
    f = _write(tmp_path, "f.csv", "1\n2\n3\n")
    g = load_dataset(e, f)
    assert g.num_nodes == 3
    assert g.degrees.tolist() == [1, 1, 0]
    assert g.neighbors(2).tolist() == [2]


def test_normalize_features(tmp_path):
    e = _write(tmp_path, "e.txt", "0 1\n")
    f = _write(tmp_path, "f.csv", "3,4\n0,0\n")
    g = load_dataset(e, f, normalize_features=True)
    assert np.allclose(g.features, [[0.6, 0.8], [0.0, 0.0]])


def test_neighbour_index_has_self_loops_and_symmetry(triangles):
    g = triangles
    assert g.neighbors(2).tolist() == [0, 1, 2, 3]
    assert g.neighbors(5).tolist() == [3, 4, 5]
    assert int(g.degrees.sum()) == 2 * g.num_edges
    assert g.degrees.tolist() == [2, 2, 3, 3, 2, 2]


def test_graph_is_immutable(triangles):
    with pytest.raises(ValueError):
        triangles.edges[0, 0] = 5
    with pytest.raises(Exception):
        triangles.num_nodes = 3


def test_validate_valid_graph():
    g = from_edge_list(2, [(0, 1)], np.ones((2, 1)))
    assert validate_graph(g) == []


def test_validate_tampered_degrees():
    g = from_edge_list(2, [(0, 1)], np.ones((2, 1)))
    object.__setattr__(g, "degrees", np.array([2, 1]))
    report = validate_graph(g)
    assert any("degree-sum" in r for r in report)


def test_validate_short_feature_matrix():
    g = from_edge_list(3, [(0, 1), (1, 2)], np.ones((2, 1)))
    report = validate_graph(g)
    assert any("row-count" in r for r in report)


def test_zeta_examples():
    assert zeta_from_counts(4, 3) == pytest.approx(math.sqrt(-math.log(0.5)), abs=1e-12)
    assert zeta_from_counts(4, 3) == pytest.approx(0.832555, abs=1e-6)
    # sizes of the 792-node Facebook ego network
    assert zeta_from_counts(792, 28048) == pytest.approx(0.30629, abs=1e-4)
    with pytest.raises(SingularThresholdError):
        zeta_threshold(from_edge_list(2, [(0, 1)]))


def test_cover_validation():
    with pytest.raises(ValueError):
        CommunityCover.from_lists([[0, 1], []], 3)
    with pytest.raises(ValueError):
        CommunityCover.from_lists([[0, 3]], 3)
    c = CommunityCover.from_lists([[0, 1], [1, 2]], 3)
    assert c.node_memberships() == [[0], [0, 1], [1]]


def test_prior_labels_validation():
    with pytest.raises(ValueError):
        PriorLabels(((0, 3),), 3)
    with pytest.raises(ValueError):
        PriorLabels(((0, 1), (0, 1)), 3)
    p = PriorLabels(((2, 0), (0, 1), (2, 1)), 2)
    nodes, Y = p.matrix()
    assert nodes.tolist() == [0, 2]
    assert Y.tolist() == [[0, 1], [1, 1]]


@pytest.mark.parametrize("fmt,suffix", [("dense", ".csv"), ("sparse", ".txt")])
def test_round_trip(tmp_path, fmt, suffix):
    g = planted_partition(block_size=6, seed=3)
    e, f, c = tmp_path / "e.txt", tmp_path / f"f{suffix}", tmp_path / "c.txt"
    write_dataset(g, e, f, c)
    h = load_dataset(e, f, c)
    assert h.num_nodes == g.num_nodes
    assert np.array_equal(h.edges, g.edges)
    assert np.array_equal(h.indptr, g.indptr) and np.array_equal(h.indices, g.indices)
    assert np.allclose(h.dense_features(), g.dense_features())
    assert h.ground_truth == g.ground_truth


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 25), st.data())
def test_degree_sum_and_symmetry(n, data):
    max_m = n * (n - 1) // 2
    m = data.draw(st.integers(0, max_m))
    g = random_graph(n, m, 2, data.draw(st.integers(0, 10_000)))
    assert int(g.degrees.sum()) == 2 * g.num_edges == 2 * m
    assert validate_graph(g) == []
    for i in range(n):
        for j in g.neighbors(i):
            assert i in g.neighbors(int(j))


def test_planted_partition_shape():
    g = planted_partition()
    assert g.num_nodes == 40 and g.num_features == 8
    assert g.ground_truth.k == 2
    X = g.dense_features()
    assert np.all(X[:20, :4] == 1) and np.all(X[:20, 4:] == 0)
    assert isinstance(g, AttributedGraph)
