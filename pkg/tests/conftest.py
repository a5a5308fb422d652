import numpy as np
import pytest

from overlap_gae.graph import CommunityCover, from_edge_list


def two_triangles(features=None):
    edges = [(0, 1), (1, 2), (0, 2), (3, 4), (4, 5), (3, 5), (2, 3)]
    cover = CommunityCover.from_lists([[0, 1, 2], [3, 4, 5]], 6)
    return from_edge_list(6, edges, features if features is not None else np.eye(6)[:, :3] + 0.1, cover)


def random_graph(n, m, n_features, seed):
    """n nodes, exactly m distinct undirected edges, Gaussian features."""
    rng = np.random.default_rng(seed)
    iu, ju = np.triu_indices(n, k=1)
    pick = rng.choice(len(iu), size=m, replace=False)
    edges = list(zip(iu[pick], ju[pick]))
    return from_edge_list(n, edges, rng.normal(size=(n, n_features)))


def random_stochastic(n, k, seed):
    rng = np.random.default_rng(seed)
    H = rng.random((n, k))
    return H / H.sum(axis=1, keepdims=True)


@pytest.fixture
def triangles():
    return two_triangles()


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def criterion():
    """Record one acceptance line; printed at once and again in the terminal summary."""

    def report(number, passed, detail):
        line = f"criterion {number}: {'PASS' if passed else 'FAIL'} - {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return passed

    return report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
