"""Acceptance suite: one test per criterion, each reporting a PASS/FAIL line.

The Facebook ego-network criteria (5-7) need the 792-node dataset on disk:
set ``OVERLAP_GAE_FB1684`` to a directory holding ``edges.txt``,
``features.csv`` (or ``features.txt``) and ``cover.txt``, or place those
files under ``data/fb1684`` in the repository root.
"""

import csv
import json
import os
import time
from pathlib import Path

import numpy as np
import pytest

from overlap_gae import autodiff as ad
from overlap_gae.cli import main
from overlap_gae.config import from_mapping
from overlap_gae.experiment import run_experiment
from overlap_gae.graph import CommunityCover, SingularThresholdError, from_edge_list, load_dataset, planted_partition, zeta_from_counts
from overlap_gae.metrics import onmi, overlapping_f1
from overlap_gae.model import init_params
from overlap_gae.objectives import ModularityOperator
from overlap_gae.trainer import TrainConfig, build_loss, sample_prior_labels, train_averaged

from conftest import random_graph, random_stochastic, two_triangles
from test_metrics import random_cover
from test_objectives import brute_modularity

REPO = Path(__file__).resolve().parent.parent


def test_criterion_1_full_model_gradient(criterion):
    rng = np.random.default_rng(0)
    cover = CommunityCover.from_lists([[0, 1, 2, 3], [3, 4, 5], [5, 6, 7]], 8)
    base = random_graph(8, 12, 5, seed=0)
    g = from_edge_list(8, base.edges.tolist(), rng.normal(size=(8, 5)), cover)
    cfg = TrainConfig(heads=2)
    dims = cfg.dims(g.num_features, 3)
    prior = sample_prior_labels(cover, 0.5, 0)
    op, A = ModularityOperator(g), g.adjacency().toarray()
    start = time.perf_counter()
    errs = ad.grad_check(lambda tape, pv: build_loss(tape, pv, dims, g, prior, cfg, op, A)[0],
                         init_params(0, dims).arrays, epsilon=1e-5)
    elapsed = time.perf_counter() - start
    worst = max(errs.values())
    ok = criterion(1, worst < 1e-4 and elapsed < 10.0,
                   f"max relative error {worst:.2e} over {sum(a.size for a in init_params(0, dims).arrays.values())} "
                   f"entries in {elapsed:.1f}s (limits 1e-4, 10s)")
    assert ok


def test_criterion_2_modularity_oracle(criterion):
    rng = np.random.default_rng(2024)
    worst = 0.0
    for t in range(50):
        n = int(rng.integers(3, 21))
        m = int(rng.integers(1, n * (n - 1) // 2 + 1))
        g = random_graph(n, m, 1, seed=1000 + t)
        H = random_stochastic(n, int(rng.integers(1, 6)), seed=2000 + t)
        tape = ad.Tape()
        val = float(ad.trace_quadratic(tape.const(H), ModularityOperator(g)).data[0, 0])
        worst = max(worst, abs(val - brute_modularity(g, H)))
    tri = two_triangles()
    H = np.zeros((6, 2))
    H[:3, 0] = H[3:, 1] = 1.0
    q = ModularityOperator(tri).quadratic(H)
    ok = criterion(2, worst < 1e-10 and abs(q - 0.357143) <= 1e-6,
                   f"max |factored - brute force| {worst:.1e} on 50 graphs; two triangles {q:.6f}")
    assert ok


def test_criterion_3_metric_sanity(criterion):
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(20):
        c = random_cover(rng, int(rng.integers(5, 40)))
        worst = max(worst, abs(onmi(c, c) - 1.0), abs(overlapping_f1(c, c) - 1.0))
    f1 = overlapping_f1(CommunityCover.from_lists([[0, 1, 2, 3]], 4), CommunityCover.from_lists([[0, 1], [2, 3]], 4))
    ok = criterion(3, worst <= 1e-9 and abs(f1 - 0.6667) <= 1e-4,
                   f"identity deviation {worst:.1e} over 20 covers; all-in-one F1 {f1:.4f}")
    assert ok


@pytest.mark.slow
def test_criterion_4_planted_recovery(criterion):
    graph = planted_partition(block_size=20, n_blocks=2, p_in=0.5, p_out=0.02, features_per_block=4, seed=0)
    start = time.perf_counter()
    res = train_averaged(graph, graph.ground_truth, TrainConfig(label_rate=0.10, runs=10, seed=0))
    elapsed = time.perf_counter() - start
    ok = criterion(4, res.onmi_mean >= 0.9 and res.f1_mean >= 0.9 and elapsed < 120.0,
                   f"mean ONMI {res.onmi_mean:.4f} (std {res.onmi_std:.4f}), mean F1 {res.f1_mean:.4f} "
                   f"(std {res.f1_std:.4f}) over 10 seeds in {elapsed:.1f}s (limits 0.9, 0.9, 120s)")
    assert ok


# ------------------------------------------------------------ Facebook 1684


def _fb1684_dir():
    candidates = [os.environ.get("OVERLAP_GAE_FB1684"), REPO / "data" / "fb1684"]
    for c in candidates:
        if not c:
            continue
        d = Path(c)
        feats = [d / "features.csv", d / "features.txt"]
        if (d / "edges.txt").is_file() and (d / "cover.txt").is_file() and any(f.is_file() for f in feats):
            return d, next(f for f in feats if f.is_file())
    return None


@pytest.fixture(scope="module")
def fb1684(tmp_path_factory):
    found = _fb1684_dir()
    if found is None:
        return None
    d, feats = found
    graph = load_dataset(d / "edges.txt", feats, d / "cover.txt")
    jobs = os.cpu_count() or 1
    results = {}

    def sweep(name, label_rates, p_mis):
        cfg = from_mapping({"label_rates": label_rates, "p_mis": p_mis, "runs": 10, "jobs": jobs,
                            "out_dir": str(tmp_path_factory.mktemp(name))})
        start = time.perf_counter()
        out = run_experiment(cfg, graph)
        elapsed = time.perf_counter() - start
        with open(out / "results.csv", newline="") as fh:
            for row in csv.DictReader(fh):
                results[(float(row["label_rate"]), float(row["p_mis"]))] = row
        return elapsed

    timing = {"rates": sweep("rates", [0.02, 0.10], [0.0]), "noise": sweep("noise", [0.10], [0.2, 0.6])}
    return graph, results, timing


MISSING = ("FB1684 dataset not found (set OVERLAP_GAE_FB1684 or add data/fb1684/"
           "{edges.txt,features.csv,cover.txt}); criterion not evaluated")


@pytest.mark.dataset
def test_criterion_5_fb1684_reproduction(criterion, fb1684):
    if fb1684 is None:
        criterion(5, False, MISSING)
        pytest.fail(MISSING)
    graph, results, timing = fb1684
    row = results[(0.10, 0.0)]
    o, f = float(row["onmi_mean"]), float(row["f1_mean"])
    ok = criterion(5, o >= 0.45 and f >= 0.70 and graph.num_nodes == 792,
                   f"N={graph.num_nodes} M={graph.num_edges}; 10% labels: ONMI {o:.4f}, F1 {f:.4f} "
                   f"(limits 0.45, 0.70; reference 0.54 / 0.80); 2-point sweep {timing['rates']:.0f}s")
    assert ok


@pytest.mark.dataset
def test_criterion_6_label_rate_monotonicity(criterion, fb1684):
    if fb1684 is None:
        criterion(6, False, MISSING)
        pytest.fail(MISSING)
    _, results, _ = fb1684
    lo, hi = results[(0.02, 0.0)], results[(0.10, 0.0)]
    o2, o10, f2, f10 = (float(lo["onmi_mean"]), float(hi["onmi_mean"]), float(lo["f1_mean"]), float(hi["f1_mean"]))
    ok = criterion(6, o10 > o2 and f10 > f2, f"ONMI 2% {o2:.4f} -> 10% {o10:.4f}; F1 2% {f2:.4f} -> 10% {f10:.4f}")
    assert ok


@pytest.mark.dataset
def test_criterion_7_noise_robustness(criterion, fb1684):
    if fb1684 is None:
        criterion(7, False, MISSING)
        pytest.fail(MISSING)
    _, results, _ = fb1684
    a, b = results[(0.10, 0.2)], results[(0.10, 0.6)]
    d_onmi = abs(float(a["onmi_mean"]) - float(b["onmi_mean"]))
    d_f1 = abs(float(a["f1_mean"]) - float(b["f1_mean"]))
    ok = criterion(7, d_onmi <= 0.08 and d_f1 <= 0.08,
                   f"P_mis 20% vs 60%: ONMI {a['onmi_mean']} vs {b['onmi_mean']}, F1 {a['f1_mean']} vs {b['f1_mean']} "
                   f"(gaps {d_onmi:.4f}, {d_f1:.4f}; limit 0.08)")
    assert ok


# ------------------------------------------------------------------ misc


def test_criterion_8_zeta(criterion):
    z = zeta_from_counts(4, 3)
    try:
        zeta_from_counts(2, 1)
        raised = False
    except SingularThresholdError:
        raised = True
    ok = criterion(8, abs(z - 0.832555) <= 1e-6 and raised, f"zeta(N=4, M=3) = {z:.6f}; (N=2, M=1) raises: {raised}")
    assert ok


def test_criterion_9_sweep_determinism(criterion, tmp_path):
    data = tmp_path / "data"
    assert main(["synth", "--out-dir", str(data), "--seed", "0"]) == 0
    cfg = tmp_path / "config.json"
    cfg.write_text(json.dumps({
        "edges": str(data / "edges.txt"), "features": str(data / "features.csv"), "cover": str(data / "cover.txt"),
        "label_rates": [0.05, 0.10], "p_mis": [0.0, 0.4], "epochs": 40, "runs": 2, "seed": 11,
    }))
    outs = [tmp_path / "first", tmp_path / "second"]
    codes = [main(["sweep", "--config", str(cfg), "--out-dir", str(o)]) for o in outs]
    a, b = ((o / "results.csv").read_bytes() for o in outs)
    ok = criterion(9, codes == [0, 0] and a == b and len(a.splitlines()) == 5,
                   f"exit codes {codes}; results CSVs byte-identical: {a == b} ({len(a)} bytes, {len(a.splitlines()) - 1} rows)")
    assert ok
