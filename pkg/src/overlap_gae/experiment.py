"""Grid experiments over label rates and attribute-noise levels."""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .config import ExperimentConfig
from .graph import AttributedGraph, CommunityCover, load_dataset, write_cover, zeta_threshold
from .membership import assign_communities
from .metrics import onmi, overlapping_f1
from .model import save_checkpoint
from .noise import perturb_attributes
from .trainer import TrainingDiverged, TrainTrace, sample_prior_labels, train, write_trace

log = logging.getLogger(__name__)

RESULT_COLUMNS = ["label_rate", "p_mis", "runs", "onmi_mean", "onmi_std", "f1_mean", "f1_std", "status"]
RUN_COLUMNS = ["label_rate", "p_mis", "run", "seed", "labeled_nodes", "epochs", "final_total", "onmi", "f1"]


@dataclass
class RunRecord:
    run: int
    seed: int
    labeled_nodes: int
    epochs: int
    final_total: float
    onmi: float
    f1: float
    cover: CommunityCover
    trace: TrainTrace


@dataclass
class GridPoint:
    label_rate: float
    p_mis: float
    runs: list[RunRecord]
    status: str = "ok"
    error: str = ""

    def stat(self, attr: str, fn) -> float:
        vals = [getattr(r, attr) for r in self.runs]
        return float(fn(vals)) if vals else math.nan


def load_experiment_graph(config: ExperimentConfig) -> AttributedGraph:
    return load_dataset(
        config.edges,
        config.features,
        config.cover,
        feature_format_hint=config.feature_format,
        normalize_features=config.normalize_features,
    )


def run_single(graph: AttributedGraph, config: ExperimentConfig, label_rate: float, p_mis: float, r: int):
    """Run r of one grid point; returns a RunRecord or the divergence message.

    Run r uses seed ``config.seed + r`` for the attribute swap, the label
    sample and the initialisation.
    """
    cover = graph.ground_truth
    if cover is None:
        raise ValueError("experiments need a ground-truth cover")
    tcfg = replace(config.train, label_rate=label_rate)
    zeta = config.zeta if config.zeta is not None else zeta_threshold(graph)
    seed = tcfg.seed + r
    g = graph
    if p_mis > 0:
        g = graph.with_features(perturb_attributes(graph.features, p_mis, seed, config.noise_mode))
    prior = sample_prior_labels(cover, label_rate, seed)
    try:
        trace = train(g, prior, tcfg, k=cover.k, seed=seed)
    except (TrainingDiverged, FloatingPointError) as exc:
        return f"run {r}: {exc}"
    pred = assign_communities(trace.output.H, zeta)
    final = trace.epochs[-1].total if trace.epochs else math.nan
    return RunRecord(r, seed, len(prior.nodes), len(trace), final,
                     onmi(pred, cover, config.onmi_variant), overlapping_f1(pred, cover), pred, trace)


def _collect(label_rate: float, p_mis: float, outcomes) -> GridPoint:
    point = GridPoint(label_rate, p_mis, [])
    for res in outcomes:
        if isinstance(res, str):
            point.status, point.error = "failed", res
            log.warning("grid point label_rate=%g p_mis=%g failed: %s", label_rate, p_mis, res)
            point.runs = []
            break
        point.runs.append(res)
    return point


def run_grid_point(graph: AttributedGraph, config: ExperimentConfig, label_rate: float, p_mis: float) -> GridPoint:
    """All ``config.train.runs`` runs of one grid point, in order.

    A diverging run marks the point as failed; its statistics are then empty.
    """
    return _collect(label_rate, p_mis, (run_single(graph, config, label_rate, p_mis, r) for r in range(config.train.runs)))


_WORKER: dict = {}


def _init_worker(config: ExperimentConfig, graph: AttributedGraph | None) -> None:
    _WORKER["config"] = config
    _WORKER["graph"] = graph if graph is not None else load_experiment_graph(config)


def _run_task(task):
    label_rate, p_mis, r = task
    return run_single(_WORKER["graph"], _WORKER["config"], label_rate, p_mis, r)


def _tag(label_rate: float, p_mis: float) -> str:
    return f"lr{label_rate:.4f}_pmis{p_mis:.4f}"


def _fmt(x: float) -> str:
    return "nan" if x != x else f"{x:.6f}"


def run_experiment(config: ExperimentConfig, graph: AttributedGraph | None = None) -> Path:
    """Run every (label_rate, p_mis) point and write the report files.

    Files under ``config.out_dir``: ``results.csv`` (one row per grid point),
    ``runs.csv``, ``summary.json``, ``node_ids.txt``, ``traces/*.csv``,
    ``covers/*.txt``, ``models/*.npz`` and ``run.log`` (the only file with
    timestamps). With ``config.jobs > 1`` the individual runs of all grid
    points are spread over that many worker processes; results do not depend
    on the job count.
    """
    given = graph
    if graph is None:
        config.check(need_paths=True)
        graph = load_experiment_graph(config)
    out = Path(config.out_dir)
    for sub in ("traces", "covers", "models"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    grid = [(lr, pm) for lr in config.label_rates for pm in config.p_mis]
    runs = config.train.runs

    handler = logging.FileHandler(out / "run.log", mode="w", encoding="utf-8")
    handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(message)s"))
    root = logging.getLogger("overlap_gae")
    prev_level = root.level
    root.addHandler(handler)
    root.setLevel(logging.INFO)
    try:
        log.info("experiment start: seed=%d grid=%s", config.seed, grid)
        started = time.perf_counter()
        tasks = [(lr, pm, r) for lr, pm in grid for r in range(runs)]
        if config.jobs > 1 and len(tasks) > 1:
            with ProcessPoolExecutor(max_workers=config.jobs, initializer=_init_worker,
                                     initargs=(config, given)) as pool:
                outcomes = list(pool.map(_run_task, tasks))
        else:
            outcomes = [run_single(graph, config, *t) for t in tasks]
        points = [_collect(lr, pm, outcomes[i * runs:(i + 1) * runs]) for i, (lr, pm) in enumerate(grid)]
        for p in points:
            log.info("label_rate=%g p_mis=%g: %s onmi=%.4f f1=%.4f", p.label_rate, p.p_mis, p.status,
                     p.stat("onmi", np.mean), p.stat("f1", np.mean))
        _write_reports(out, config, graph, points)
        log.info("experiment done in %.1fs", time.perf_counter() - started)
    finally:
        root.removeHandler(handler)
        root.setLevel(prev_level)
        handler.close()
    return out


def _write_reports(out: Path, config: ExperimentConfig, graph: AttributedGraph, points: list[GridPoint]) -> None:
    with open(out / "results.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RESULT_COLUMNS)
        for p in points:
            w.writerow([
                f"{p.label_rate:.4f}", f"{p.p_mis:.4f}", len(p.runs),
                _fmt(p.stat("onmi", np.mean)), _fmt(p.stat("onmi", np.std)),
                _fmt(p.stat("f1", np.mean)), _fmt(p.stat("f1", np.std)), p.status,
            ])
    with open(out / "runs.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RUN_COLUMNS)
        for p in points:
            for r in p.runs:
                w.writerow([f"{p.label_rate:.4f}", f"{p.p_mis:.4f}", r.run, r.seed, r.labeled_nodes,
                            r.epochs, _fmt(r.final_total), _fmt(r.onmi), _fmt(r.f1)])
    for p in points:
        tag = _tag(p.label_rate, p.p_mis)
        for r in p.runs:
            write_trace(r.trace, out / "traces" / f"{tag}_run{r.run}.csv")
            write_cover(r.cover, out / "covers" / f"{tag}_run{r.run}.txt", graph.node_ids)
            save_checkpoint(r.trace.params, out / "models" / f"{tag}_run{r.run}.npz")
    with open(out / "node_ids.txt", "w", encoding="utf-8") as fh:
        fh.write("# index original_id\n")
        for i, v in enumerate(graph.node_ids):
            fh.write(f"{i} {int(v)}\n")
    summary = {
        "seed": config.seed,
        "config": config.to_dict(),
        "graph": {"nodes": graph.num_nodes, "edges": graph.num_edges, "features": graph.num_features,
                  "communities": graph.ground_truth.k if graph.ground_truth else None},
        "zeta": config.zeta if config.zeta is not None else zeta_threshold(graph),
        "failures": {_tag(p.label_rate, p.p_mis): p.error for p in points if p.status != "ok"},
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
