"""Semi-supervised full-graph training with Adam, and multi-run averaging."""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import objectives as obj
from .graph import AttributedGraph, CommunityCover, PriorLabels, zeta_threshold
from .membership import assign_communities
from .metrics import onmi, overlapping_f1
from .model import EncoderOutput, ModelDims, ModelParams, encode, forward, init_params, register

log = logging.getLogger(__name__)

MODULARITY_FORMS = ("membership", "embedding")


class TrainingDiverged(FloatingPointError):
    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 500
    lr: float = 0.006
    alpha: float = 0.5
    beta: float = 1e-6
    label_rate: float = 0.10
    seed: int = 0
    runs: int = 10
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    patience: int | None = 50
    min_delta: float = 1e-5
    heads: int = 8
    hidden_per_head: int = 64
    embed_per_head: int = 16
    modularity_form: str = "membership"
    dense_limit: int = 5000

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if not 0.0 <= self.label_rate <= 1.0:
            raise ValueError(f"label_rate must lie in [0, 1], got {self.label_rate}")
        if self.runs < 1:
            raise ValueError("runs must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.modularity_form not in MODULARITY_FORMS:
            raise ValueError(f"modularity_form must be one of {MODULARITY_FORMS}")

    def dims(self, input_dim: int, k: int) -> ModelDims:
        return ModelDims(input_dim, k, self.heads, self.hidden_per_head, self.embed_per_head)


@dataclass
class EpochLosses:
    l_r: float
    l_s: float
    l_c: float
    total: float


@dataclass
class TrainTrace:
    epochs: list[EpochLosses]
    output: EncoderOutput
    params: ModelParams
    wall_time: float
    stopped_early: bool = False

    def __len__(self) -> int:
        return len(self.epochs)

    def totals(self) -> np.ndarray:
        return np.array([e.total for e in self.epochs])


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def sample_prior_labels(cover: CommunityCover | None, rate: float, seed: int) -> PriorLabels:
    """Reveal every community of floor(rate * N) uniformly chosen nodes."""
    if not 0.0 <= rate <= 1.0:
        raise ValueError(f"rate must lie in [0, 1], got {rate}")
    if cover is None:
        if rate > 0:
            raise ValueError("prior labels need a ground-truth cover")
        return PriorLabels((), 0)
    n = cover.num_nodes
    count = int(np.floor(rate * n + 1e-9))
    chosen = np.random.default_rng(seed).choice(n, size=count, replace=False)
    memberships = cover.node_memberships()
    entries = tuple((int(i), q) for i in sorted(chosen.tolist()) for q in memberships[i])
    return PriorLabels(entries, cover.k)


def optimizer_step(
    params: ModelParams,
    grads: dict[str, np.ndarray],
    state: AdamState,
    t: int,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> tuple[ModelParams, AdamState]:
    """One bias-corrected Adam update; returns new params and state."""
    if t < 1:
        raise ValueError("step index starts at 1")
    new_arrays, m_new, v_new = {}, {}, {}
    for name, p in params.arrays.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"{name}: gradient shape {g.shape} != parameter shape {p.shape}")
        if not np.isfinite(g).all():
            raise TrainingDiverged(f"non-finite gradient for {name} at step {t}")
        m = beta1 * state.m.get(name, 0.0) + (1 - beta1) * g
        v = beta2 * state.v.get(name, 0.0) + (1 - beta2) * g * g
        m_hat = m / (1 - beta1**t)
        v_hat = v / (1 - beta2**t)
        new_arrays[name] = p - lr * m_hat / (np.sqrt(v_hat) + eps)
        m_new[name], v_new[name] = m, v
    return ModelParams(params.dims, new_arrays, params.seed), AdamState(m_new, v_new)


def build_loss(
    tape: ad.Tape,
    pv: dict[str, ad.Var],
    dims: ModelDims,
    graph: AttributedGraph,
    prior: PriorLabels | None,
    config: TrainConfig,
    operator: obj.ModularityOperator,
    adjacency: np.ndarray | None = None,
    rng: np.random.Generator | None = None,
):
    """Record the full objective; returns (total, l_r, l_s, l_c) tape values."""
    fv = forward(tape, pv, dims, graph)
    if graph.num_nodes <= config.dense_limit:
        l_r = obj.reconstruction_loss_from_logits(graph, ad.matmul(fv.Z, ad.transpose(fv.Z)), adjacency)
    else:
        l_r = obj.sampled_reconstruction_loss(graph, fv.Z, rng if rng is not None else np.random.default_rng(0))
    if prior is not None and len(prior):
        l_s = obj.supervision_loss(fv.H, prior)
        alpha = config.alpha
    else:
        l_s, alpha = tape.const(np.zeros((1, 1))), 0.0
    target = fv.H if config.modularity_form == "membership" else fv.Z
    l_c = obj.modularity_loss(target, operator)
    return obj.total_loss(l_r, l_s, l_c, alpha, config.beta), l_r, l_s, l_c


def train(
    graph: AttributedGraph,
    prior: PriorLabels | None,
    config: TrainConfig,
    k: int | None = None,
    seed: int | None = None,
) -> TrainTrace:
    """Full-batch training from a seeded initialisation.

    ``k`` defaults to the prior's community count. A configured
    ``label_rate`` of 0 trains without the supervision term; otherwise an
    empty prior is an error.
    """
    seed = config.seed if seed is None else seed
    if k is None:
        if prior is None or prior.k == 0:
            raise ValueError("number of communities unknown: pass k or a prior")
        k = prior.k
    if config.label_rate > 0 and (prior is None or len(prior) == 0):
        raise ValueError("supervision configured but the prior is empty")
    dims = config.dims(graph.num_features, k)
    params = init_params(seed, dims)
    operator = obj.ModularityOperator(graph)
    adjacency = graph.adjacency().toarray() if graph.num_nodes <= config.dense_limit else None
    rng = np.random.default_rng([seed, 7])
    state = AdamState()
    history: list[EpochLosses] = []
    best, stale, stopped = np.inf, 0, False
    start = time.perf_counter()

    for epoch in range(1, config.epochs + 1):
        tape = ad.Tape()
        pv = register(tape, params)
        total, l_r, l_s, l_c = build_loss(tape, pv, dims, graph, prior, config, operator, adjacency, rng)
        rec = EpochLosses(_f(l_r), _f(l_s), _f(l_c), _f(total))
        if not np.isfinite(rec.total):
            trace = TrainTrace(history, encode(params, graph), params, time.perf_counter() - start)
            raise TrainingDiverged(f"total loss became non-finite at epoch {epoch}", trace)
        history.append(rec)
        grads = ad.backward(total)
        params, state = optimizer_step(
            params, grads, state, epoch, config.lr, config.adam_beta1, config.adam_beta2, config.adam_eps
        )
        if best - rec.total >= config.min_delta:
            best, stale = rec.total, 0
        else:
            stale += 1
            if config.patience is not None and stale >= config.patience:
                stopped = True
                break

    return TrainTrace(history, encode(params, graph), params, time.perf_counter() - start, stopped)


def _f(v) -> float:
    return float(v.data.reshape(-1)[0]) if isinstance(v, ad.Var) else float(v)


@dataclass
class RunResult:
    run_index: int
    seed: int
    onmi: float
    f1: float
    trace: TrainTrace
    cover: CommunityCover
    num_labeled: int


@dataclass
class AveragedResult:
    runs: list[RunResult]
    zeta: float

    def _stat(self, attr, fn):
        return float(fn([getattr(r, attr) for r in self.runs]))

    @property
    def onmi_mean(self) -> float:
        return self._stat("onmi", np.mean)

    @property
    def onmi_std(self) -> float:
        return self._stat("onmi", np.std)

    @property
    def f1_mean(self) -> float:
        return self._stat("f1", np.mean)

    @property
    def f1_std(self) -> float:
        return self._stat("f1", np.std)


def run_once(
    graph: AttributedGraph,
    cover: CommunityCover,
    config: TrainConfig,
    run_index: int,
    zeta: float | None = None,
    onmi_variant: str = "max",
) -> RunResult:
    seed = config.seed + run_index
    prior = sample_prior_labels(cover, config.label_rate, seed)
    trace = train(graph, prior, config, k=cover.k, seed=seed)
    z = zeta_threshold(graph) if zeta is None else zeta
    pred = assign_communities(trace.output.H, z)
    return RunResult(
        run_index, seed, onmi(pred, cover, onmi_variant), overlapping_f1(pred, cover), trace, pred, len(prior.nodes)
    )


def train_averaged(
    graph: AttributedGraph,
    cover: CommunityCover | None,
    config: TrainConfig,
    zeta: float | None = None,
    onmi_variant: str = "max",
) -> AveragedResult:
    """``config.runs`` independent runs with seeds ``config.seed + run_index``."""
    cover = cover if cover is not None else graph.ground_truth
    if cover is None:
        raise ValueError("averaged evaluation needs a ground-truth cover")
    z = zeta_threshold(graph) if zeta is None else zeta
    runs = []
    for r in range(config.runs):
        res = run_once(graph, cover, config, r, z, onmi_variant)
        log.info("run %d seed %d: onmi=%.4f f1=%.4f epochs=%d", r, res.seed, res.onmi, res.f1, len(res.trace))
        runs.append(res)
    return AveragedResult(runs, z)


def write_trace(trace: TrainTrace, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "l_r", "l_s", "l_c", "total"])
        for i, e in enumerate(trace.epochs, start=1):
            w.writerow([i, f"{e.l_r:.10g}", f"{e.l_s:.10g}", f"{e.l_c:.10g}", f"{e.total:.10g}"])


def with_overrides(config: TrainConfig, **kw) -> TrainConfig:
    return replace(config, **{k: v for k, v in kw.items() if v is not None})
