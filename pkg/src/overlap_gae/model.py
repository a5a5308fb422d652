"""Two-layer multi-head graph attention encoder, softmax membership head and
inner-product decoder.

Heads of a layer are evaluated together: their weight matrices are
concatenated column-wise so one product gives every head's transformed
features, and per-head quantities live in adjacent column blocks.
"""

from __future__ import annotations

import io
import json
import zipfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from . import autodiff as ad
from .graph import AttributedGraph

ACTIVATIONS = {"elu": ad.elu, "relu": ad.relu, "identity": ad.identity}
CHECKPOINT_FORMAT = "overlap-gae-checkpoint/1"


@dataclass(frozen=True)
class ModelDims:
    input_dim: int
    num_communities: int
    heads: int = 8
    hidden_per_head: int = 64
    embed_per_head: int = 16
    leaky_slope: float = 0.2
    hidden_activation: str = "elu"
    embed_activation: str = "identity"

    def __post_init__(self):
        for name in ("input_dim", "num_communities", "heads", "hidden_per_head", "embed_per_head"):
            if int(getattr(self, name)) <= 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        for name in ("hidden_activation", "embed_activation"):
            if getattr(self, name) not in ACTIVATIONS:
                raise ValueError(f"{name} must be one of {sorted(ACTIVATIONS)}")

    @property
    def hidden_dim(self) -> int:
        return self.heads * self.hidden_per_head

    @property
    def embed_dim(self) -> int:
        return self.heads * self.embed_per_head

    def layer_shapes(self):
        """(input width, per-head width, activation) for both attention layers."""
        return [
            (self.input_dim, self.hidden_per_head, self.hidden_activation),
            (self.hidden_dim, self.embed_per_head, self.embed_activation),
        ]


def param_name(layer: int, head: int, kind: str) -> str:
    return f"layer{layer}.head{head}.{kind}"


@dataclass
class ModelParams:
    dims: ModelDims
    arrays: dict[str, np.ndarray]
    seed: int | None = None

    def copy(self) -> "ModelParams":
        return ModelParams(self.dims, {k: v.copy() for k, v in self.arrays.items()}, self.seed)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.arrays[name]

    def names(self) -> list[str]:
        return list(self.arrays)

    def check(self) -> None:
        expected = param_shapes(self.dims)
        if set(expected) != set(self.arrays):
            raise ValueError("parameter set does not match the dims")
        for name, shape in expected.items():
            a = self.arrays[name]
            if a.shape != shape:
                raise ValueError(f"{name}: shape {a.shape}, expected {shape}")
            if not np.isfinite(a).all():
                raise ValueError(f"{name}: non-finite entries")


def param_shapes(dims: ModelDims) -> dict[str, tuple[int, int]]:
    shapes = {}
    for layer, (fan_in, width, _) in enumerate(dims.layer_shapes(), start=1):
        for r in range(dims.heads):
            shapes[param_name(layer, r, "W")] = (fan_in, width)
            shapes[param_name(layer, r, "a")] = (2 * width, 1)
    shapes["head.W"] = (dims.embed_dim, dims.num_communities)
    shapes["head.b"] = (1, dims.num_communities)
    return shapes


def init_params(seed: int, dims: ModelDims) -> ModelParams:
    """Glorot-uniform weights and attention vectors, zero head bias."""
    rng = np.random.default_rng(seed)
    arrays = {}
    for name, (fan_in, fan_out) in param_shapes(dims).items():
        if name == "head.b":
            arrays[name] = np.zeros((fan_in, fan_out))
            continue
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        arrays[name] = rng.uniform(-limit, limit, size=(fan_in, fan_out))
    return ModelParams(dims, arrays, seed)


@dataclass
class EncoderOutput:
    Z: np.ndarray
    H: np.ndarray
    attention: list[np.ndarray] = field(default_factory=list)


@dataclass
class ForwardVars:
    """Tape handles of one forward pass."""

    Z: ad.Var
    H: ad.Var
    attention: list[ad.Var]


def attention_layer(
    h: ad.Var,
    weights: list[ad.Var],
    att: list[ad.Var],
    graph: AttributedGraph,
    activation: str,
    slope: float,
) -> tuple[ad.Var, ad.Var]:
    """One multi-head attention layer; returns (concatenated output, E x r coefficients).

    For head r and neighbour j of i, the score is
    LeakyReLU(a_r[:p] . W_r h_i + a_r[p:] . W_r h_j), normalised over j.
    """
    width = weights[0].shape[1]
    dst, src = graph.attention_pairs()
    Wh = ad.matmul(h, ad.concat(weights))
    # column r of s_dst / s_src holds head r's half-scores a_r[:p] . W_r h and a_r[p:] . W_r h
    s_dst = ad.matmul(Wh, ad.block_diag_rows(att, 0, width))
    s_src = ad.matmul(Wh, ad.block_diag_rows(att, width, 2 * width))
    scores = ad.leaky_relu(ad.add(ad.gather_rows(s_dst, dst), ad.gather_rows(s_src, src)), slope)
    alpha = ad.segment_softmax(scores, graph.indptr)
    out = ACTIVATIONS[activation](ad.neighbor_aggregate(alpha, Wh, graph.indptr, src, width))
    return out, alpha


def forward(tape: ad.Tape, pv: dict[str, ad.Var], dims: ModelDims, graph: AttributedGraph, features=None) -> ForwardVars:
    """Record encoder and head on ``tape`` with parameter handles ``pv``."""
    X = graph.features if features is None else features
    if X.shape[1] != dims.input_dim:
        raise ValueError(f"features have {X.shape[1]} columns, model expects {dims.input_dim}")
    if X.shape[0] != graph.num_nodes:
        raise ValueError("feature rows do not match the node count")
    h = tape.const(X if sp.issparse(X) else np.asarray(X, dtype=np.float64))
    coeffs = []
    for layer, (_, _, act) in enumerate(dims.layer_shapes(), start=1):
        Ws = [pv[param_name(layer, r, "W")] for r in range(dims.heads)]
        As = [pv[param_name(layer, r, "a")] for r in range(dims.heads)]
        h, alpha = attention_layer(h, Ws, As, graph, act, dims.leaky_slope)
        coeffs.append(alpha)
    Z = h
    H = ad.row_softmax(ad.add(ad.matmul(Z, pv["head.W"]), pv["head.b"]))
    return ForwardVars(Z, H, coeffs)


def register(tape: ad.Tape, params: ModelParams) -> dict[str, ad.Var]:
    return {name: tape.param(name, a) for name, a in params.arrays.items()}


def encode(params: ModelParams, graph: AttributedGraph, features=None) -> EncoderOutput:
    tape = ad.Tape()
    fv = forward(tape, register(tape, params), params.dims, graph, features)
    return EncoderOutput(fv.Z.data, fv.H.data, [a.data for a in fv.attention])


def attention_coefficients(params: ModelParams, graph: AttributedGraph, h: np.ndarray, layer: int, head: int) -> np.ndarray:
    """Coefficients of one head, ordered like ``graph.attention_pairs()``."""
    dims = params.dims
    if h.shape[0] != graph.num_nodes:
        raise ValueError("input rows do not match the node count")
    if not 1 <= layer <= 2 or not 0 <= head < dims.heads:
        raise IndexError("layer must be 1 or 2 and head within range")
    tape = ad.Tape()
    W = tape.param("W", params[param_name(layer, head, "W")])
    a = tape.param("a", params[param_name(layer, head, "a")])
    _, alpha = attention_layer(tape.const(h), [W], [a], graph, "identity", dims.leaky_slope)
    return alpha.data[:, 0]


def decode_adjacency(Z: np.ndarray) -> np.ndarray:
    """Dense link probabilities sigmoid(Z Z^T)."""
    Z = np.asarray(Z, dtype=np.float64)
    return _sigmoid(Z @ Z.T)


def decode_pairs(Z: np.ndarray, rows, cols) -> np.ndarray:
    """Link probabilities for selected pairs without forming the N x N matrix."""
    Z = np.asarray(Z, dtype=np.float64)
    return _sigmoid(np.einsum("ij,ij->i", Z[np.asarray(rows)], Z[np.asarray(cols)]))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


# ----------------------------------------------------------------- checkpoints


def save_checkpoint(params: ModelParams, path: str | Path) -> None:
    """Write an ``.npz`` holding every parameter plus a JSON ``__meta__`` entry.

    Zip entries carry a fixed date so identical parameters give identical bytes.
    """
    meta = {
        "format": CHECKPOINT_FORMAT,
        "seed": params.seed,
        "dims": {k: getattr(params.dims, k) for k in params.dims.__dataclass_fields__},
        "params": list(params.arrays),
    }
    entries = {"__meta__": np.array(json.dumps(meta, sort_keys=True)), **params.arrays}
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        for name, arr in entries.items():
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.asanyarray(arr), allow_pickle=False)
            zf.writestr(zipfile.ZipInfo(f"{name}.npy", date_time=(1980, 1, 1, 0, 0, 0)), buf.getvalue())


def load_checkpoint(path: str | Path) -> ModelParams:
    with np.load(path, allow_pickle=False) as z:
        meta = json.loads(str(z["__meta__"]))
        if meta.get("format") != CHECKPOINT_FORMAT:
            raise ValueError(f"{path}: not an {CHECKPOINT_FORMAT} file")
        arrays = {name: np.array(z[name], dtype=np.float64) for name in meta["params"]}
    params = ModelParams(ModelDims(**meta["dims"]), arrays, meta["seed"])
    params.check()
    return params
