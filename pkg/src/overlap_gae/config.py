"""Experiment configuration: one JSON document, CLI overrides on top."""

from __future__ import annotations

import dataclasses
import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .metrics import ONMI_VARIANTS
from .trainer import MODULARITY_FORMS, TrainConfig


class ConfigError(ValueError):
    pass


_FORM_ALIASES = {"H": "membership", "Z": "embedding", "membership": "membership", "embedding": "embedding"}


@dataclass(frozen=True)
class ExperimentConfig:
    edges: str | None = None
    features: str | None = None
    cover: str | None = None
    feature_format: str = "auto"
    normalize_features: bool = False
    out_dir: str = "results"
    label_rates: tuple[float, ...] = (0.10,)
    p_mis: tuple[float, ...] = (0.0,)
    onmi_variant: str = "max"
    zeta: float | None = None
    noise_mode: str = "swap"
    jobs: int = 1
    train: TrainConfig = field(default_factory=TrainConfig)

    @property
    def seed(self) -> int:
        return self.train.seed

    def check(self, need_paths: bool = True) -> "ExperimentConfig":
        if not self.label_rates:
            raise ConfigError("label_rates must not be empty")
        if not self.p_mis:
            raise ConfigError("p_mis must not be empty")
        for r in self.label_rates:
            if not 0.0 <= r <= 1.0:
                raise ConfigError(f"label rate {r} outside [0, 1]")
        for p in self.p_mis:
            if not 0.0 <= p <= 1.0:
                raise ConfigError(f"p_mis {p} outside [0, 1]")
        if self.onmi_variant not in ONMI_VARIANTS:
            raise ConfigError(f"onmi_variant must be one of {ONMI_VARIANTS}")
        if self.noise_mode not in ("swap", "shuffle"):
            raise ConfigError("noise_mode must be 'swap' or 'shuffle'")
        if self.feature_format not in ("auto", "dense", "sparse"):
            raise ConfigError("feature_format must be auto, dense or sparse")
        if self.zeta is not None and not self.zeta > 0:
            raise ConfigError("zeta override must be positive")
        if self.jobs < 1:
            raise ConfigError("jobs must be >= 1")
        if need_paths:
            for key in ("edges", "features", "cover"):
                p = getattr(self, key)
                if p is None:
                    raise ConfigError(f"missing dataset path {key!r}")
                if not Path(p).exists():
                    raise ConfigError(f"{key}: no such file {p}")
        return self

    def to_dict(self) -> dict[str, Any]:
        d = {f.name: getattr(self, f.name) for f in dataclasses.fields(self) if f.name != "train"}
        d["label_rates"] = list(self.label_rates)
        d["p_mis"] = list(self.p_mis)
        d.update(dataclasses.asdict(self.train))
        return d


_TRAIN_FIELDS = {f.name: f for f in dataclasses.fields(TrainConfig)}
# label_rate of TrainConfig is driven by the label_rates grid
_TRAIN_KEYS = set(_TRAIN_FIELDS) - {"label_rate"}

_TYPES = {
    "edges": (str, type(None)),
    "features": (str, type(None)),
    "cover": (str, type(None)),
    "feature_format": str,
    "normalize_features": bool,
    "out_dir": str,
    "label_rates": list,
    "p_mis": list,
    "onmi_variant": str,
    "zeta": (float, int, type(None)),
    "noise_mode": str,
    "jobs": int,
    "epochs": int,
    "lr": (float, int),
    "alpha": (float, int),
    "beta": (float, int),
    "seed": int,
    "runs": int,
    "adam_beta1": (float, int),
    "adam_beta2": (float, int),
    "adam_eps": (float, int),
    "patience": (int, type(None)),
    "min_delta": (float, int),
    "heads": int,
    "hidden_per_head": int,
    "embed_per_head": int,
    "modularity_form": str,
    "dense_limit": int,
}


def _line_of(text: str, key: str) -> int | None:
    m = re.search(r'"' + re.escape(key) + r'"\s*:', text)
    return text.count("\n", 0, m.start()) + 1 if m else None


def _where(source: str, text: str, key: str) -> str:
    line = _line_of(text, key) if text else None
    return f"{source}:{line}" if line else source


def _check_type(key, value, where):
    expected = _TYPES[key]
    ok = isinstance(value, expected)
    if isinstance(value, bool) and bool not in _as_tuple(expected):
        ok = False
    if not ok:
        raise ConfigError(f"{where}: key {key!r} expects {_type_name(expected)}, got {type(value).__name__}")
    if expected is list:
        if not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in value):
            raise ConfigError(f"{where}: key {key!r} must be a list of numbers")


def _as_tuple(t):
    return t if isinstance(t, tuple) else (t,)


def _type_name(t) -> str:
    return " or ".join("null" if x is type(None) else x.__name__ for x in _as_tuple(t))


def from_mapping(values: dict[str, Any], source: str = "<config>", text: str = "") -> ExperimentConfig:
    """Build a validated config from flat key/values; unknown keys are rejected."""
    exp_kw, train_kw = {}, {}
    for key, value in values.items():
        where = _where(source, text, key)
        if key not in _TYPES:
            raise ConfigError(f"{where}: unknown key {key!r}")
        _check_type(key, value, where)
        if key == "modularity_form":
            if value not in _FORM_ALIASES:
                raise ConfigError(f"{where}: modularity_form must be one of {MODULARITY_FORMS} (or H / Z)")
            value = _FORM_ALIASES[value]
        if key in ("label_rates", "p_mis"):
            value = tuple(float(v) for v in value)
        if key in _TRAIN_KEYS:
            train_kw[key] = float(value) if _TYPES[key] == (float, int) else value
        else:
            exp_kw[key] = float(value) if key == "zeta" and value is not None else value
    try:
        train = TrainConfig(**train_kw)
    except ValueError as exc:
        raise ConfigError(f"{source}: {exc}") from None
    cfg = ExperimentConfig(train=train, **exp_kw)
    try:
        return cfg.check(need_paths=False)
    except ConfigError as exc:
        raise ConfigError(f"{source}: {exc}") from None


def parse_config(path: str | Path, overrides: dict[str, Any] | None = None) -> ExperimentConfig:
    """Read a JSON config; ``overrides`` (e.g. CLI flags) win over file values.

    Relative dataset paths in the file are taken relative to the file.
    """
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    try:
        values = json.loads(text) if text.strip() else {}
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}: invalid JSON: {exc.msg}") from None
    if not isinstance(values, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    for key in values:
        if key not in _TYPES:
            raise ConfigError(f"{_where(str(path), text, key)}: unknown key {key!r}")
    merged = dict(values)
    for key in ("edges", "features", "cover"):
        p = merged.get(key)
        if isinstance(p, str) and not Path(p).is_absolute():
            merged[key] = str(path.parent / p)
    merged.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return from_mapping(merged, str(path), text)
