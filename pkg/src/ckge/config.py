"""Hyperparameters and run configuration, with flat ``key=value`` text I/O."""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

from ckge.errors import ConfigError
from ckge.synthetic import SyntheticSpec

ALPHA_MODES = ("uniform", "inverse-size")
PROTOCOLS = ("filtered", "raw")


@dataclass
class Hyperparameters:
    dim: int = 32
    margin: float = 1.0
    lambda_obs: float = 1.0
    lambda_init: float = 0.01
    beta: float = 0.3
    tau: float = 1.0
    n_clusters: int = 10
    momentum: float = 0.5
    alpha_mode: str = "inverse-size"
    learning_rate: float = 0.03
    epochs: int = 100
    batch_size: int = 256
    seed: int = 0
    negatives: int = 1
    reassign_every: int = 5
    normalize_entities: bool = False
    # None means relations share lambda_obs with entities
    lambda_obs_relation: float | None = None
    proxy_noise: float = 0.01
    exact_betweenness_limit: int = 2000
    betweenness_pivots: int = 256

    def validate(self) -> "Hyperparameters":
        checks = [
            (self.dim >= 1, "dim must be >= 1"),
            (self.margin >= 0, "margin must be >= 0"),
            (self.lambda_obs >= 0, "lambda_obs must be >= 0"),
            (self.lambda_init > 0, "lambda_init must be > 0"),
            (self.beta >= 0, "beta must be >= 0"),
            (self.tau > 0, "tau must be > 0"),
            (self.n_clusters >= 1, "n_clusters must be >= 1"),
            (0 <= self.momentum <= 1, "momentum must lie in [0, 1]"),
            (self.alpha_mode in ALPHA_MODES, f"alpha_mode must be one of {ALPHA_MODES}"),
            (self.learning_rate > 0, "learning_rate must be > 0"),
            (self.epochs >= 0, "epochs must be >= 0"),
            (self.batch_size >= 1, "batch_size must be >= 1"),
            (self.negatives >= 1, "negatives must be >= 1"),
            (self.reassign_every >= 1, "reassign_every must be >= 1"),
            (self.lambda_obs_relation is None or self.lambda_obs_relation >= 0,
             "lambda_obs_relation must be >= 0"),
            (self.proxy_noise >= 0, "proxy_noise must be >= 0"),
            (self.betweenness_pivots >= 1, "betweenness_pivots must be >= 1"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)
        return self


@dataclass
class RunConfig:
    data_root: str | None = None
    synthetic: SyntheticSpec | None = None
    hp: Hyperparameters = field(default_factory=Hyperparameters)
    disable_bayes: bool = False
    disable_fcc: bool = False
    freeze_old_centroids: bool = False
    protocol: str = "filtered"
    out_dir: str = "runs/default"

    @property
    def seed(self) -> int:
        return self.hp.seed

    def validate(self) -> "RunConfig":
        if (self.data_root is None) == (self.synthetic is None):
            raise ConfigError("exactly one of data_root or synthetic.* must be given")
        if self.protocol not in PROTOCOLS:
            raise ConfigError(f"protocol must be one of {PROTOCOLS}")
        self.hp.validate()
        return self

    def to_flat(self) -> dict[str, Any]:
        flat: dict[str, Any] = {}
        if self.data_root is not None:
            flat["data_root"] = self.data_root
        if self.synthetic is not None:
            for f in fields(self.synthetic):
                flat[f"synthetic.{f.name}"] = getattr(self.synthetic, f.name)
        for f in fields(self.hp):
            flat[f.name] = getattr(self.hp, f.name)
        for key in ("disable_bayes", "disable_fcc", "freeze_old_centroids", "protocol", "out_dir"):
            flat[key] = getattr(self, key)
        return flat

    def dumps(self) -> str:
        return "".join(f"{k}={_fmt(v)}\n" for k, v in self.to_flat().items())

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)


def _fmt(value: Any) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (list, tuple)):
        return ",".join(str(v) for v in value)
    return str(value)


def _parse(raw: str, annotation: str, key: str) -> Any:
    raw = raw.strip()
    optional = "None" in annotation
    if optional and raw.lower() in ("none", ""):
        return None
    try:
        if "list" in annotation:
            return [int(x) for x in raw.split(",") if x.strip()]
        if annotation.startswith("bool"):
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if annotation.startswith("int"):
            return int(raw)
        if annotation.startswith("float"):
            return float(raw)
    except ValueError as exc:
        raise ConfigError(f"cannot parse {key}={raw!r} as {annotation}") from exc
    return raw


def apply_overrides(cfg: RunConfig, pairs: dict[str, str]) -> RunConfig:
    """Apply flat ``key -> text`` settings (``synthetic.*`` keys create a spec)."""
    hp_fields = {f.name: f for f in fields(Hyperparameters)}
    syn_fields = {f.name: f for f in fields(SyntheticSpec)}
    top = {"data_root": "str | None", "disable_bayes": "bool", "disable_fcc": "bool",
           "freeze_old_centroids": "bool", "protocol": "str", "out_dir": "str"}
    hp = dataclasses.replace(cfg.hp)
    syn = dataclasses.replace(cfg.synthetic) if cfg.synthetic is not None else None
    updates: dict[str, Any] = {}
    for key, raw in pairs.items():
        key = key.strip().replace("-", "_")
        if key.startswith("synthetic."):
            name = key.split(".", 1)[1]
            if name not in syn_fields:
                raise ConfigError(f"unknown synthetic key {key!r}")
            syn = syn or SyntheticSpec()
            setattr(syn, name, _parse(raw, str(syn_fields[name].type), key))
        elif key in hp_fields:
            setattr(hp, key, _parse(raw, str(hp_fields[key].type), key))
        elif key in top:
            updates[key] = _parse(raw, top[key], key)
        else:
            raise ConfigError(f"unknown config key {key!r}")
    return dataclasses.replace(cfg, hp=hp, synthetic=syn, **updates)


def parse_pairs(lines) -> dict[str, str]:
    pairs: dict[str, str] = {}
    for lineno, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {line!r}")
        k, v = line.split("=", 1)
        pairs[k.strip()] = v.strip()
    return pairs


def load_config(path: str | os.PathLike | None = None, overrides: dict[str, str] | None = None) -> RunConfig:
    cfg = RunConfig()
    if path is not None:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        cfg = apply_overrides(cfg, parse_pairs(text.splitlines()))
    if overrides:
        cfg = apply_overrides(cfg, overrides)
    return cfg
