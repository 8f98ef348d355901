"""Run configuration for the command line front end.

A run is described by one JSON file; command line flags override its values.
Relative paths inside the file resolve against the file's directory.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

from .errors import ConfigError
from .network import Hyperparams


@dataclass(frozen=True)
class SynthConfig:
    M: int = 20
    n_archetypes: int = 12
    n_classes: int = 4
    n_samples: int = 3500
    n_unlabeled: int = 5000
    noise_sigma: float = 0.05
    concentration: float = 1.0


@dataclass(frozen=True)
class RunConfig:
    labeled: Optional[str] = None  # CSV table or raster sidecar (.json)
    unlabeled: Optional[str] = None
    test: Optional[str] = None  # separate test data; default is the labeled remainder
    model: Optional[str] = None  # archive to read; default depends on the command
    out: str = "out"
    seed: int = 0
    threads: Optional[int] = None
    n_train: int = 1000
    n_val: int = 1000
    n_unlabeled: Optional[int] = None  # subsample the unlabeled pool
    n_classes: Optional[int] = None
    patch: int = 5
    stride: int = 1
    normalize: bool = False  # per-sample contrast normalization + global positive shift
    pretrain_inline: bool = False
    hyperparams: Hyperparams = field(default_factory=Hyperparams)
    synth: SynthConfig = field(default_factory=SynthConfig)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hyperparams"] = self.hyperparams.to_dict()
        return d


def _resolve(base: Path, p):
    if p is None:
        return None
    p = Path(p)
    return str(p if p.is_absolute() else (base / p))


def load_config(path=None, overrides: Optional[dict] = None) -> RunConfig:
    raw = {}
    base = Path.cwd()
    if path is not None:
        path = Path(path)
        try:
            raw = json.loads(path.read_text())
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except ValueError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: top level must be an object")
        base = path.resolve().parent
    known = {f.name for f in fields(RunConfig)}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    raw = dict(raw)
    for key in ("labeled", "unlabeled", "test", "model", "out"):
        if key in raw:
            raw[key] = _resolve(base, raw[key])
    try:
        hp = Hyperparams.from_dict(raw.pop("hyperparams", {}))
        synth_raw = raw.pop("synth", {})
        bad = set(synth_raw) - {f.name for f in fields(SynthConfig)}
        if bad:
            raise ConfigError(f"unknown synth keys: {sorted(bad)}")
        cfg = RunConfig(hyperparams=hp, synth=SynthConfig(**synth_raw), **raw)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    overrides = {k: v for k, v in (overrides or {}).items() if v is not None}
    hp_over = overrides.pop("hyperparams", None)
    if hp_over:
        cfg = replace(cfg, hyperparams=replace(cfg.hyperparams, **hp_over))
    cfg = replace(cfg, **overrides)
    _validate(cfg)
    return cfg


def _validate(cfg: RunConfig) -> None:
    if cfg.n_train < 1 or cfg.n_val < 0:
        raise ConfigError("n_train must be >= 1 and n_val >= 0")
    if cfg.patch < 1 or cfg.patch % 2 == 0:
        raise ConfigError("patch must be odd and >= 1")
    if cfg.stride < 1:
        raise ConfigError("stride must be >= 1")
    if cfg.threads is not None and cfg.threads < 1:
        raise ConfigError("threads must be >= 1")


def require_paths(cfg: RunConfig, *keys: str) -> None:
    """Fail early, before any output is written, if a needed input is missing."""
    for key in keys:
        value = getattr(cfg, key)
        if value is None:
            raise ConfigError(f"config needs '{key}'")
        if not Path(value).exists():
            raise ConfigError(f"{key}: no such file {value}")
