"""Run configuration: TOML in, fully-defaulted TOML out.

Layout::

    seed = 0
    output_dir = "out"

    [env]              # EnvConfig fields
    [env.dataset]      # SyntheticSpec fields
    [env.defense_box]  # [lo, hi] pairs
    [env.attack_box]
    [meta]             # MetaConfig fields
    [prior]            # file = "prior.json", or inline [[prior.types]] tables
    [diagnostics]      # checks, cadence and estimator sizes
"""

from __future__ import annotations

import dataclasses
import sys
from pathlib import Path
from typing import Any, Optional

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

import tomli_w

from .attacks import AttackBox
from .data import SyntheticSpec
from .defenses import DefenseBox
from .env import EnvConfig
from .game import TypePrior, load_prior
from .meta import MetaConfig

__all__ = ["ConfigError", "DiagnosticsConfig", "RunConfig", "load_config", "parse_config", "dump_config"]

DIAG_CHECKS = ("fose", "sc", "pl", "lipschitz", "gradcheck")


class ConfigError(ValueError):
    """Invalid or unreadable configuration."""


@dataclasses.dataclass(frozen=True)
class DiagnosticsConfig:
    checks: tuple = ("fose",)
    cadence: int = 0  # full residual estimate every `cadence` iterations; 0 disables
    n_b: int = 64
    replicates: int = 4
    sc_samples: int = 1000
    n_probes: int = 10
    n_pairs: int = 10

    def __post_init__(self):
        bad = [c for c in self.checks if c not in DIAG_CHECKS]
        if bad:
            raise ConfigError(f"unknown diagnostic checks {bad}; expected some of {DIAG_CHECKS}")
        if self.cadence < 0:
            raise ConfigError("diagnostics.cadence must be non-negative")


@dataclasses.dataclass(frozen=True)
class RunConfig:
    env: EnvConfig
    prior: TypePrior
    meta: MetaConfig
    diagnostics: DiagnosticsConfig = DiagnosticsConfig()
    output_dir: str = "out"
    seed: int = 0
    record_wallclock: bool = False
    checkpoint_every: int = 0

    def __post_init__(self):
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigError(f"seed must be a 64-bit unsigned value, got {self.seed}")


def _build(cls, table: dict, where: str, nested: Optional[dict] = None):
    table = dict(table)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(table) - names)
    if unknown:
        raise ConfigError(f"unknown keys in [{where}]: {unknown}")
    for key, sub in (nested or {}).items():
        if key in table:
            if not isinstance(table[key], dict):
                raise ConfigError(f"[{where}.{key}] must be a table")
            table[key] = sub(table[key], f"{where}.{key}")
    try:
        return cls(**table)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{where}]: {exc}") from exc


def _box(cls):
    def make(table, where):
        return _build(cls, {k: tuple(v) if isinstance(v, list) else v for k, v in table.items()}, where)
    return make


def _prior(table: dict, base: Path) -> TypePrior:
    if "file" in table and "types" in table:
        raise ConfigError("[prior] takes either file = ... or inline [[prior.types]], not both")
    try:
        if "file" in table:
            path = Path(table["file"])
            if not path.is_absolute():
                path = base / path
            if not path.exists():
                raise ConfigError(f"prior file {path} does not exist")
            return load_prior(path)
        if "types" in table:
            return TypePrior.from_json({"types": table["types"]})
    except ConfigError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"[prior]: {exc}") from exc
    raise ConfigError("[prior] needs file = ... or inline [[prior.types]] entries")


def parse_config(doc: dict, base: Path = Path("."), seed: Optional[int] = None) -> RunConfig:
    doc = dict(doc)
    known = {"env", "prior", "meta", "diagnostics", "output_dir", "seed", "record_wallclock", "checkpoint_every"}
    unknown = sorted(set(doc) - known)
    if unknown:
        raise ConfigError(f"unknown top-level keys: {unknown}")
    if "prior" not in doc:
        raise ConfigError("config needs a [prior] section")
    run_seed = int(doc.get("seed", 0) if seed is None else seed)
    env = _build(EnvConfig, doc.get("env", {}), "env", {
        "dataset": lambda t, w: _build(SyntheticSpec, t, w),
        "defense_box": _box(DefenseBox),
        "attack_box": lambda t, w: _build(AttackBox, t, w),
    })
    meta_table = dict(doc.get("meta", {}))
    if "seed" in meta_table:
        raise ConfigError("set the seed at top level, not in [meta]")
    meta_table["seed"] = run_seed
    meta = _build(MetaConfig, meta_table, "meta")
    diag_table = dict(doc.get("diagnostics", {}))
    if "checks" in diag_table:
        diag_table["checks"] = tuple(diag_table["checks"])
    diagnostics = _build(DiagnosticsConfig, diag_table, "diagnostics")
    prior = _prior(doc["prior"], base)
    try:
        return RunConfig(env=env, prior=prior, meta=meta, diagnostics=diagnostics,
                         output_dir=str(doc.get("output_dir", "out")), seed=run_seed,
                         record_wallclock=bool(doc.get("record_wallclock", False)),
                         checkpoint_every=int(doc.get("checkpoint_every", 0)))
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path, seed: Optional[int] = None) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    try:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return parse_config(doc, path.parent, seed)


def _plain(obj) -> Any:
    if dataclasses.is_dataclass(obj):
        return {f.name: _plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)
                if getattr(obj, f.name) is not None}
    if isinstance(obj, (tuple, list)):
        return [_plain(v) for v in obj]
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items() if v is not None}
    return obj


def config_to_dict(cfg: RunConfig) -> dict:
    meta = _plain(cfg.meta)
    meta.pop("seed", None)
    return {
        "seed": cfg.seed,
        "output_dir": cfg.output_dir,
        "record_wallclock": cfg.record_wallclock,
        "checkpoint_every": cfg.checkpoint_every,
        "env": _plain(cfg.env),
        "meta": meta,
        "diagnostics": _plain(cfg.diagnostics),
        "prior": {"types": cfg.prior.to_json()["types"]},
    }


def dump_config(cfg: RunConfig) -> str:
    """The fully-defaulted configuration as TOML text."""
    return tomli_w.dumps(config_to_dict(cfg))
