"""Experiment configuration: strict parsing, defaulting, and hashing.

Configs are plain JSON documents; every section rejects unknown keys so a
typo fails loudly before any computation.  ``resolve`` returns the fully
defaulted document that reproduces the run byte-for-byte.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from typing import Any, Optional

from .branching import BranchingParams, OffspringLaw
from .errors import ConfigError
from .estimators import BallRule, MCConfig
from .fields import TrapFieldSpec
from .simulator import PLAIN, TWO_TYPE, SimulationConfig, default_dt

_STAT_KINDS = ("survival", "conditional_population", "conditional_range", "trap_presence")


def _check_keys(obj: dict, where: str, required: set[str], optional: set[str]) -> None:
    if not isinstance(obj, dict):
        raise ConfigError(f"{where} must be a JSON object, got {type(obj).__name__}")
    missing = required - set(obj)
    if missing:
        raise ConfigError(f"{where}: missing keys {sorted(missing)}")
    unknown = set(obj) - required - optional
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")


def _number(obj: dict, key: str, where: str, *, positive=False, nonnegative=False) -> float:
    v = obj[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{where}.{key} must be a number, got {v!r}")
    v = float(v)
    if positive and v <= 0.0:
        raise ConfigError(f"{where}.{key} must be positive, got {v}")
    if nonnegative and v < 0.0:
        raise ConfigError(f"{where}.{key} must be >= 0, got {v}")
    return v


def _integer(obj: dict, key: str, where: str, *, minimum: Optional[int] = None) -> int:
    v = obj[key]
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(f"{where}.{key} must be an integer, got {v!r}")
    if minimum is not None and v < minimum:
        raise ConfigError(f"{where}.{key} must be >= {minimum}, got {v}")
    return v


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated experiment description with fully resolved defaults."""

    law: OffspringLaw
    beta: float
    field_spec: Optional[TrapFieldSpec]
    sim: SimulationConfig
    n: int
    seed: int
    statistics: tuple[dict, ...]
    out_dir: Optional[str]
    resolved: dict

    @property
    def config_hash(self) -> str:
        blob = json.dumps(self.resolved, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def mc_config(self, statistic: dict, jobs: int = 1) -> MCConfig:
        return MCConfig(
            replicates=self.n,
            base_seed=self.seed,
            sim=self.sim,
            field_spec=self.field_spec,
            conditioned=statistic.get("conditioned", True),
            jobs=jobs,
        )


def _validate_statistic(st: dict, where: str) -> dict:
    _check_keys(st, where, {"kind", "t"}, {"s_fraction", "epsilon", "radius_scale", "conditioned"})
    kind = st["kind"]
    if kind not in _STAT_KINDS:
        raise ConfigError(f"{where}.kind must be one of {_STAT_KINDS}, got {kind!r}")
    out: dict[str, Any] = {"kind": kind, "t": _number(st, "t", where, nonnegative=True)}
    if "conditioned" in st:
        if not isinstance(st["conditioned"], bool):
            raise ConfigError(f"{where}.conditioned must be a boolean")
        out["conditioned"] = st["conditioned"]
    else:
        out["conditioned"] = True
    if kind == "conditional_population":
        out["s_fraction"] = _number(st, "s_fraction", where, positive=True)
        if not out["s_fraction"] < 1.0:
            raise ConfigError(f"{where}.s_fraction must be in (0, 1)")
    elif kind == "conditional_range":
        out["epsilon"] = _number(st, "epsilon", where, positive=True)
    elif kind == "trap_presence":
        out["epsilon"] = _number(st, "epsilon", where, positive=True)
        scale = st.get("radius_scale", "t")
        if scale not in ("t", "t_pow_inv_d"):
            raise ConfigError(f"{where}.radius_scale must be 't' or 't_pow_inv_d'")
        out["radius_scale"] = scale
    else:
        for k in ("s_fraction", "epsilon", "radius_scale"):
            if k in st:
                raise ConfigError(f"{where}.{k} is not valid for kind 'survival'")
    return out


def parse_experiment(doc: dict) -> ExperimentConfig:
    """Validate a config document and resolve all defaults."""
    _check_keys(
        doc,
        "config",
        {"offspring_law", "beta", "simulation", "estimation"},
        {"trap_field", "output"},
    )
    try:
        law = OffspringLaw.from_json_dict(doc["offspring_law"])
    except Exception as exc:
        raise ConfigError(f"offspring_law: {exc}") from exc
    beta = _number(doc, "beta", "config", nonnegative=True)

    field_spec = None
    if doc.get("trap_field") is not None:
        field_spec = TrapFieldSpec.from_json_dict(doc["trap_field"])

    sim_doc = doc["simulation"]
    _check_keys(
        sim_doc, "simulation", {"d", "t"}, {"dt", "mode", "max_particles", "line_select"}
    )
    d = _integer(sim_doc, "d", "simulation", minimum=1)
    if field_spec is not None and field_spec.d != d:
        raise ConfigError(f"simulation.d = {d} but trap_field.d = {field_spec.d}")
    horizon = _number(sim_doc, "t", "simulation", nonnegative=True)
    if "dt" in sim_doc:
        dt = _number(sim_doc, "dt", "simulation", positive=True)
    else:
        dt = default_dt(field_spec.a, d) if field_spec is not None else 0.01
    mode = sim_doc.get("mode", PLAIN)
    if mode not in (PLAIN, TWO_TYPE):
        raise ConfigError(f"simulation.mode must be '{PLAIN}' or '{TWO_TYPE}'")
    max_particles = sim_doc.get("max_particles", 1_000_000)
    if isinstance(max_particles, bool) or not isinstance(max_particles, int) or max_particles < 1:
        raise ConfigError("simulation.max_particles must be a positive integer")
    line_select = sim_doc.get("line_select", "uniform")
    if line_select not in ("uniform", "oldest"):
        raise ConfigError("simulation.line_select must be 'uniform' or 'oldest'")

    est_doc = doc["estimation"]
    _check_keys(est_doc, "estimation", {"n", "seed", "statistics"}, set())
    n = _integer(est_doc, "n", "estimation", minimum=1)
    seed = _integer(est_doc, "seed", "estimation", minimum=0)
    stats_doc = est_doc["statistics"]
    if not isinstance(stats_doc, list) or not stats_doc:
        raise ConfigError("estimation.statistics must be a non-empty list")
    statistics = tuple(
        _validate_statistic(st, f"estimation.statistics[{i}]") for i, st in enumerate(stats_doc)
    )
    for st in statistics:
        if st["t"] > horizon + 1e-12:
            raise ConfigError(f"statistic t = {st['t']} exceeds simulation horizon {horizon}")

    out_dir = None
    if doc.get("output") is not None:
        _check_keys(doc["output"], "output", set(), {"dir"})
        out_dir = doc["output"].get("dir")
        if out_dir is not None and not isinstance(out_dir, str):
            raise ConfigError("output.dir must be a string")

    params = BranchingParams(law=law, beta=beta)
    sim = SimulationConfig(
        params=params,
        dimension=d,
        horizon=horizon,
        dt=dt,
        max_particles=max_particles,
        mode=mode,
        line_select=line_select,
    )
    if mode == TWO_TYPE and law.mean <= 1.0:
        raise ConfigError("two_type mode needs a supercritical offspring law")

    resolved = {
        "offspring_law": law.to_json_dict(),
        "beta": beta,
        "trap_field": field_spec.to_json_dict() if field_spec is not None else None,
        "simulation": {
            "d": d,
            "t": horizon,
            "dt": dt,
            "mode": mode,
            "max_particles": max_particles,
            "line_select": line_select,
        },
        "estimation": {"n": n, "seed": seed, "statistics": [dict(s) for s in statistics]},
        "output": {"dir": out_dir} if out_dir is not None else None,
    }
    return ExperimentConfig(
        law=law,
        beta=beta,
        field_spec=field_spec,
        sim=sim,
        n=n,
        seed=seed,
        statistics=statistics,
        out_dir=out_dir,
        resolved=resolved,
    )


def load_experiment(path: str) -> ExperimentConfig:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    return parse_experiment(doc)


def ball_rule_from(st: dict) -> BallRule:
    return BallRule(epsilon=st["epsilon"], scale=st.get("radius_scale", "t"))

