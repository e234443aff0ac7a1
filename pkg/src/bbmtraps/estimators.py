"""Replicate-parallel Monte Carlo estimators for annealed survival and
conditioned statistics, with uncertainty quantification.

Plain rejection sampling: each replicate draws a fresh trap field and a
fresh tree from named substreams of one base seed, so results are
bit-identical across runs, worker counts, and chunkings.  Survival up to t
combines "no trap hit by t" with a non-extinction lookahead proxy shared
with the simulator.
"""
from __future__ import annotations

import hashlib
import json
import math
import time
import warnings
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field as dc_field, replace
from typing import Optional

import numpy as np

from .branching import extinction_probability
from .errors import AcceptanceError, DomainError, LowAcceptanceWarning, TruncationError, WindowError
from .fields import TRAP_SET_FREE, TrapField, TrapFieldSpec, is_trap_free
from .simulator import (
    TWO_TYPE,
    ParticleTree,
    SimulationConfig,
    extinction_decision,
    lookahead_horizon,
    population_at,
    range_radius,
    simulate,
)
from . import rng as rngmod

ACCEPTANCE_FLOOR = 1e-4
TRUNCATION_BUDGET = 0.01


@dataclass(frozen=True)
class MCConfig:
    """Replicate-level experiment description.

    ``conditioned`` switches the conditional estimators between conditioning
    on survival S_t (the default) and reporting the unconditioned statistic
    over all replicates; survival estimation itself ignores it.
    """

    replicates: int
    base_seed: int
    sim: SimulationConfig
    field_spec: Optional[TrapFieldSpec] = None
    conditioned: bool = True
    jobs: int = 1

    def __post_init__(self):
        if self.replicates < 1:
            raise DomainError("replicates must be >= 1")
        if self.jobs < 1:
            raise DomainError("jobs must be >= 1")


@dataclass(frozen=True)
class BallRule:
    """Radius of the queried clearing ball: epsilon * t, or epsilon * t^(1/d)."""

    epsilon: float
    scale: str = "t"

    def radius(self, t: float, d: int) -> float:
        if self.scale == "t":
            return self.epsilon * t
        if self.scale == "t_pow_inv_d":
            return self.epsilon * t ** (1.0 / d)
        raise DomainError(f"unknown ball scale {self.scale!r}")


@dataclass(frozen=True)
class EstimateResult:
    """Point estimate with sampling error and provenance."""

    statistic: str
    estimate: float
    stderr: float
    n_total: int
    n_accepted: int
    base_seed: int
    config_hash: str
    wall_clock_s: float = 0.0

    def to_json_dict(self) -> dict:
        return {
            "statistic": self.statistic,
            "estimate": self.estimate,
            "stderr": self.stderr,
            "n_total": self.n_total,
            "n_accepted": self.n_accepted,
            "seed": self.base_seed,
            "config_hash": self.config_hash,
        }


@dataclass(frozen=True)
class ConditionalPopulationResult:
    """Empirical conditioned population law plus its headline point estimates."""

    distribution: dict[int, int]
    singleton: EstimateResult
    pair_distribution: Optional[dict[tuple[int, int], int]] = None
    skeleton_singleton: Optional[EstimateResult] = None
    doomed_below_log: Optional[EstimateResult] = None


def window_for(sim: SimulationConfig, field_spec: TrapFieldSpec) -> float:
    """Sampling window covering every trajectory of the run.

    Ballistic reach sqrt(2 beta m) * horizon plus a diffusive slack 8*sqrt(t)
    plus the trap radius: the slack keeps the per-replicate probability that
    any particle exits the window below ~1e-13 uniformly in beta*m*t, so
    WindowError stays a structural failure rather than a tail event.
    """
    beta = sim.params.beta
    m = max(sim.params.law.m, 0.0)
    t = sim.horizon
    return math.sqrt(2.0 * beta * m) * t + 8.0 * math.sqrt(t) + field_spec.a


@dataclass(frozen=True)
class _Bundle:
    """Everything one worker needs; must stay cheaply picklable."""

    sim: SimulationConfig
    field_spec: Optional[TrapFieldSpec]
    window: float
    base_seed: int
    conditioned: bool
    ts: tuple[float, ...]
    until: float
    s_time: Optional[float] = None
    want_pair: bool = False
    range_limit: Optional[float] = None
    ball_radius: Optional[float] = None
    doomed_log_limit: Optional[float] = None


@dataclass
class _Agg:
    n: int = 0
    truncated: int = 0
    curve: Optional[np.ndarray] = None
    accepted: int = 0
    pop_hist: Counter = dc_field(default_factory=Counter)
    pair_hist: Counter = dc_field(default_factory=Counter)
    pop_singleton: int = 0
    skel_singleton: int = 0
    doomed_below: int = 0
    range_within: int = 0
    presence: int = 0

    def merge(self, other: "_Agg") -> None:
        self.n += other.n
        self.truncated += other.truncated
        if other.curve is not None:
            self.curve = other.curve if self.curve is None else self.curve + other.curve
        self.accepted += other.accepted
        self.pop_hist.update(other.pop_hist)
        self.pair_hist.update(other.pair_hist)
        self.pop_singleton += other.pop_singleton
        self.skel_singleton += other.skel_singleton
        self.doomed_below += other.doomed_below
        self.range_within += other.range_within
        self.presence += other.presence


def _replicate_agg(b: _Bundle, i: int, agg: _Agg) -> None:
    field: Optional[TrapField] = None
    if b.field_spec is not None:
        # Lazy realization: rings materialize only as trajectories reach them,
        # from per-ring substreams, so the far field costs nothing for
        # replicates that die near the origin.
        field = TrapField.lazy(
            b.field_spec, b.window, rngmod.stream_key(b.base_seed, i, rngmod.FIELD)
        )

    agg.n += 1
    needs_hit = field is not None and b.conditioned
    if needs_hit:
        field.ensure(field.spec.a)
        if field.n and float((field.centers**2).sum(axis=1).min()) <= field.spec.a**2:
            # Origin starts inside the trap set: dead at t = 0, nothing to simulate.
            return

    tree_rng = rngmod.stream_rng(b.base_seed, i, rngmod.TREE)
    bridge_entropy = rngmod.entropy64(rngmod.stream_rng(b.base_seed, i, rngmod.BRIDGE))
    if needs_hit:
        tree = simulate(b.sim, tree_rng, field=field, bridge_entropy=bridge_entropy)
        hit = tree.first_hit_time
    else:
        tree = simulate(b.sim, tree_rng)
        hit = None

    if tree.truncated:
        agg.truncated += 1
        return

    t_main = b.ts[-1]
    if b.conditioned:
        no_hit_main = hit is None or hit > t_main
        no_hit_any = hit is None or hit > b.ts[0]
        tau: Optional[float] = None
        proxy_known = False
        if no_hit_any:
            from_time = tree.horizon
            if tree.aborted_after_hit and hit is not None:
                from_time = max(0.0, np.nextafter(hit, -math.inf))
            tau = extinction_decision(
                tree, rngmod.stream_rng(b.base_seed, i, rngmod.LOOKAHEAD), b.until,
                from_time=from_time,
            )
            proxy_known = True
        if _curve_needed(b):
            lookahead = b.until - b.ts[-1]
            row = np.zeros(len(b.ts), dtype=np.int64)
            for j, tj in enumerate(b.ts):
                ok_hit = hit is None or hit > tj
                ok_ext = proxy_known and (tau is None or tau > tj + lookahead)
                row[j] = 1 if (ok_hit and ok_ext) else 0
            agg.curve = row if agg.curve is None else agg.curve + row
        lookahead = b.until - t_main
        accepted = no_hit_main and proxy_known and (tau is None or tau > t_main + lookahead)
    else:
        accepted = True
    if not accepted:
        return
    agg.accepted += 1

    if b.s_time is not None:
        total, skel, doomed = population_at(tree, b.s_time)
        agg.pop_hist[total] += 1
        if total == 1:
            agg.pop_singleton += 1
        if b.want_pair:
            agg.pair_hist[(skel, doomed)] += 1
            if skel == 1:
                agg.skel_singleton += 1
            if b.doomed_log_limit is not None and doomed <= b.doomed_log_limit:
                agg.doomed_below += 1
    if b.range_limit is not None:
        if range_radius(tree, t_main) <= b.range_limit:
            agg.range_within += 1
    if b.ball_radius is not None:
        if not is_trap_free(field, np.zeros(b.sim.dimension), b.ball_radius, TRAP_SET_FREE):
            agg.presence += 1


def _curve_needed(b: _Bundle) -> bool:
    return len(b.ts) > 1


def _run_chunk(b: _Bundle, lo: int, hi: int) -> _Agg:
    agg = _Agg()
    if _curve_needed(b):
        agg.curve = np.zeros(len(b.ts), dtype=np.int64)
    for i in range(lo, hi):
        _replicate_agg(b, i, agg)
    return agg


def _run(b: _Bundle, n: int, jobs: int) -> _Agg:
    if jobs <= 1 or n < 64:
        return _run_chunk(b, 0, n)
    n_chunks = jobs * 4
    bounds = np.linspace(0, n, n_chunks + 1).astype(int)
    total = _Agg()
    if _curve_needed(b):
        total.curve = np.zeros(len(b.ts), dtype=np.int64)
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        futures = [
            pool.submit(_run_chunk, b, int(lo), int(hi))
            for lo, hi in zip(bounds[:-1], bounds[1:])
            if hi > lo
        ]
        for fut in futures:  # submission order == replicate order
            total.merge(fut.result())
    return total


def _fingerprint(b: _Bundle, statistic: str, n: int) -> str:
    payload = {
        "statistic": statistic,
        "n": n,
        "seed": b.base_seed,
        "conditioned": b.conditioned,
        "ts": list(b.ts),
        "s_time": b.s_time,
        "range_limit": b.range_limit,
        "ball_radius": b.ball_radius,
        "window": b.window,
        "sim": {
            "d": b.sim.dimension,
            "horizon": b.sim.horizon,
            "dt": b.sim.dt,
            "mode": b.sim.mode,
            "max_particles": b.sim.max_particles,
            "beta": b.sim.params.beta,
            "law": b.sim.params.law.to_json_dict(),
        },
        "field": None if b.field_spec is None else b.field_spec.to_json_dict(),
    }
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _proportion(count: int, n: int) -> tuple[float, float]:
    if n == 0:
        return math.nan, math.nan
    p = count / n
    return p, math.sqrt(max(p * (1.0 - p), 0.0) / n)


def _bundle(cfg: MCConfig, ts: tuple[float, ...], **kw) -> _Bundle:
    for t in ts:
        if t < 0.0 or t > cfg.sim.horizon + 1e-12:
            raise DomainError(f"t = {t} must lie in [0, simulation horizon {cfg.sim.horizon}]")
    window = 0.0
    if cfg.field_spec is not None:
        if cfg.field_spec.d != cfg.sim.dimension:
            raise DomainError("field and simulation dimensions differ")
        window = window_for(cfg.sim, cfg.field_spec)
    sk_alpha = 1.0
    if cfg.sim.params.law.p0 > 0.0 and cfg.sim.params.law.mean > 1.0:
        q = extinction_probability(cfg.sim.params.law)
        sk_alpha = 1.0 - cfg.sim.params.law.pgf_prime(q)
    lookahead = lookahead_horizon(cfg.sim.params.beta, sk_alpha)
    return _Bundle(
        sim=cfg.sim,
        field_spec=cfg.field_spec,
        window=window,
        base_seed=cfg.base_seed,
        conditioned=cfg.conditioned,
        ts=ts,
        until=ts[-1] + lookahead,
        **kw,
    )


def _check_truncation(agg: _Agg, n: int) -> None:
    if agg.truncated > TRUNCATION_BUDGET * n:
        raise TruncationError(
            f"{agg.truncated}/{n} replicates hit the particle cap (> {TRUNCATION_BUDGET:.0%})"
        )


def _check_acceptance(agg: _Agg, n: int, statistic: str) -> None:
    if agg.accepted == 0:
        raise AcceptanceError(f"{statistic}: no replicate satisfied the conditioning")
    rate = agg.accepted / n
    if rate < ACCEPTANCE_FLOOR:
        warnings.warn(
            LowAcceptanceWarning(
                f"{statistic}: acceptance rate {rate:.2e} below {ACCEPTANCE_FLOOR:.0e}; "
                "the conditional estimate carries a very large variance"
            )
        )


def estimate_annealed_survival(cfg: MCConfig, t: float) -> EstimateResult:
    """Frequency of the survival event S_t = {no trap hit by t} * {non-extinct}.

    Non-extinction uses the shared lookahead proxy.  Raises TruncationError
    when more than 1% of replicates hit the particle cap.
    """
    start = time.perf_counter()
    b = _bundle(replace(cfg, conditioned=True), (float(t),))
    agg = _run(b, cfg.replicates, cfg.jobs)
    _check_truncation(agg, cfg.replicates)
    usable = agg.n - agg.truncated
    p, se = _proportion(agg.accepted, usable)
    return EstimateResult(
        statistic="annealed_survival",
        estimate=p,
        stderr=se,
        n_total=cfg.replicates,
        n_accepted=agg.accepted,
        base_seed=cfg.base_seed,
        config_hash=_fingerprint(b, "annealed_survival", cfg.replicates),
        wall_clock_s=time.perf_counter() - start,
    )


def survival_curve(cfg: MCConfig, ts: tuple[float, ...]) -> list[EstimateResult]:
    """Survival estimates on a time grid from one coupled set of replicates.

    Each replicate contributes a pathwise-nonincreasing indicator row (one
    hit time, one extinction decision), so the curve is monotone by
    construction, not just in expectation.
    """
    ts = tuple(sorted(float(t) for t in ts))
    if not ts:
        raise DomainError("ts must be non-empty")
    start = time.perf_counter()
    b = _bundle(replace(cfg, conditioned=True), ts)
    agg = _run(b, cfg.replicates, cfg.jobs)
    _check_truncation(agg, cfg.replicates)
    usable = agg.n - agg.truncated
    curve = agg.curve if agg.curve is not None else np.array([agg.accepted])
    wall = time.perf_counter() - start
    out = []
    for j, tj in enumerate(ts):
        p, se = _proportion(int(curve[j]), usable)
        out.append(
            EstimateResult(
                statistic=f"annealed_survival[t={tj:g}]",
                estimate=p,
                stderr=se,
                n_total=cfg.replicates,
                n_accepted=int(curve[j]),
                base_seed=cfg.base_seed,
                config_hash=_fingerprint(b, "annealed_survival_curve", cfg.replicates),
                wall_clock_s=wall,
            )
        )
    return out


def estimate_conditional_population(
    cfg: MCConfig, t: float, s_fraction: float
) -> ConditionalPopulationResult:
    """Law of the population at time s_fraction*t among survivors to t.

    Plain mode reports the total count; two-type mode additionally reports
    the (skeleton, doomed) pair law, P(skeleton = 1), and
    P(doomed <= log t).  Raises AcceptanceError when nothing survives.
    """
    if not 0.0 < s_fraction < 1.0:
        raise DomainError("s_fraction must be in (0, 1)")
    start = time.perf_counter()
    want_pair = cfg.sim.mode == TWO_TYPE
    b = _bundle(
        cfg,
        (float(t),),
        s_time=s_fraction * float(t),
        want_pair=want_pair,
        doomed_log_limit=math.log(t) if want_pair and t > 0 else None,
    )
    agg = _run(b, cfg.replicates, cfg.jobs)
    _check_acceptance(agg, cfg.replicates, "conditional_population")
    wall = time.perf_counter() - start
    fp = _fingerprint(b, "conditional_population", cfg.replicates)

    def res(name: str, count: int) -> EstimateResult:
        p, se = _proportion(count, agg.accepted)
        return EstimateResult(
            statistic=name,
            estimate=p,
            stderr=se,
            n_total=cfg.replicates,
            n_accepted=agg.accepted,
            base_seed=cfg.base_seed,
            config_hash=fp,
            wall_clock_s=wall,
        )

    return ConditionalPopulationResult(
        distribution=dict(sorted(agg.pop_hist.items())),
        singleton=res("population_singleton", agg.pop_singleton),
        pair_distribution=dict(sorted(agg.pair_hist.items())) if want_pair else None,
        skeleton_singleton=res("skeleton_singleton", agg.skel_singleton) if want_pair else None,
        doomed_below_log=res("doomed_below_log", agg.doomed_below) if want_pair else None,
    )


def estimate_conditional_range(cfg: MCConfig, t: float, epsilon: float) -> EstimateResult:
    """Conditional frequency of {range radius at t <= epsilon * t} among survivors."""
    if epsilon <= 0.0:
        raise DomainError("epsilon must be positive")
    start = time.perf_counter()
    b = _bundle(cfg, (float(t),), range_limit=epsilon * float(t))
    agg = _run(b, cfg.replicates, cfg.jobs)
    _check_acceptance(agg, cfg.replicates, "conditional_range")
    p, se = _proportion(agg.range_within, agg.accepted)
    return EstimateResult(
        statistic="conditional_range",
        estimate=p,
        stderr=se,
        n_total=cfg.replicates,
        n_accepted=agg.accepted,
        base_seed=cfg.base_seed,
        config_hash=_fingerprint(b, "conditional_range", cfg.replicates),
        wall_clock_s=time.perf_counter() - start,
    )


def estimate_trap_presence_given_survival(
    cfg: MCConfig, t: float, radius_rule: BallRule
) -> EstimateResult:
    """Conditional frequency that the ball B(0, radius_rule(t)) meets the trap set."""
    if cfg.field_spec is None:
        raise DomainError("trap presence needs a field spec")
    radius = radius_rule.radius(float(t), cfg.sim.dimension)
    window = window_for(cfg.sim, cfg.field_spec)
    if not cfg.field_spec.zero_intensity and radius + cfg.field_spec.a > window:
        raise WindowError(
            f"queried ball radius {radius:.6g} (+a) exceeds the sampled window {window:.6g}"
        )
    start = time.perf_counter()
    b = _bundle(cfg, (float(t),), ball_radius=radius)
    agg = _run(b, cfg.replicates, cfg.jobs)
    _check_acceptance(agg, cfg.replicates, "trap_presence")
    p, se = _proportion(agg.presence, agg.accepted)
    return EstimateResult(
        statistic="trap_presence",
        estimate=p,
        stderr=se,
        n_total=cfg.replicates,
        n_accepted=agg.accepted,
        base_seed=cfg.base_seed,
        config_hash=_fingerprint(b, "trap_presence", cfg.replicates),
        wall_clock_s=time.perf_counter() - start,
    )
