"""Command-line experiment runner.

Subcommands: rate, gd, lcr, simulate, estimate.  All randomness flows from
one --seed; --jobs (or BBMTRAPS_JOBS) sizes the worker pool without
affecting results.  Exit codes: 0 ok, 2 bad config/flags, 3 convergence
failure, 4 capacity (with --strict), 5 conditioning accepted nothing.
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

from . import rng as rngmod
from .branching import extinction_probability
from .config import ball_rule_from, load_experiment
from .errors import (
    AcceptanceError,
    BBMTrapsError,
    CapacityError,
    ConfigError,
    ConvergenceError,
    DomainError,
    LawError,
)
from .estimators import (
    estimate_annealed_survival,
    estimate_conditional_population,
    estimate_conditional_range,
    estimate_trap_presence_given_survival,
    window_for,
)
from .fields import sample_field
from .rates import critical_intensity, g_d, lemma1_bound, minimize_variational, uniform_rate
from .simulator import population_at, range_radius, simulate

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_CONVERGENCE = 3
EXIT_CAPACITY = 4
EXIT_ACCEPTANCE = 5

CSV_COLUMNS = ["config_hash", "t", "statistic", "estimate", "stderr", "n_total", "n_accepted", "seed"]


class _Parser(argparse.ArgumentParser):
    """argparse that reports errors as machine-readable JSON on stderr."""

    def error(self, message):
        print(json.dumps({"error": "usage", "message": message}), file=sys.stderr)
        raise SystemExit(EXIT_CONFIG)


def _emit_error(exc: Exception) -> None:
    print(
        json.dumps({"error": type(exc).__name__, "message": str(exc)}),
        file=sys.stderr,
    )


def _jobs_from(args) -> int:
    if args.jobs is not None:
        return max(1, args.jobs)
    env = os.environ.get("BBMTRAPS_JOBS")
    if env:
        try:
            return max(1, int(env))
        except ValueError as exc:
            raise ConfigError(f"BBMTRAPS_JOBS = {env!r} is not an integer") from exc
    return 1


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="bbmtraps", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    rate = sub.add_parser("rate", help="variational decay rate and companions")
    rate.add_argument("--config", type=str, default=None,
                      help="derive d/beta/m/alpha/l from an experiment config")
    rate.add_argument("--d", type=int, default=None)
    rate.add_argument("--beta", type=float, default=None)
    rate.add_argument("--m", type=float, default=None)
    rate.add_argument("--alpha", type=float, default=None)
    rate.add_argument("--l", type=float, default=None)
    rate.add_argument("--tol", type=float, default=1e-8)
    rate.add_argument("--epsilon", type=float, default=0.5, help="epsilon for the trap-in-ball bound")
    rate.add_argument("--out", type=str, default=None)

    gd = sub.add_parser("gd", help="the singular ball integral g_d(r, b)")
    gd.add_argument("--d", type=int, required=True)
    gd.add_argument("--r", type=float, required=True)
    gd.add_argument("--b", type=float, required=True)
    gd.add_argument("--tol", type=float, default=1e-10)
    gd.add_argument("--out", type=str, default=None)

    lcr = sub.add_parser("lcr", help="critical radial intensity")
    lcr.add_argument("--d", type=int, required=True)
    lcr.add_argument("--beta", type=float, required=True)
    lcr.add_argument("--m", type=float, required=True)
    lcr.add_argument("--alpha", type=float, default=1.0)
    lcr.add_argument("--tol", type=float, default=1e-6)
    lcr.add_argument("--method", choices=["auto", "bisection"], default="auto")
    lcr.add_argument("--out", type=str, default=None)

    simp = sub.add_parser("simulate", help="one tree from a config file")
    simp.add_argument("--config", type=str, required=True)
    simp.add_argument("--seed", type=int, default=None, help="override estimation.seed")
    simp.add_argument("--out", type=str, default=None, help="override output.dir")
    simp.add_argument("--dump", action="store_true", help="write particle/trajectory/field CSVs")
    simp.add_argument("--strict", action="store_true", help="exit 4 when the particle cap was hit")

    est = sub.add_parser("estimate", help="run the configured statistics")
    est.add_argument("--config", type=str, required=True)
    est.add_argument("--seed", type=int, default=None, help="override estimation.seed")
    est.add_argument("--jobs", type=int, default=None)
    est.add_argument("--out", type=str, default=None, help="override output.dir")
    est.add_argument("--strict", action="store_true")
    return p


def _write_json(payload: dict, out: str | None) -> None:
    text = json.dumps(payload, indent=2, sort_keys=True)
    print(text)
    if out:
        Path(out).mkdir(parents=True, exist_ok=True)
        (Path(out) / "result.json").write_text(text + "\n")


def _rate_params(args):
    """Resolve (d, beta, m, alpha, l): config-derived where given, flags win."""
    d = beta = m = alpha = l = None
    if args.config:
        exp = load_experiment(args.config)
        d = exp.sim.dimension
        beta = exp.beta
        m = exp.law.m
        if exp.law.mean > 1.0:
            alpha = 1.0 - exp.law.pgf_prime(extinction_probability(exp.law))
        if exp.field_spec is not None and exp.field_spec.kind == "radial":
            l = exp.field_spec.l
    d = args.d if args.d is not None else d
    beta = args.beta if args.beta is not None else beta
    m = args.m if args.m is not None else m
    alpha = args.alpha if args.alpha is not None else (alpha if alpha is not None else 1.0)
    l = args.l if args.l is not None else l
    missing = [k for k, v in (("--d", d), ("--beta", beta), ("--m", m), ("--l", l)) if v is None]
    if missing:
        raise ConfigError(f"rate needs {', '.join(missing)} (from flags or --config)")
    return d, beta, m, alpha, l


def cmd_rate(args) -> int:
    d, beta, m, alpha, l = _rate_params(args)
    result = minimize_variational(l, beta, m, alpha, d, tol=args.tol)
    lcr = critical_intensity(beta, m, alpha, d, tol=max(args.tol, 1e-8))
    bound = lemma1_bound(beta, m, args.epsilon)
    _write_json(
        {
            "I": result.value,
            "eta_star": result.eta_star,
            "c_star": result.c_star,
            "l_cr": lcr,
            "uniform_rate": uniform_rate(beta, alpha),
            "lemma1_bound": bound.value,
            "lemma1_optimal_k": bound.optimal_k,
            "diagnostics": result.diagnostics,
        },
        args.out,
    )
    return EXIT_OK


def cmd_gd(args) -> int:
    _write_json(
        {"d": args.d, "r": args.r, "b": args.b, "g": g_d(args.d, args.r, args.b, args.tol)},
        args.out,
    )
    return EXIT_OK


def cmd_lcr(args) -> int:
    _write_json(
        {"l_cr": critical_intensity(args.beta, args.m, args.alpha, args.d, args.tol, args.method)},
        args.out,
    )
    return EXIT_OK


def cmd_simulate(args) -> int:
    exp = load_experiment(args.config)
    seed = args.seed if args.seed is not None else exp.seed
    out_dir = args.out or exp.out_dir
    field = None
    if exp.field_spec is not None:
        window = window_for(exp.sim, exp.field_spec)
        field = sample_field(exp.field_spec, window, rngmod.stream_rng(seed, 0, rngmod.FIELD))
    tree_rng = rngmod.stream_rng(seed, 0, rngmod.TREE)
    bridge = rngmod.entropy64(rngmod.stream_rng(seed, 0, rngmod.BRIDGE))
    tree = simulate(exp.sim, tree_rng, field=field, bridge_entropy=bridge, stop_after_hit=False)
    total, skel, doomed = population_at(tree, exp.sim.horizon)
    summary = {
        "seed": seed,
        "config_hash": exp.config_hash,
        "n_particles": len(tree.particles),
        "population": total,
        "skeleton": skel,
        "doomed": doomed,
        "range_radius": range_radius(tree, exp.sim.horizon),
        "first_hit_time": tree.first_hit_time,
        "truncated": tree.truncated,
        "resolved_config": exp.resolved,
    }
    _write_json(summary, out_dir)
    if args.dump:
        base = Path(out_dir or ".")
        base.mkdir(parents=True, exist_ok=True)
        tree.to_particles_csv(base / "particles.csv")
        tree.to_trajectories_csv(base / "trajectories.csv")
        if field is not None:
            field.to_csv(base / "field.csv")
    if tree.truncated and args.strict:
        _emit_error(CapacityError("particle cap hit during simulation"))
        return EXIT_CAPACITY
    return EXIT_OK


def _append_csv_rows(path: Path, rows: list[list]) -> None:
    new = not path.exists()
    with open(path, "a", newline="") as fh:
        w = csv.writer(fh)
        if new:
            w.writerow(CSV_COLUMNS)
        w.writerows(rows)


def cmd_estimate(args) -> int:
    exp = load_experiment(args.config)
    jobs = _jobs_from(args)
    seed = args.seed if args.seed is not None else exp.seed
    exp.resolved["estimation"]["seed"] = seed  # hash reflects the seed actually used
    out_dir = Path(args.out or exp.out_dir or ".")
    results = []
    rows = []
    for st in exp.statistics:
        cfg = replace(exp.mc_config(st, jobs=jobs), base_seed=seed)
        t = st["t"]
        if st["kind"] == "survival":
            res_list = [estimate_annealed_survival(cfg, t)]
        elif st["kind"] == "conditional_population":
            cond = estimate_conditional_population(cfg, t, st["s_fraction"])
            res_list = [cond.singleton]
            if cond.skeleton_singleton is not None:
                res_list.append(cond.skeleton_singleton)
            if cond.doomed_below_log is not None:
                res_list.append(cond.doomed_below_log)
            results.append({"statistic": "population_distribution", "t": t,
                            "distribution": {str(k): v for k, v in cond.distribution.items()}})
        elif st["kind"] == "conditional_range":
            res_list = [estimate_conditional_range(cfg, t, st["epsilon"])]
        else:
            res_list = [estimate_trap_presence_given_survival(cfg, t, ball_rule_from(st))]
        for res in res_list:
            results.append({**res.to_json_dict(), "t": t})
            rows.append(
                [exp.config_hash, repr(t), res.statistic, repr(res.estimate), repr(res.stderr),
                 res.n_total, res.n_accepted, seed]
            )
    out_dir.mkdir(parents=True, exist_ok=True)
    _append_csv_rows(out_dir / "results.csv", rows)
    _write_json({"resolved_config": exp.resolved, "results": results}, None)
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        if args.command == "rate":
            return cmd_rate(args)
        if args.command == "gd":
            return cmd_gd(args)
        if args.command == "lcr":
            return cmd_lcr(args)
        if args.command == "simulate":
            return cmd_simulate(args)
        if args.command == "estimate":
            return cmd_estimate(args)
        raise ConfigError(f"unknown command {args.command!r}")
    except (ConfigError, LawError, DomainError) as exc:
        _emit_error(exc)
        return EXIT_CONFIG
    except ConvergenceError as exc:
        _emit_error(exc)
        return EXIT_CONVERGENCE
    except CapacityError as exc:
        _emit_error(exc)
        return EXIT_CAPACITY
    except AcceptanceError as exc:
        _emit_error(exc)
        return EXIT_ACCEPTANCE
    except BBMTrapsError as exc:
        _emit_error(exc)
        return EXIT_CONFIG


if __name__ == "__main__":
    raise SystemExit(main())
