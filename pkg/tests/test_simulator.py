import math

import numpy as np
import pytest
from scipy import stats

from bbmtraps import (
    BranchingParams,
    DomainError,
    OffspringLaw,
    ParticleTree,
    SimulationConfig,
    TrapField,
    TrapFieldSpec,
    doomed_alive_along_line,
    dyadic,
    extinction_decision,
    first_trapping_time,
    population_at,
    range_radius,
    simulate,
)
from bbmtraps.simulator import LABEL_SKELETON, TWO_TYPE
from bbmtraps.fields import path_hit_time
from bbmtraps import rng as rngmod

LAW_Q3 = OffspringLaw({0: 0.25, 2: 0.75})


def _cfg(law=None, beta=1.0, d=1, t=1.0, dt=0.05, mode="plain", cap=1_000_000):
    return SimulationConfig(
        params=BranchingParams(law or dyadic(), beta),
        dimension=d,
        horizon=t,
        dt=dt,
        max_particles=cap,
        mode=mode,
    )


# ---------------------------------------------------------------------------
# Basic structure
# ---------------------------------------------------------------------------

def test_horizon_zero_single_particle(rng):
    tree = simulate(_cfg(t=0.0), rng)
    assert len(tree.particles) == 1
    assert population_at(tree, 0.0) == (1, 0, 0)
    assert range_radius(tree, 0.0) == 0.0


def test_lineage_conservation(rng):
    tree = simulate(_cfg(t=2.0, d=2), rng)
    for p in tree.particles:
        if p.parent == -1:
            assert p.birth == 0.0
            continue
        parent = tree.particles[p.parent]
        assert p.birth == parent.death
        assert np.array_equal(p.start, parent.positions[-1])
        assert p.times[0] == p.birth
        assert p.positions.shape == (len(p.times), 2)
        assert (np.diff(p.times) > 0).all()


def test_population_just_after_first_branch(rng):
    # Dyadic law: the moment the root branches the census reads 2.
    for _ in range(20):
        tree = simulate(_cfg(t=3.0), rng)
        root = tree.particles[0]
        if root.alive:
            continue
        assert population_at(tree, min(root.death, 3.0))[0] == 2
        return
    raise AssertionError("root never branched in 20 tries")


def test_branch_times_exponential():
    # Root lifetimes are Exp(beta); censoring at horizon 12 is ~6e-6 and the
    # particle cap only prunes descendants, never the root clock.
    lifetimes = []
    for i in range(10000):
        tree = simulate(_cfg(t=12.0, dt=1e9, cap=64), rngmod.stream_rng(61, i))
        root = tree.particles[0]
        if not root.alive:
            lifetimes.append(root.death - root.birth)
    res = stats.kstest(lifetimes, "expon")
    assert res.pvalue > 0.001


def test_capacity_cap_sets_truncated_flag(rng):
    law = OffspringLaw({3: 1.0})
    tree = simulate(_cfg(law=law, beta=5.0, t=5.0, dt=1e9, cap=16), rng)
    assert tree.truncated
    assert len(tree.particles) <= 16


def test_mean_population_growth():
    tot = 0
    n = 20000
    for i in range(n):
        tree = simulate(_cfg(t=1.0, dt=0.25), rngmod.stream_rng(62, i))
        tot += population_at(tree, 1.0)[0]
    mean = tot / n
    # Yule at t=1: variance e(e-1), so 3 SE ~ 0.045
    assert abs(mean - math.e) <= 3 * math.sqrt(math.e * (math.e - 1) / n)


# ---------------------------------------------------------------------------
# Two-type mode
# ---------------------------------------------------------------------------

def test_two_type_initial_census(rng):
    tree = simulate(_cfg(law=LAW_Q3, t=0.0, mode=TWO_TYPE), rng)
    assert population_at(tree, 0.0) == (1, 1, 0)


def test_two_type_skeleton_immortal_and_monotone():
    for i in range(300):
        tree = simulate(_cfg(law=LAW_Q3, t=2.0, dt=1e9, mode=TWO_TYPE), rngmod.stream_rng(63, i))
        skel = [population_at(tree, s)[1] for s in np.linspace(0.0, 2.0, 9)]
        assert skel[0] == 1
        assert all(s >= 1 for s in skel)
        assert all(b >= a for a, b in zip(skel, skel[1:]))


def test_two_type_skeleton_branches_keep_a_skeleton_child(rng):
    tree = simulate(_cfg(law=LAW_Q3, t=3.0, dt=1e9, mode=TWO_TYPE), rng)
    for p in tree.particles:
        if p.label == LABEL_SKELETON and not p.alive and p.offspring:
            kids = [c for c in tree.particles if c.parent == p.id]
            assert any(c.label == LABEL_SKELETON for c in kids)


def test_plain_mode_reports_zero_labels(rng):
    tree = simulate(_cfg(t=1.0), rng)
    total, skel, doomed = population_at(tree, 1.0)
    assert skel == 0 and doomed == 0 and total >= 1


# ---------------------------------------------------------------------------
# range_radius
# ---------------------------------------------------------------------------

def test_range_radius_monotone(rng):
    tree = simulate(_cfg(t=2.0, d=2, dt=0.05), rng)
    vals = [range_radius(tree, s) for s in np.linspace(0.0, 2.0, 11)]
    assert vals[0] == 0.0
    assert all(b >= a for a, b in zip(vals, vals[1:]))


def test_single_particle_sup_norm_tail_vs_refined_dt():
    # beta = 0, d = 1: P(range(1) > 1.5) under dt and dt/4 must agree; the
    # refined run is the oracle for discretization error.
    def run(dt, seed, n):
        cfg = _cfg(beta=0.0, t=1.0, d=1, dt=dt)
        hits = 0
        for i in range(n):
            tree = simulate(cfg, rngmod.stream_rng(seed, i))
            if range_radius(tree, 1.0) > 1.5:
                hits += 1
        return hits / n

    n = 8000
    p_coarse = run(0.02, 64, n)
    p_fine = run(0.005, 65, n)
    se = math.sqrt(2 * max(p_coarse, p_fine) / n)
    assert abs(p_coarse - p_fine) <= 3 * se


# ---------------------------------------------------------------------------
# first_trapping_time
# ---------------------------------------------------------------------------

def test_first_trap_empty_field(rng):
    spec = TrapFieldSpec.uniform(d=1, v=1.0, a=0.3)
    field = TrapField(spec, np.zeros((0, 1)), window_radius=50.0)
    tree = simulate(_cfg(t=1.0), rng)
    assert first_trapping_time(tree, field, rng) is None


def test_first_trap_origin_inside(rng):
    spec = TrapFieldSpec.uniform(d=1, v=1.0, a=0.3)
    field = TrapField(spec, np.array([[0.1]]), window_radius=50.0)
    tree = simulate(_cfg(t=1.0), rng)
    assert first_trapping_time(tree, field, rng) == 0.0


def test_first_trap_monotone_under_field_growth():
    spec = TrapFieldSpec.uniform(d=2, v=1.0, a=0.4)
    rng = np.random.default_rng(66)
    for trial in range(250):
        tree = simulate(_cfg(t=1.5, d=2, dt=0.02), rngmod.stream_rng(67, trial))
        base = rng.uniform(-3.0, 3.0, size=(rng.integers(0, 5), 2))
        extra = rng.uniform(-3.0, 3.0, size=(1, 2))
        f_small = TrapField(spec, base, window_radius=100.0)
        f_big = TrapField(spec, np.vstack((base, extra)), window_radius=100.0)
        t_small = first_trapping_time(tree, f_small, rngmod.stream_rng(68, trial))
        t_big = first_trapping_time(tree, f_big, rngmod.stream_rng(68, trial))
        if t_small is not None:
            assert t_big is not None and t_big <= t_small + 1e-12


def test_fused_scan_equals_posthoc_scan():
    spec = TrapFieldSpec.uniform(d=2, v=0.8, a=0.4)
    for i in range(60):
        field_rng = rngmod.stream_rng(69, i, rngmod.FIELD)
        field = __import__("bbmtraps").sample_field(spec, 20.0, field_rng)
        entropy = rngmod.stream_key(69, i, rngmod.BRIDGE)
        cfg = _cfg(t=1.0, d=2, dt=0.02)
        tree = simulate(
            cfg, rngmod.stream_rng(69, i, rngmod.TREE),
            field=field, bridge_entropy=entropy, stop_after_hit=False,
        )
        manual = None
        for p in tree.particles:
            h = path_hit_time(p.times, p.positions, field, entropy, p.id)
            if h is not None and (manual is None or h < manual):
                manual = h
        assert (tree.first_hit_time is None) == (manual is None)
        if manual is not None:
            assert tree.first_hit_time == pytest.approx(manual, abs=1e-12)


def test_hitting_probability_matches_classical_formula():
    # d = 3 transient Brownian motion, ball radius a at distance rho:
    # P(tau <= T) = (a/rho) erfc((rho - a)/sqrt(2T)); here 0.228882 at T=200.
    a, rho, T = 0.5, 2.0, 200.0
    exact = (a / rho) * math.erfc((rho - a) / math.sqrt(2 * T))
    spec = TrapFieldSpec.uniform(d=3, v=1e-12, a=a)
    field = TrapField(spec, np.array([[rho, 0.0, 0.0]]), window_radius=1e9)
    cfg = _cfg(beta=0.0, d=3, t=T, dt=0.01)
    n = 1500
    hits = 0
    for i in range(n):
        tree = simulate(
            cfg, rngmod.stream_rng(42, i, rngmod.TREE),
            field=field, bridge_entropy=rngmod.stream_key(42, i, rngmod.BRIDGE),
        )
        if tree.first_hit_time is not None and tree.first_hit_time <= T:
            hits += 1
    p = hits / n
    se = math.sqrt(exact * (1 - exact) / n)
    assert abs(p - exact) <= 3 * se


# ---------------------------------------------------------------------------
# doomed_alive_along_line
# ---------------------------------------------------------------------------

def test_doomed_line_zero_without_deaths(rng):
    tree = simulate(_cfg(t=1.0, mode=TWO_TYPE), rng)
    assert doomed_alive_along_line(tree, 1.0, rng) == 0
    assert doomed_alive_along_line(tree, 0.0, rng) == 0


def test_doomed_line_requires_two_type(rng):
    tree = simulate(_cfg(t=1.0), rng)
    with pytest.raises(DomainError):
        doomed_alive_along_line(tree, 1.0, rng)


def test_doomed_line_trend():
    # The count produced by one skeletal line, alive now, stays put while
    # log t grows: P(count > log t) must not increase along t.
    results = []
    for t, n in ((5.0, 1500), (8.0, 700), (12.0, 350)):
        cfg = _cfg(law=LAW_Q3, t=t, dt=1e9, mode=TWO_TYPE)
        thresh = math.log(t)
        cnt = 0
        for i in range(n):
            tree = simulate(cfg, rngmod.stream_rng(71, i))
            if doomed_alive_along_line(tree, t, rngmod.stream_rng(72, i)) > thresh:
                cnt += 1
        p = cnt / n
        results.append((p, math.sqrt(p * (1 - p) / n)))
    for (p1, s1), (p2, s2) in zip(results, results[1:]):
        assert p2 <= p1 + 3 * math.hypot(s1, s2)


def test_doomed_line_oldest_mode(rng):
    cfg = _cfg(law=LAW_Q3, t=4.0, dt=1e9, mode=TWO_TYPE)
    tree = simulate(cfg, rng)
    c = doomed_alive_along_line(tree, 4.0, rng, line_select="oldest")
    assert c >= 0


# ---------------------------------------------------------------------------
# extinction_decision
# ---------------------------------------------------------------------------

def test_extinction_decision_p0_zero_never(rng):
    tree = simulate(_cfg(t=1.0), rng)
    assert extinction_decision(tree, rng, until=100.0) is None


def test_extinction_decision_matches_q():
    # Alive at t + 20/(beta*alpha) approximates non-extinction; the
    # frequency must sit at 1 - q up to the e^-20-level bias.
    alive = 0
    n = 20000
    until = 1.0 + 40.0  # lookahead 20/(beta*alpha) with alpha = 1/2
    for i in range(n):
        tree = simulate(_cfg(law=LAW_Q3, t=1.0, dt=1e9), rngmod.stream_rng(73, i))
        if extinction_decision(tree, rngmod.stream_rng(74, i), until=until) is None:
            alive += 1
    p = alive / n
    se = math.sqrt(p * (1 - p) / n)
    assert abs(p - 2.0 / 3.0) <= 3 * se
