"""Offspring-law analytics and the pure population-size process.

Everything here is independent of space and traps: generating function f,
mean offspring mu, net growth m = mu - 1, extinction probability q, the
skeleton/doomed decomposition of a supercritical law, and samplers for the
continuous-time Galton-Watson count process.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ConvergenceError, DomainError, LawError, SubcriticalError

_PROB_TOL = 1e-12


@dataclass(frozen=True)
class OffspringLaw:
    """Finite-support offspring distribution (p_k) with p_1 = 0.

    Args:
        probs: map from offspring count k (non-negative int) to probability.

    Zero-probability entries are dropped.  Laws with p_1 > 0 are rejected:
    a nonzero p_1 can always be absorbed into the branching rate, and the
    analytics here (alpha, skeleton rates) assume it has been.
    """

    probs: dict[int, float]
    _ks: np.ndarray = field(init=False, repr=False, compare=False)
    _ps: np.ndarray = field(init=False, repr=False, compare=False)
    _cdf: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        cleaned: dict[int, float] = {}
        for k, p in self.probs.items():
            if not isinstance(k, (int, np.integer)) or isinstance(k, bool) or k < 0:
                raise LawError(f"offspring count must be a non-negative integer, got {k!r}")
            p = float(p)
            if p < 0.0:
                raise LawError(f"p_{k} = {p} is negative")
            if p > 0.0:
                cleaned[int(k)] = cleaned.get(int(k), 0.0) + p
        if not cleaned:
            raise LawError("offspring law has no mass")
        total = math.fsum(cleaned.values())
        if abs(total - 1.0) > _PROB_TOL:
            raise LawError(f"probabilities sum to {total!r}, not 1 within {_PROB_TOL}")
        if cleaned.get(1, 0.0) != 0.0:
            raise LawError("p_1 must be 0 (absorb single-offspring events into the rate)")
        object.__setattr__(self, "probs", cleaned)
        ks = np.array(sorted(cleaned), dtype=np.int64)
        ps = np.array([cleaned[int(k)] for k in ks], dtype=np.float64)
        object.__setattr__(self, "_ks", ks)
        object.__setattr__(self, "_ps", ps)
        object.__setattr__(self, "_cdf", np.cumsum(ps))

    @property
    def mean(self) -> float:
        """mu = sum k p_k."""
        return float(np.dot(self._ks, self._ps))

    @property
    def m(self) -> float:
        """Net growth per branch event, m = mu - 1."""
        return self.mean - 1.0

    @property
    def p0(self) -> float:
        return self.probs.get(0, 0.0)

    @property
    def max_k(self) -> int:
        return int(self._ks[-1])

    def pgf(self, s: float) -> float:
        """f(s) = sum p_k s^k."""
        return float(np.dot(self._ps, np.power(float(s), self._ks)))

    def pgf_prime(self, s: float) -> float:
        """f'(s) = sum k p_k s^(k-1)."""
        ks, ps = self._ks, self._ps
        nz = ks >= 1
        return float(np.dot(ks[nz] * ps[nz], np.power(float(s), ks[nz] - 1)))

    def sample(self, rng: np.random.Generator) -> int:
        """One offspring count."""
        return int(self._ks[np.searchsorted(self._cdf, rng.random(), side="right")])

    def sample_many(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return self._ks[np.searchsorted(self._cdf, rng.random(n), side="right")]

    def to_json_dict(self) -> dict[str, float]:
        """JSON form: integer-string keys, e.g. {"0": 0.25, "2": 0.75}."""
        return {str(k): v for k, v in sorted(self.probs.items())}

    @classmethod
    def from_json_dict(cls, d: dict) -> "OffspringLaw":
        try:
            probs = {int(k): float(v) for k, v in d.items()}
        except (TypeError, ValueError) as exc:
            raise LawError(f"malformed offspring-law mapping: {d!r}") from exc
        return cls(probs)


def dyadic() -> OffspringLaw:
    """Strictly binary splitting, p_2 = 1 (Yule genealogy)."""
    return OffspringLaw({2: 1.0})


@dataclass(frozen=True)
class BranchingParams:
    """Offspring law plus branching rate beta (1/time).

    beta = 0 is allowed and means a single Brownian particle that never
    branches; it is used for hitting-probability oracles.
    """

    law: OffspringLaw
    beta: float

    def __post_init__(self):
        if self.beta < 0.0:
            raise LawError(f"beta must be >= 0, got {self.beta}")


@dataclass(frozen=True)
class SkeletonParams:
    """Derived quantities of the skeleton/doomed decomposition.

    q               extinction probability of the law
    alpha           1 - f'(q); the skeleton's genealogy thins to rate beta*alpha
    effective_rate  beta * alpha
    rho             expected doomed offspring per skeleton branch event,
                    [f'(1) - f'(q)] q / (1 - q)
    skeleton_law    offspring law of the size-changing skeleton events,
                    i.e. the conditioned-tree law restricted to >= 2 skeleton
                    children; pairs with effective_rate (the single-child
                    events, probability f'(q) each, are absorbed into the
                    rate so the law keeps p_1 = 0)
    doomed_law      offspring law inside a doomed bush, pgf f(q s)/q; None
                    when p_0 = 0 (no doomed particles exist)
    """

    q: float
    alpha: float
    effective_rate: float
    rho: float
    skeleton_law: OffspringLaw
    doomed_law: Optional[OffspringLaw]


def extinction_probability(law: OffspringLaw, tol: float = 1e-12) -> float:
    """Smallest fixed point of the generating function f on [0, 1].

    Returns 1 when mu <= 1 and 0 when p_0 = 0.  Otherwise f is convex with
    f(0) = p_0 > 0 and slope > 1 at s = 1, so f(s) - s has a sign change
    bracketing the smallest root and bisection converges unconditionally.
    """
    if tol <= 0.0:
        raise DomainError("tol must be positive")
    if law.p0 == 0.0:
        return 0.0
    if law.mean <= 1.0:
        return 1.0

    def g(s: float) -> float:
        return law.pgf(s) - s

    # Bracket: g > 0 near 0; walk toward 1 until g < 0 (slope at 1 is m > 0).
    gap = 1e-3
    while g(1.0 - gap) >= 0.0:
        gap /= 16.0
        if gap < 1e-15:
            return 1.0  # numerically indistinguishable from critical
    lo, hi = 0.0, 1.0 - gap
    while hi - lo > min(tol * 1e-2, 1e-14) and hi - lo > 4e-17:
        mid = 0.5 * (lo + hi)
        if g(mid) > 0.0:
            lo = mid
        else:
            hi = mid
    q = 0.5 * (lo + hi)
    if abs(g(q)) > tol:
        raise ConvergenceError(f"fixed-point residual {g(q)!r} at q={q!r} exceeds tol={tol!r}")
    return q


def skeleton_decomposition(params: BranchingParams, tol: float = 1e-12) -> SkeletonParams:
    """Skeleton/doomed decomposition of a supercritical branching law.

    Raises SubcriticalError when mu <= 1.  The conditioned-tree construction:
    given a skeleton parent, the total litter size k has weight
    p_k (1 - q^k)/(1 - q) and the skeleton children count j is
    Binomial(k, 1-q) conditioned on j >= 1.  Marginally j has pgf
    f*(s) = [f(q + (1-q)s) - q]/(1-q), whose single-child weight is exactly
    f'(q); those events do not change the skeleton and are folded into the
    branching rate, leaving ``skeleton_law`` at rate beta*alpha.
    """
    law = params.law
    if law.mean <= 1.0:
        raise SubcriticalError(f"mean offspring {law.mean} <= 1; no skeleton exists")
    q = extinction_probability(law, tol)
    fq = law.pgf_prime(q)
    alpha = 1.0 - fq
    effective_rate = params.beta * alpha
    if q > 0.0:
        rho = (law.pgf_prime(1.0) - fq) * q / (1.0 - q)
    else:
        rho = 0.0

    # Coefficients of f*(s) = [f(q + (1-q)s) - q] / (1-q) for j >= 1.
    star: dict[int, float] = {}
    for k, pk in law.probs.items():
        for j in range(1, k + 1):
            w = pk * math.comb(k, j) * q ** (k - j) * (1.0 - q) ** j / (1.0 - q)
            star[j] = star.get(j, 0.0) + w
    p1_star = star.pop(1, 0.0)
    mass = math.fsum(star.values())  # equals alpha up to roundoff
    skeleton_law = OffspringLaw({j: w / mass for j, w in star.items()})
    if abs(mass - alpha) > 1e-9:
        raise AssertionError(f"skeleton mass {mass} inconsistent with alpha {alpha}")
    del p1_star  # = f'(q); retained in the rate through alpha

    doomed_law = None
    if q > 0.0:
        doomed_law = OffspringLaw({k: pk * q ** (k - 1) for k, pk in law.probs.items()})
    return SkeletonParams(
        q=q,
        alpha=alpha,
        effective_rate=effective_rate,
        rho=rho,
        skeleton_law=skeleton_law,
        doomed_law=doomed_law,
    )


def sample_skeleton_branch(law: OffspringLaw, q: float, rng: np.random.Generator) -> tuple[int, int]:
    """Joint litter at a skeleton branch event: (skeleton children, doomed children).

    Rejection from the unconditioned law: draw k ~ (p_k), mark each child
    skeleton independently with probability 1-q, retry until at least one
    skeleton child.  Acceptance probability is 1 - f(q) = 1 - q.
    """
    while True:
        k = law.sample(rng)
        j = int(rng.binomial(k, 1.0 - q)) if k > 0 else 0
        if j >= 1:
            return j, k - j


def yule_tail(beta: float, t: float, k: int) -> float:
    """P(N(t) > k) = (1 - e^(-beta t))^k for the strictly dyadic count process."""
    if beta <= 0.0:
        raise DomainError("beta must be positive")
    if t < 0.0:
        raise DomainError("t must be >= 0")
    if k < 0 or int(k) != k:
        raise DomainError("k must be a non-negative integer")
    return (1.0 - math.exp(-beta * t)) ** int(k)


def subcritical_survival_bound(beta: float, m: float, t: float) -> float:
    """Upper bound e^(beta m t) on P(|Z(t)| > 0) for a subcritical process (m < 0)."""
    if m >= 0.0:
        raise DomainError(f"requires m < 0 (subcritical), got m = {m}")
    if beta <= 0.0:
        raise DomainError("beta must be positive")
    if t < 0.0:
        raise DomainError("t must be >= 0")
    return math.exp(beta * m * t)


def poisson_tail_bound(lam: float, x: float) -> float:
    """Chernoff-type bound e^(-lam k(z)), z = lam/x, k(z) = 1 - (1 + log z)/z.

    Valid and strictly positive for x > lam; bounds P(Y >= x) for Y ~ Poisson(lam).
    """
    if lam <= 0.0:
        raise DomainError("lam must be positive")
    if x <= lam:
        raise DomainError(f"requires x > lam, got x = {x}, lam = {lam}")
    z = lam / x
    k = 1.0 - (1.0 + math.log(z)) / z
    if k <= 0.0:
        raise AssertionError(f"k(z) = {k} not positive for z = {z}")
    return math.exp(-lam * k)


def population_path(
    params: BranchingParams,
    t: float,
    rng: np.random.Generator,
    stop_above: Optional[int] = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Event times and counts of the total-population process on [0, t].

    Returns (times, counts) with times[0] = 0, counts[0] = 1; each later
    entry is a branch event (count jumps by k - 1).  The path is absorbed at
    0 and, when ``stop_above`` is given, stops early once the count reaches
    it (useful as a cheap certificate that extinction is no longer credible).
    """
    if t < 0.0:
        raise DomainError("t must be >= 0")
    times = [0.0]
    counts = [1]
    n = 1
    s = 0.0
    beta = params.beta
    if beta == 0.0:
        return np.array(times), np.array(counts)
    while n > 0 and not (stop_above is not None and n >= stop_above):
        s += rng.exponential(1.0 / (beta * n))
        if s > t:
            break
        n += int(params.law.sample(rng)) - 1
        times.append(s)
        counts.append(n)
    return np.array(times), np.array(counts, dtype=np.int64)


def sample_population(params: BranchingParams, t: float, rng: np.random.Generator) -> int:
    """One draw of |Z(t)| for the continuous-time Galton-Watson process.

    Exponential(beta * n) waits between branch events, offspring from the
    law, 0 absorbing.  beta = 0 returns 1 (the particle never branches).
    """
    _, counts = population_path(params, t, rng)
    return int(counts[-1])


def survives_count_process(
    params: BranchingParams,
    horizon: float,
    rng: np.random.Generator,
    start: int = 1,
    certify_at: Optional[int] = None,
) -> tuple[bool, Optional[float]]:
    """Whether the count process started from ``start`` is alive at ``horizon``.

    Returns (alive, extinction_time).  ``certify_at`` short-circuits with
    alive=True once the count reaches that level: from count n the residual
    extinction probability is q^n, so a level with q^n below the lookahead
    bias budget adds nothing to the error while avoiding the exponential
    cost of simulating a supercritical population to a distant horizon.
    """
    n = int(start)
    if n <= 0:
        return False, 0.0
    beta = params.beta
    if beta == 0.0 or params.law.p0 == 0.0:
        return True, None
    s = 0.0
    while True:
        if certify_at is not None and n >= certify_at:
            return True, None
        s += rng.exponential(1.0 / (beta * n))
        if s > horizon:
            return True, None
        n += int(params.law.sample(rng)) - 1
        if n <= 0:
            return False, s
