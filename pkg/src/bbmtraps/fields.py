"""Poissonian trap fields: exact measures, sampling, clearing and collision queries.

A field is a Poisson point configuration in a ball-shaped window; the trap
set K is the union of closed balls of radius ``a`` around the points.  Two
intensity families are supported: uniform (density v) and radially decaying
(density l / max(|x|, x0)^(d-1), the x0 core keeping the mean measure
boundedly finite near the origin).
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import integrate

from .errors import ConfigError, DomainError, WindowError
from . import rng as rngmod

POINT_FREE = "point_free"
TRAP_SET_FREE = "trap_set_free"

# Bridge tests beyond this many diffusion standard deviations are skipped:
# the crossing probability there is below exp(-2*36/2) ~ 1e-15.
SCREEN_SIGMAS = 6.0


def ball_volume(d: int, r: float = 1.0) -> float:
    """Lebesgue volume of a d-ball of radius r."""
    return math.pi ** (d / 2.0) / math.gamma(d / 2.0 + 1.0) * r**d


def sphere_surface(d: int) -> float:
    """Surface measure s_d of the unit sphere in R^d (s_1 = 2, s_2 = 2*pi)."""
    return d * ball_volume(d)


@dataclass(frozen=True)
class TrapFieldSpec:
    """Intensity specification plus trap radius.

    kind "uniform":  density v everywhere.
    kind "radial":   density l / max(|x|, x0)^(d-1); x0 defaults to a/100.
    """

    d: int
    kind: str
    a: float
    v: Optional[float] = None
    l: Optional[float] = None
    x0: Optional[float] = None

    def __post_init__(self):
        if not isinstance(self.d, (int, np.integer)) or self.d < 1:
            raise ConfigError(f"dimension must be a positive integer, got {self.d!r}")
        if self.a <= 0.0:
            raise ConfigError(f"trap radius a must be positive, got {self.a!r}")
        if self.kind == "uniform":
            if self.v is None or self.v < 0.0:
                raise ConfigError("uniform field needs v >= 0")
            if self.l is not None or self.x0 is not None:
                raise ConfigError("uniform field does not take l or x0")
        elif self.kind == "radial":
            if self.l is None or self.l < 0.0:
                raise ConfigError("radial field needs l >= 0")
            if self.x0 is None:
                object.__setattr__(self, "x0", 0.01 * self.a)
            if self.x0 <= 0.0:
                raise ConfigError("radial cutoff x0 must be positive")
        else:
            raise ConfigError(f"unknown field kind {self.kind!r}")

    @classmethod
    def uniform(cls, d: int, v: float, a: float) -> "TrapFieldSpec":
        return cls(d=d, kind="uniform", a=a, v=v)

    @classmethod
    def radial(cls, d: int, l: float, a: float, x0: Optional[float] = None) -> "TrapFieldSpec":
        return cls(d=d, kind="radial", a=a, l=l, x0=x0)

    @property
    def zero_intensity(self) -> bool:
        return (self.kind == "uniform" and self.v == 0.0) or (
            self.kind == "radial" and self.l == 0.0
        )

    def to_json_dict(self) -> dict:
        if self.kind == "uniform":
            return {"d": self.d, "kind": "uniform", "v": self.v, "a": self.a}
        return {"d": self.d, "kind": "radial", "l": self.l, "x0": self.x0, "a": self.a}

    @classmethod
    def from_json_dict(cls, obj: dict) -> "TrapFieldSpec":
        if not isinstance(obj, dict):
            raise ConfigError(f"trap field spec must be an object, got {obj!r}")
        allowed = {"d", "kind", "v", "l", "x0", "a"}
        unknown = set(obj) - allowed
        if unknown:
            raise ConfigError(f"unknown trap field keys: {sorted(unknown)}")
        kind = obj.get("kind")
        if kind == "uniform":
            if "l" in obj or "x0" in obj:
                raise ConfigError("uniform field does not take l or x0")
            return cls(d=int(obj["d"]), kind="uniform", a=float(obj["a"]), v=float(obj["v"]))
        if kind == "radial":
            if "v" in obj:
                raise ConfigError("radial field does not take v")
            x0 = obj.get("x0")
            return cls(
                d=int(obj["d"]),
                kind="radial",
                a=float(obj["a"]),
                l=float(obj["l"]),
                x0=None if x0 is None else float(x0),
            )
        raise ConfigError(f"trap field kind must be 'uniform' or 'radial', got {kind!r}")


def field_measure(spec: TrapFieldSpec, center: np.ndarray, radius: float, tol: float = 1e-10) -> float:
    """Mean measure nu(B(center, radius)) of the intensity.

    Uniform fields and origin-centered radial balls are closed form; an
    off-origin radial ball reduces by rotational symmetry to a 1d/2d
    quadrature of the (bounded, x0-regularized) kernel.
    """
    if radius < 0.0:
        raise DomainError("radius must be >= 0")
    if radius == 0.0:
        return 0.0
    d = spec.d
    if spec.kind == "uniform":
        return spec.v * ball_volume(d, radius)
    l, x0 = spec.l, spec.x0
    if l == 0.0:
        return 0.0
    if d == 1:
        # |x|^(d-1) = 1: the d=1 radial family is a uniform field of density l.
        return l * 2.0 * radius
    b = float(np.linalg.norm(np.asarray(center, dtype=float)))
    if b <= 1e-12 * max(radius, 1.0):
        if radius <= x0:
            return l * ball_volume(d, radius) / x0 ** (d - 1)
        # Constant-density core (mass l*omega_d*x0) plus the 1/rho^(d-1) shell.
        return l * sphere_surface(d) * (radius - x0) + l * ball_volume(d, x0) / x0 ** (d - 1)
    return l * _regularized_ball_integral(d, radius, b, x0, tol)


def _regularized_ball_integral(d: int, r: float, b: float, x0: float, tol: float) -> float:
    """integral over B(0,r) of max(|x + b e|, x0)^(1-d) dx, reduced to 1d.

    Writing x = (u, y) with u along e and rho = |y|, the inner rho-integral
    has closed forms for d in {2, 3}; higher d falls back to nested
    quadrature.  The integrand is bounded by x0^(1-d), so plain adaptive
    quadrature with split points at the kink locations u = -b +- x0 suffices.
    """
    s_dm1 = sphere_surface(d - 1) if d > 1 else 2.0

    def inner(u: float) -> float:
        q2 = (u + b) ** 2
        P2 = r * r - u * u
        if P2 <= 0.0:
            return 0.0
        P = math.sqrt(P2)
        # Portion of the rho-range where sqrt(q2 + rho^2) < x0 uses the
        # constant core density x0^(1-d).
        if q2 >= x0 * x0:
            rho_star = 0.0
        else:
            rho_star = min(math.sqrt(x0 * x0 - q2), P)
        out = 0.0
        if rho_star > 0.0:
            out += s_dm1 * rho_star ** (d - 1) / (d - 1) * x0 ** (1 - d)
        if rho_star < P:
            q = math.sqrt(q2)
            if d == 2:
                if q == 0.0:
                    out += 2.0 * math.log(P / rho_star)  # limit of the asinh difference
                else:
                    out += 2.0 * (math.asinh(P / q) - math.asinh(rho_star / q))
            elif d == 3:
                out += math.pi * math.log((q2 + P2) / (q2 + rho_star**2))
            else:
                val, _ = integrate.quad(
                    lambda rho: s_dm1 * rho ** (d - 2) * max(math.hypot(q, rho), x0) ** (1 - d),
                    rho_star,
                    P,
                    epsabs=tol * 1e-2,
                    epsrel=1e-10,
                    limit=200,
                )
                out += val
        return out

    pts = [x for x in (-b - x0, -b, -b + x0) if -r < x < r]
    val, _ = integrate.quad(inner, -r, r, points=pts or None, epsabs=tol, epsrel=1e-10, limit=200)
    return val


_RING_WIDTH = 3.0


class TrapField:
    """A realized Poisson configuration; K = union of closed a-balls at centers.

    Two flavors share one interface: explicit fields carry their centers up
    front (``validate`` is skipped by samplers whose centers are in-window
    by construction); lazy fields realize the window ring by ring on first
    reach, each ring from its own substream, so a replicate that dies early
    never pays for the far field.  Per-ring substreams make the realization
    independent of query order, which preserves every coupling identity of
    the eager sampler.
    """

    __slots__ = ("spec", "centers", "window_radius", "_ring_entropy", "_realized", "_next_ring")

    def __init__(self, spec: TrapFieldSpec, centers, window_radius: float, validate: bool = True):
        self.spec = spec
        self.window_radius = float(window_radius)
        if validate:
            centers = np.atleast_2d(np.asarray(centers, dtype=float))
            if centers.size == 0:
                centers = np.zeros((0, spec.d))
            if centers.shape[1] != spec.d:
                raise ConfigError(
                    f"centers have dimension {centers.shape[1]}, spec says {spec.d}"
                )
            if len(centers) and float(np.linalg.norm(centers, axis=1).max()) > self.window_radius + 1e-9:
                raise ConfigError("a center lies outside the declared window")
        self.centers = centers
        self._ring_entropy = None
        self._realized = self.window_radius
        self._next_ring = 0

    @classmethod
    def lazy(cls, spec: TrapFieldSpec, window_radius: float, entropy: int) -> "TrapField":
        f = cls(spec, np.zeros((0, spec.d)), window_radius, validate=False)
        f._ring_entropy = int(entropy)
        f._realized = 0.0
        return f

    def __repr__(self):
        return f"TrapField(spec={self.spec!r}, n={self.n}, window_radius={self.window_radius})"

    @property
    def n(self) -> int:
        return self.centers.shape[0]

    def ensure(self, reach: float) -> None:
        """Realize the configuration out to |x| <= min(reach, window)."""
        if self._ring_entropy is None or self._realized >= min(reach, self.window_radius):
            return
        if self.spec.zero_intensity:
            self._realized = self.window_radius
            return
        new = [self.centers]
        while self._realized < min(reach, self.window_radius):
            r_lo = self._next_ring * _RING_WIDTH
            r_hi = min(r_lo + _RING_WIDTH, self.window_radius)
            rng = rngmod.stream_rng(self._ring_entropy, self._next_ring)
            new.append(_sample_shell(self.spec, r_lo, r_hi, rng))
            self._next_ring += 1
            self._realized = r_hi
        self.centers = np.concatenate(new, axis=0)

    def materialize(self) -> None:
        self.ensure(self.window_radius)

    def check_window(self, reach: float) -> None:
        """Raise WindowError unless everything within |x| <= reach is exhaustively known.

        A zero-intensity spec is trap-free everywhere, so any reach is fine.
        """
        if self.spec.zero_intensity:
            return
        if reach > self.window_radius + 1e-12:
            raise WindowError(
                f"query reach {reach:.6g} exceeds sampled window {self.window_radius:.6g}"
            )
        self.ensure(reach)

    def to_csv(self, path) -> None:
        self.materialize()
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"x{i}" for i in range(self.spec.d)])
            for row in self.centers:
                w.writerow([repr(v) for v in row])


def _uniform_directions(rng: np.random.Generator, n: int, d: int) -> np.ndarray:
    if d == 1:
        return np.where(rng.random(n) < 0.5, -1.0, 1.0)[:, None]
    if d == 2:
        theta = rng.random(n) * (2.0 * math.pi)
        return np.column_stack((np.cos(theta), np.sin(theta)))
    g = rng.normal(size=(n, d))
    norms = np.linalg.norm(g, axis=1)
    norms[norms == 0.0] = 1.0
    return g / norms[:, None]


def _invert_radial_mass(spec: TrapFieldSpec, targets: np.ndarray) -> np.ndarray:
    """Radius r with nu(B(0, r)) = target, the exact inverse radial CDF."""
    d = spec.d
    if spec.kind == "uniform":
        return (targets / (spec.v * ball_volume(d))) ** (1.0 / d)
    l, x0 = spec.l, spec.x0
    if d == 1:
        return targets / (2.0 * l)
    core = l * ball_volume(d, x0) / x0 ** (d - 1)  # = l * omega_d * x0
    radii = np.empty(len(targets))
    in_core = targets <= core
    radii[in_core] = (targets[in_core] * x0 ** (d - 1) / (l * ball_volume(d))) ** (1.0 / d)
    radii[~in_core] = x0 + (targets[~in_core] - core) / (l * sphere_surface(d))
    return radii


def _sample_shell(
    spec: TrapFieldSpec, r_lo: float, r_hi: float, rng: np.random.Generator
) -> np.ndarray:
    """Poisson points of the intensity restricted to the shell r_lo <= |x| < r_hi."""
    d = spec.d
    origin = np.zeros(d)
    m_lo = field_measure(spec, origin, r_lo) if r_lo > 0.0 else 0.0
    mass = field_measure(spec, origin, r_hi) - m_lo
    n = int(rng.poisson(mass)) if mass > 0.0 else 0
    if n == 0:
        return np.zeros((0, d))
    radii = _invert_radial_mass(spec, m_lo + rng.random(n) * mass)
    return _uniform_directions(rng, n, d) * radii[:, None]


def sample_field(spec: TrapFieldSpec, window_radius: float, rng: np.random.Generator) -> TrapField:
    """Poisson configuration with the spec's intensity restricted to B(0, window_radius).

    Exact inversion, no thinning: the count is Poisson(nu(window)); radii come
    from the explicit radial CDF (polynomial core below x0, linear shell
    above for the radial family; r ~ R U^(1/d) for uniform), directions are
    uniform on the sphere.
    """
    if window_radius <= 0.0:
        raise DomainError("window_radius must be positive")
    centers = _sample_shell(spec, 0.0, window_radius, rng)
    return TrapField(spec, centers, window_radius, validate=False)


def clearing_probability(
    spec: TrapFieldSpec, center: np.ndarray, radius: float, mode: str = POINT_FREE
) -> float:
    """Probability that B(center, radius) receives no Poisson point (POINT_FREE)
    or is disjoint from the trap set K (TRAP_SET_FREE, i.e. no point within
    radius + a)."""
    if mode == POINT_FREE:
        return math.exp(-field_measure(spec, center, radius))
    if mode == TRAP_SET_FREE:
        return math.exp(-field_measure(spec, center, radius + spec.a))
    raise DomainError(f"unknown clearing mode {mode!r}")


def is_trap_free(field: TrapField, center: np.ndarray, radius: float, mode: str = POINT_FREE) -> bool:
    """Whether the realized configuration leaves B(center, radius) clear.

    Raises WindowError when the query is not fully covered by the sampled
    window (for TRAP_SET_FREE the window must additionally cover the a-halo).
    """
    if radius < 0.0:
        raise DomainError("radius must be >= 0")
    center = np.asarray(center, dtype=float)
    c_norm = float(np.linalg.norm(center))
    if mode == POINT_FREE:
        field.check_window(c_norm + radius)
        threshold = radius
    elif mode == TRAP_SET_FREE:
        field.check_window(c_norm + radius + field.spec.a)
        threshold = radius + field.spec.a
    else:
        raise DomainError(f"unknown clearing mode {mode!r}")
    if field.n == 0:
        return True
    dmin = float(np.linalg.norm(field.centers - center, axis=1).min())
    return dmin > threshold


def _segment_point_distances(p0: np.ndarray, p1: np.ndarray, c: np.ndarray) -> float:
    v = p1 - p0
    vv = float(np.dot(v, v))
    if vv == 0.0:
        return float(np.linalg.norm(c - p0))
    t = float(np.dot(c - p0, v)) / vv
    t = min(1.0, max(0.0, t))
    return float(np.linalg.norm(c - (p0 + t * v)))


def bridge_crossing_probability(d1: float, d2: float, dt: float) -> float:
    """Half-space bound exp(-2 d1 d2 / dt) for a Brownian bridge with endpoint
    clearances d1, d2 >= 0 over a step of duration dt."""
    if dt <= 0.0:
        raise DomainError("dt must be positive")
    return math.exp(-2.0 * d1 * d2 / dt)


def segment_hits_trap(
    field: TrapField,
    x_from: np.ndarray,
    x_to: np.ndarray,
    dt: float,
    rng: np.random.Generator,
) -> bool:
    """Collision primitive for one discrete Brownian step.

    Deterministic hits: an endpoint inside a trap ball, or the straight chord
    meeting a ball (in d = 1 this is forced by continuity; in general it is
    the dt -> 0 limit).  Otherwise each screened center is tested with the
    Brownian-bridge half-space crossing probability exp(-2 d1 d2 / dt) on the
    endpoint clearances; randomness comes from ``rng``.
    """
    if dt <= 0.0:
        raise DomainError("dt must be positive")
    x_from = np.asarray(x_from, dtype=float)
    x_to = np.asarray(x_to, dtype=float)
    a = field.spec.a
    reach = max(float(np.linalg.norm(x_from)), float(np.linalg.norm(x_to)))
    field.check_window(reach + a)
    seg = float(np.linalg.norm(x_to - x_from))
    field.ensure(reach + seg + a + SCREEN_SIGMAS * math.sqrt(dt))
    if field.n == 0:
        return False
    d_from = np.linalg.norm(field.centers - x_from, axis=1)
    d_to = np.linalg.norm(field.centers - x_to, axis=1)
    if bool((d_from <= a).any() or (d_to <= a).any()):
        return True
    seg_len = float(np.linalg.norm(x_to - x_from))
    mid = 0.5 * (x_from + x_to)
    screen = seg_len + a + SCREEN_SIGMAS * math.sqrt(dt)
    d_mid = np.linalg.norm(field.centers - mid, axis=1)
    for j in np.nonzero(d_mid <= screen)[0]:
        c = field.centers[j]
        if _segment_point_distances(x_from, x_to, c) <= a:
            return True
        p = bridge_crossing_probability(d_from[j] - a, d_to[j] - a, dt)
        if rng.random() < p:
            return True
    return False


_SCAN_BLOCK = 64


def path_hit_time(
    times: np.ndarray,
    positions: np.ndarray,
    field: TrapField,
    bridge_entropy: int,
    particle_id: int,
) -> Optional[float]:
    """Earliest trap-hit time of a sampled trajectory, or None.

    Semantics match scanning every segment with ``segment_hits_trap``: an
    endpoint inside a ball or a chord through a ball hits deterministically
    at the segment midpoint time (the initial point reports times[0]); every
    screened segment additionally crosses with the bridge probability.
    Bridge uniforms come from ``keyed_uniforms(bridge_entropy, center,
    particle_id, segment)``, so the outcome against one center does not
    depend on which other centers exist in the field; coupled superset-field
    comparisons are therefore pathwise monotone.

    The scan runs in time blocks with early exit: hits in a later block
    cannot precede one already found, and segment keys are global, so the
    result is identical to a whole-path scan.  Block size adapts to the
    path: short lifetimes get one block, very long ones (single-particle
    oracles) a handful, so the per-block overhead never dominates.

    Raises WindowError if the path leaves the exhaustively-sampled region.
    """
    n_pts = positions.shape[0]
    block = max(_SCAN_BLOCK, -(-n_pts // 8))
    if n_pts <= block:
        return _scan_block(times, positions, field, bridge_entropy, particle_id, 0)
    for start in range(0, n_pts - 1, block):
        stop = min(start + block + 1, n_pts)
        hit = _scan_block(
            times[start:stop], positions[start:stop], field, bridge_entropy,
            particle_id, start,
        )
        if hit is not None:
            return hit
    return None


def _scan_block(
    times: np.ndarray,
    positions: np.ndarray,
    field: TrapField,
    bridge_entropy: int,
    particle_id: int,
    seg_offset: int,
) -> Optional[float]:
    a = field.spec.a
    n_pts = positions.shape[0]
    if n_pts == 0:
        return None
    reach = float(np.sqrt((positions * positions).sum(axis=1).max()))
    field.check_window(reach + a)

    seg_dt = np.diff(times)
    max_dt = float(seg_dt.max()) if seg_dt.size else 0.0
    steps = np.diff(positions, axis=0)
    step_len = np.sqrt(np.einsum("ij,ij->i", steps, steps))
    max_step = float(step_len.max()) if step_len.size else 0.0
    # Covers the per-segment screen radius (step + a + 6 sqrt(dt)) measured
    # from sampled points rather than midpoints, hence the extra step slack.
    margin = a + 2.0 * max_step + SCREEN_SIGMAS * math.sqrt(max_dt)
    field.ensure(reach + margin)
    if field.n == 0:
        return None

    # Bounding-box prefilter over centers.
    lo = positions.min(axis=0) - margin
    hi = positions.max(axis=0) + margin
    mask = np.all((field.centers >= lo) & (field.centers <= hi), axis=1)
    cand = np.nonzero(mask)[0]
    if cand.size == 0:
        return None
    C = field.centers[cand]

    # Pairwise point-center distances (n_pts, m).
    diff = positions[:, None, :] - C[None, :, :]
    D = np.sqrt(np.einsum("pmd,pmd->pm", diff, diff))
    near = D.min(axis=0) <= margin
    if not near.any():
        return None
    cand = cand[near]
    C = C[near]
    D = D[:, near]

    best = math.inf
    mid_times = 0.5 * (times[:-1] + times[1:]) if n_pts > 1 else times[:0]

    # Endpoint inside a ball: earliest point row with any center inside.
    # Row 0 can only be inside on the particle's first block (later blocks
    # start at the previous block's last point, which was already scanned).
    inside_rows = (D <= a).any(axis=1)
    if inside_rows.any():
        i = int(np.argmax(inside_rows))
        best = times[0] if i == 0 else float(mid_times[i - 1])
        if i == 0:
            return float(best)

    if n_pts > 1:
        # Per-pair lower bound on the segment's distance to each center:
        # a segment cannot approach closer than min(endpoint dists) - step.
        Dmin2 = np.minimum(D[:-1], D[1:])
        screen = step_len + a + SCREEN_SIGMAS * np.sqrt(seg_dt)
        si, ci = np.nonzero(Dmin2 <= (screen + 0.5 * step_len)[:, None])
        if si.size:
            A = positions[si]
            V = steps[si]
            Cc = C[ci]
            vv = np.maximum(np.einsum("ij,ij->i", V, V), 1e-300)
            W = Cc - A
            tproj = np.clip(np.einsum("ij,ij->i", W, V) / vv, 0.0, 1.0)
            cl = W - tproj[:, None] * V
            dseg = np.sqrt(np.einsum("ij,ij->i", cl, cl))

            # Chord through a ball hits deterministically.
            chord = dseg <= a
            if chord.any():
                best = min(best, float(mid_times[si[chord].min()]))

            # Bridge crossings on exactly screened pairs.  Hits at or after
            # an earlier deterministic hit cannot lower the minimum, so no
            # cross-masking is needed; each pair owns its fixed uniform.
            mid_d = np.sqrt(
                np.einsum("ij,ij->i", W - 0.5 * V, W - 0.5 * V)
            )
            sel = mid_d <= screen[si]
            if sel.any():
                s2, c2 = si[sel], ci[sel]
                expo = -2.0 * (D[s2, c2] - a) * (D[s2 + 1, c2] - a) / seg_dt[s2]
                probs = np.exp(np.minimum(expo, 0.0))
                u = rngmod.keyed_uniforms(
                    bridge_entropy, cand[c2], particle_id, s2 + seg_offset
                )
                won = u < probs
                if won.any():
                    best = min(best, float(mid_times[s2[won].min()]))

    return float(best) if math.isfinite(best) else None
