"""Discrete C^k norms, weighted parabolic Hoelder seminorms, Campanato
integrals, the interpolation inequality, the iteration lemma and envelope
fits of Hoelder exponents.

Points are X = (t, z) with the parabolic distance
|X - Y| = max(sqrt|t - s|, |z - y|) (L2 torus distance) and d(X) = sqrt(t).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import _kernels
from .errors import HypothesisError, InvariantError, PreconditionError
from .interpolation import PointEvaluator, stratified_points
from .lattice import TorusLattice, grad_forward, torus_distance
from .solvers import ParabolicCylinder, Trajectory

MAX_PAIRS = 200_000


# --------------------------------------------------------------- C^k norms


def derivative_fields(lat: TorusLattice, u, order: int):
    """All grad_{e1}...grad_{ei} u over ordered direction tuples of length ``order``."""
    level = [lat.field(u)]
    for _ in range(order):
        level = [grad_forward(lat, f, e) for f in level for e in lat.directions]
    return level


def ck_norm(lat: TorusLattice, u, k: int) -> float:
    """sum_{i<=k} sum_{e1..ei} max_x |grad_{e1}..grad_{ei} u(x)|, 2n choices per slot."""
    if not 0 <= k <= 4:
        raise ValueError(f"k must be in 0..4, got {k}")
    total = 0.0
    level = [lat.field(u)]
    for i in range(k + 1):
        total += sum(float(np.max(np.abs(f))) for f in level)
        if i < k:
            level = [grad_forward(lat, f, e) for f in level for e in lat.directions]
    return total


def ck_norm_series(traj: Trajectory, k: int) -> np.ndarray:
    return np.array([ck_norm(traj.lattice, v, k) for v in traj.values])


def max_derivative(lat: TorusLattice, u, order: int) -> float:
    """max over ordered direction tuples and sites of |grad..grad u| at exactly ``order``."""
    return max(float(np.max(np.abs(f))) for f in derivative_fields(lat, u, order))


# ------------------------------------------------------------ sample sets


@dataclass(frozen=True)
class SeminormSpec:
    """Which seminorm to evaluate.

    a      order, a = k + alpha for brackets (alpha in (0, 1])
    b      weight; None means unweighted, i.e. b = -a
    flavor 'bracket' [F]_a^(b), 'angle' <F>_a^(b), 'sup' |F|_0^(b)
    k      0 for F itself, 1 for the lattice gradient (max over e > 0)
    """

    a: float
    b: float | None = 0.0
    flavor: str = "bracket"
    k: int = 0

    def __post_init__(self):
        if self.flavor not in ("bracket", "angle", "sup"):
            raise ValueError(f"unknown flavor {self.flavor!r}")
        if self.k not in (0, 1):
            raise ValueError("gradient order k must be 0 or 1")
        if self.flavor == "bracket":
            alpha = self.a - self.k
            if not (0 < alpha <= 1 + 1e-12):
                raise InvariantError(f"bracket needs a = k + alpha with alpha in (0,1]; got a={self.a}, k={self.k}")
        elif self.flavor == "angle" and not (0 < self.a <= 2):
            raise InvariantError(f"angle bracket order must lie in (0, 2], got {self.a}")

    @property
    def weight_exponent(self) -> float:
        return 0.0 if self.b is None else self.a + self.b

    @property
    def label(self) -> str:
        b = "unweighted" if self.b is None else f"{self.b:g}"
        return f"{self.flavor}[a={self.a:g},b={b},k={self.k}]"


def _tri_pairs(k, n):
    """Map linear indices k of the strict upper triangle of an n x n matrix to (i, j)."""
    k = np.asarray(k, dtype=np.int64)
    b = 2 * n - 1
    i = np.floor((b - np.sqrt(b * b - 8.0 * k)) / 2.0).astype(np.int64)
    start = i * (2 * n - i - 1) // 2
    # guard floating error in the square root
    over = k < start
    i[over] -= 1
    start = i * (2 * n - i - 1) // 2
    nxt = (i + 1) * (2 * n - i - 2) // 2
    under = k >= nxt
    i[under] += 1
    start = i * (2 * n - i - 1) // 2
    j = k - start + i + 1
    return i, j


class SpaceTimeSampleSet:
    """Sample points (t_i, z_p) over chosen trajectory nodes and spatial points.

    ``interpolated`` evaluates fields through the polylinear extension; otherwise
    points must be lattice points. ``policy`` picks pairs: 'all', 'same_time',
    'same_site', or a tuple of these (union). Pair sets above ``max_pairs`` are
    thinned by a seeded uniform draw within each policy.
    """

    def __init__(self, traj: Trajectory, points=None, time_indices=None, interpolated=False,
                 policy="all", max_pairs: int = MAX_PAIRS, seed: int = 0):
        lat = traj.lattice
        self.traj = traj
        self.lattice = lat
        self.time_indices = (np.arange(len(traj)) if time_indices is None
                             else np.asarray(time_indices, dtype=np.int64))
        self.points = lat.points() if points is None else np.atleast_2d(np.asarray(points, dtype=float))
        self.interpolated = bool(interpolated)
        self.policy = (policy,) if isinstance(policy, str) else tuple(policy)
        for p in self.policy:
            if p not in ("all", "same_time", "same_site"):
                raise ValueError(f"unknown pair policy {p!r}")
        self.max_pairs = int(max_pairs)
        self.seed = int(seed)
        if not self.interpolated:
            s = self.points * lat.N
            if np.max(np.abs(s - np.round(s))) > 1e-9:
                raise PreconditionError("discrete sample sets need lattice points")
            self._sites = np.array([lat.site_index(x) for x in np.round(s).astype(int)], dtype=np.int64)
        else:
            self._eval = PointEvaluator(lat, self.points)
        nt, npnt = self.time_indices.size, self.points.shape[0]
        self.t = np.repeat(traj.times[self.time_indices], npnt)
        self.z = np.tile(self.points, (nt, 1))
        self._pairs = None

    @classmethod
    def lattice_points(cls, traj: Trajectory, **kw) -> "SpaceTimeSampleSet":
        return cls(traj, traj.lattice.points(), interpolated=False, **kw)

    @classmethod
    def stratified(cls, traj: Trajectory, m: int = 4, **kw) -> "SpaceTimeSampleSet":
        return cls(traj, stratified_points(traj.lattice, m), interpolated=True, **kw)

    def __len__(self):
        return self.t.size

    def field_values(self, fields) -> np.ndarray:
        """Evaluate per-node lattice fields (M, N^n) or (M, N^n, C) at the samples -> (len, C)."""
        F = np.asarray(fields, dtype=float)
        if F.ndim == 2:
            F = F[:, :, None]
        F = F[self.time_indices]                      # (nt, S, C)
        if self.interpolated:
            out = self._eval(np.moveaxis(F, 2, 1))    # (nt, C, P)
            out = np.moveaxis(out, 1, 2)              # (nt, P, C)
        else:
            out = F[:, self._sites, :]
        return out.reshape(-1, F.shape[2])

    def values(self, k: int = 0) -> np.ndarray:
        lat = self.lattice
        if k == 0:
            return self.field_values(self.traj.values)
        comps = np.stack([np.array([grad_forward(lat, v, e) for v in self.traj.values])
                          for e in lat.positive_directions], axis=2)
        return self.field_values(comps)

    def _policy_pairs(self, policy: str, rng):
        nt, npnt = self.time_indices.size, self.points.shape[0]
        if policy == "all":
            n_all = nt * npnt
            total = n_all * (n_all - 1) // 2
            ks = (np.arange(total) if total <= self.max_pairs
                  else np.sort(rng.choice(total, size=self.max_pairs, replace=False)))
            return _tri_pairs(ks, n_all)
        if policy == "same_time":
            per = npnt * (npnt - 1) // 2
            total = per * nt
            ks = (np.arange(total) if total <= self.max_pairs
                  else np.sort(rng.choice(total, size=self.max_pairs, replace=False)))
            blk, rem = np.divmod(ks, max(per, 1))
            i, j = _tri_pairs(rem, npnt)
            return blk * npnt + i, blk * npnt + j
        per = nt * (nt - 1) // 2
        total = per * npnt
        ks = (np.arange(total) if total <= self.max_pairs
              else np.sort(rng.choice(total, size=self.max_pairs, replace=False)))
        pnt, rem = np.divmod(ks, max(per, 1))
        i, j = _tri_pairs(rem, nt)
        return i * npnt + pnt, j * npnt + pnt

    def pairs(self, policy=None):
        pol = self.policy if policy is None else ((policy,) if isinstance(policy, str) else tuple(policy))
        if policy is None and self._pairs is not None:
            return self._pairs
        rng = np.random.default_rng(self.seed)
        ii, jj = [], []
        for p in pol:
            a, b = self._policy_pairs(p, rng)
            ii.append(a)
            jj.append(b)
        out = (np.concatenate(ii).astype(np.int64), np.concatenate(jj).astype(np.int64))
        if policy is None:
            self._pairs = out
        return out


def _quotient(samples: SpaceTimeSampleSet, F, ii, jj, weight_exp, alpha, time_only):
    if ii.size == 0:
        raise PreconditionError("empty pair set")
    val, _ = _kernels.pair_quotient_max(
        np.ascontiguousarray(F, dtype=np.float64), np.ascontiguousarray(samples.t),
        np.ascontiguousarray(samples.z), ii, jj, float(weight_exp), float(alpha), bool(time_only))
    return float(val)


def holder_seminorm(samples: SpaceTimeSampleSet, spec: SeminormSpec) -> float:
    """[F]_a^(b) = sup (d(X) ^ d(Y))^(a+b) |grad^k F(X) - grad^k F(Y)| / |X - Y|^alpha."""
    if spec.flavor == "angle":
        return time_seminorm(samples, spec)
    if spec.flavor == "sup":
        return weighted_sup(samples, 0.0 if spec.b is None else spec.b, spec.k)
    F = samples.values(spec.k)
    ii, jj = samples.pairs()
    return _quotient(samples, F, ii, jj, spec.weight_exponent, spec.a - spec.k, False)


def time_seminorm(samples: SpaceTimeSampleSet, spec: SeminormSpec) -> float:
    """<F>_a^(b): pairs sharing the spatial point, quotient by |t - s|^(a/2)."""
    if spec.flavor != "angle":
        spec = SeminormSpec(spec.a, spec.b, "angle", spec.k)
    F = samples.values(spec.k)
    ii, jj = samples.pairs("same_site")
    return _quotient(samples, F, ii, jj, spec.weight_exponent, spec.a / 2.0, True)


def weighted_sup(samples: SpaceTimeSampleSet, b: float, k: int = 0) -> float:
    """|F|_0^(b) = sup d(X)^b |F(X)| (k = 1: max over e > 0 of |grad_e F|)."""
    F = np.max(np.abs(samples.values(k)), axis=1)
    t = samples.t
    if b == 0:
        return float(F.max())
    keep = t > 0 if b < 0 else np.ones_like(t, dtype=bool)
    if not keep.any():
        raise PreconditionError("no sample with t > 0 for a negative weight")
    return float(np.max(np.sqrt(t[keep]) ** b * F[keep]))


def oscillation(traj: Trajectory, Q: ParabolicCylinder, use_interpolation: bool = False,
                m: int = 4, fields=None) -> float:
    """max - min over samples of Q (time nodes in [t1 - r^2, t1], open spatial ball)."""
    lat = traj.lattice
    ts = traj.times
    tix = np.flatnonzero((ts >= Q.t0 - 1e-13) & (ts <= Q.t1 + 1e-13))
    if tix.size == 0:
        raise PreconditionError("no trajectory node inside the cylinder")
    pts = stratified_points(lat, m) if use_interpolation else lat.points()
    pts = pts[torus_distance(pts, np.asarray(Q.y)[None, :]) < Q.r]
    if pts.shape[0] == 0:
        raise PreconditionError("no sample point inside the cylinder")
    F = traj.values if fields is None else np.asarray(fields)
    samples = SpaceTimeSampleSet(traj, pts, tix, interpolated=use_interpolation)
    vals = samples.field_values(F[:, :] if F.ndim == 2 else F)
    return float(vals.max() - vals.min())


# -------------------------------------------------------------- Campanato


@dataclass
class CampanatoProfile:
    center: tuple
    radii: np.ndarray
    omega: np.ndarray
    means: np.ndarray
    monotone: bool


def _clipped_time_weights(ts: np.ndarray, lo: float, hi: float) -> np.ndarray:
    """Length of [lo, hi] inside each node's dual cell; nested in [lo, hi]."""
    mids = 0.5 * (ts[1:] + ts[:-1])
    left = np.concatenate([[ts[0]], mids])
    right = np.concatenate([mids, [ts[-1]]])
    return np.clip(np.minimum(right, hi) - np.maximum(left, lo), 0.0, None)


def gradient_components(traj: Trajectory) -> np.ndarray:
    """(M, N^n, n) array of grad_e u, e > 0, at every node."""
    lat = traj.lattice
    return np.stack([np.array([grad_forward(lat, v, e) for v in traj.values])
                     for e in lat.positive_directions], axis=2)


def campanato_profile(traj: Trajectory, Y, r_list, fields=None, m: int = 4,
                      check_monotone: bool = True) -> CampanatoProfile:
    """omega(r) = int_{Q(r)} |F~ - {F~}_r|^2 dX for F = grad u (default) or given fields.

    Space: midpoint rule on the refined grid with m points per cell per axis.
    Time: dual-cell weights of the trajectory nodes clipped to [t1 - r^2, t1],
    which keeps the quadrature nested in r so omega is exactly nondecreasing.
    """
    lat = traj.lattice
    t1, y = float(Y[0]), np.atleast_1d(np.asarray(Y[1], dtype=float))
    radii = np.asarray(sorted(r_list), dtype=float)
    if radii.size == 0 or radii[0] <= 0:
        raise PreconditionError("radii must be positive")
    if radii[-1] >= 0.5 * math.sqrt(t1):
        raise PreconditionError(f"radius {radii[-1]} not below d(Y)/2 = {0.5 * math.sqrt(t1):.6g}")
    if t1 > traj.times[-1] + 1e-12 or t1 - radii[-1] ** 2 < traj.times[0] - 1e-12:
        raise PreconditionError("cylinders leave the trajectory's time span")
    F = gradient_components(traj) if fields is None else np.asarray(fields, dtype=float)
    if F.ndim == 2:
        F = F[:, :, None]
    pts = stratified_points(lat, m, offset=0.5)
    dist = torus_distance(pts, y[None, :])
    keep = dist < radii[-1]
    pts, dist = pts[keep], dist[keep]
    tw_max = _clipped_time_weights(traj.times, t1 - radii[-1] ** 2, t1)
    tix = np.flatnonzero(tw_max > 0)
    ev = PointEvaluator(lat, pts)
    vals = ev(np.moveaxis(F[tix], 2, 1))              # (nt, C, P)
    cell = (1.0 / (m * lat.N)) ** lat.n
    omega, means = [], []
    for r in radii:
        tw = _clipped_time_weights(traj.times, t1 - r * r, t1)[tix]
        sw = (dist < r).astype(float) * cell
        W = tw[:, None] * sw[None, :]                  # (nt, P)
        mass = W.sum()
        if mass <= 0:
            raise PreconditionError(f"empty cylinder at r={r}")
        mean = np.einsum("tp,tcp->c", W, vals) / mass
        dev = vals - mean[None, :, None]
        omega.append(float(np.einsum("tp,tcp->", W, dev * dev)))
        means.append(mean)
    omega = np.array(omega)
    mono = bool(np.all(np.diff(omega) >= -1e-12 * max(1.0, omega.max(initial=0.0))))
    if check_monotone and not mono:
        raise InvariantError(f"omega is not nondecreasing in r: {omega}")
    return CampanatoProfile(tuple(np.concatenate([[t1], y])), radii, omega, np.array(means), mono)


def campanato_decay_constants(traj: Trajectory, centers, pairs, fields=None, m: int = 4) -> np.ndarray:
    """(I(rho) / I(r)) / (rho / r)^(n+4) per center (rows) and radius pair (columns).

    I(r) is the mean-recentred square integral over Q(Y, r). The field defaults to
    the trajectory values themselves, which is the quantity with n + 4 decay for
    caloric functions.
    """
    F = traj.values if fields is None else fields
    p = traj.lattice.n + 4
    out = np.empty((len(centers), len(pairs)))
    for i, Y in enumerate(centers):
        for j, (rho, r) in enumerate(pairs):
            if not 0 < rho < r:
                raise PreconditionError(f"need 0 < rho < r, got ({rho}, {r})")
            prof = campanato_profile(traj, Y, [rho, r], fields=F, m=m, check_monotone=False)
            if prof.omega[1] <= 0:
                out[i, j] = math.nan
                continue
            out[i, j] = prof.omega[0] / prof.omega[1] / (rho / r) ** p
    return out


def oscillation_constants(traj: Trajectory, Y, radii, R1: float, m: int = 4) -> np.ndarray:
    """osc_{Q(r)} u~ * R1 / (r M) for each r, with M = sup |u~| over Q(R1)."""
    t1, y = float(Y[0]), np.atleast_1d(Y[1])
    if max(radii) > R1:
        raise PreconditionError("radii must not exceed R1")
    big = ParabolicCylinder(t1, tuple(y), R1)
    lat = traj.lattice
    pts = stratified_points(lat, m)
    pts = pts[torus_distance(pts, y[None, :]) < R1]
    tix = np.flatnonzero((traj.times >= big.t0 - 1e-13) & (traj.times <= t1 + 1e-13))
    M = float(np.max(np.abs(PointEvaluator(lat, pts)(traj.values[tix]))))
    if M == 0:
        return np.zeros(len(radii))
    return np.array([oscillation(traj, ParabolicCylinder(t1, tuple(y), r), True, m) * R1 / (r * M)
                     for r in radii])


# ---------------------------------------------------- interpolation inequality


@dataclass
class InterpolationReport:
    alpha: float
    U1: float
    osc: float
    holder_star: float
    rhs1: float
    U2: float
    sup1: float
    holder_w1: float
    rhs2: float
    passed1: bool
    passed2: bool

    @property
    def passed(self) -> bool:
        return self.passed1 and self.passed2

    def __str__(self):
        return (f"U1={self.U1:.6g} <= 3-bound {self.rhs1:.6g}: {self.passed1}; "
                f"U2={self.U2:.6g} <= 5-bound {self.rhs2:.6g}: {self.passed2}")


def interpolation_inequality_check(traj: Trajectory, alpha: float, m: int = 4,
                                   max_pairs: int = MAX_PAIRS, seed: int = 0,
                                   time_indices=None) -> InterpolationReport:
    """U1 <= 3 [u]_0^(a/(1+a)) ([u]_0 + [u]*_{1+a})^(1/(1+a)) and
    U2 <= 5 (|u|_0^(1))^(a/(1+a)) (|u|_0^(1) + [u]^(1)_{1+a})^(1/(1+a)).

    All quantities come from one stratified sample set (lattice points
    included, so the gradient sups are exact); seminorms use every same-time
    and same-site pair up to the cap.
    """
    if not 0 < alpha <= 1:
        raise ValueError("alpha must lie in (0, 1]")
    S = SpaceTimeSampleSet.stratified(traj, m, time_indices=time_indices,
                                      policy=("same_time", "same_site"),
                                      max_pairs=max_pairs, seed=seed)
    u = S.values(0)[:, 0]
    g = np.max(np.abs(S.values(1)), axis=1)
    d = np.sqrt(S.t)
    U1 = float(np.max(d * g))
    U2 = float(np.max(S.t * g))
    osc = float(u.max() - u.min())
    sup1 = float(np.max(d * np.abs(u)))
    H_star = holder_seminorm(S, SeminormSpec(1 + alpha, 0.0, "bracket", 1))
    H_w1 = holder_seminorm(S, SeminormSpec(1 + alpha, 1.0, "bracket", 1))
    p, q = alpha / (1 + alpha), 1 / (1 + alpha)
    rhs1 = 3.0 * osc**p * (osc + H_star) ** q
    rhs2 = 5.0 * sup1**p * (sup1 + H_w1) ** q
    tol = 1e-12
    return InterpolationReport(alpha, U1, osc, H_star, rhs1, U2, sup1, H_w1, rhs2,
                               bool(U1 <= rhs1 * (1 + tol) + tol), bool(U2 <= rhs2 * (1 + tol) + tol))


# -------------------------------------------------------- iteration lemma


@dataclass
class IterationReport:
    C: float
    literal_constant: bool
    checked: int
    violations: list = field(default_factory=list)   # (r, lhs, rhs)

    @property
    def passed(self) -> bool:
        return not self.violations


def iteration_constant(alpha_bar: float, delta: float, tau: float, literal: bool = False) -> float:
    """max{tau^-alpha_bar, tau^-delta / (tau^delta - tau^alpha_bar)}.

    ``literal=True`` returns the variant with tau^{+alpha_bar} in the first
    slot, kept only to demonstrate that it can fail.
    """
    first = tau**alpha_bar if literal else tau ** (-alpha_bar)
    return max(first, tau ** (-delta) / (tau**delta - tau**alpha_bar))


def _as_function(obj):
    if callable(obj):
        return obj
    r, v = (np.asarray(x, dtype=float) for x in obj)
    order = np.argsort(r)
    r, v = r[order], v[order]
    return lambda s: np.interp(s, r, v)


def iteration_bound(omega, sigma, alpha_bar: float, delta: float, tau: float, R0: float,
                    r_grid=None, literal: bool = False, rtol: float = 1e-12):
    """Check the hypotheses of the iteration lemma on ``r_grid`` and its conclusion.

    ``omega`` and ``sigma`` are callables or (r, values) tables (linear
    interpolation). Hypotheses: both nondecreasing; r^-delta sigma(r) <=
    s^-delta sigma(s) for s <= r; omega(tau r) <= tau^alpha_bar omega(r) + sigma(r)
    for r <= R0. Any failure raises HypothesisError naming the offending r (and s).
    Returns (C, report) with the conclusion omega(r) <= C[(r/R0)^alpha_bar
    omega(R0) + sigma(r)] checked at every grid r.
    """
    if not 0 < tau < 1:
        raise HypothesisError(f"tau must lie in (0,1), got {tau}")
    if not 0 < delta < alpha_bar:
        raise HypothesisError(f"need 0 < delta < alpha_bar, got delta={delta}, alpha_bar={alpha_bar}")
    om = _as_function(omega)
    sg = _as_function(sigma)
    if r_grid is None:
        r_grid = R0 * np.geomspace(tau**6, 1.0, 400)
    r = np.asarray(sorted(r_grid), dtype=float)
    if r[-1] > R0 * (1 + 1e-12):
        raise HypothesisError("grid extends beyond R0")
    w = np.asarray(om(r), dtype=float) * np.ones_like(r)
    s = np.asarray(sg(r), dtype=float) * np.ones_like(r)
    scale = max(1.0, float(np.max(np.abs(w))), float(np.max(np.abs(s))))
    bad = np.flatnonzero(np.diff(w) < -rtol * scale)
    if bad.size:
        k = int(bad[0])
        raise HypothesisError(f"omega decreases between r={r[k]:.6g} and r={r[k + 1]:.6g}")
    bad = np.flatnonzero(np.diff(s) < -rtol * scale)
    if bad.size:
        k = int(bad[0])
        raise HypothesisError(f"sigma decreases between r={r[k]:.6g} and r={r[k + 1]:.6g}")
    q = r ** (-delta) * s
    # r^-delta sigma(r) must be nonincreasing in r: compare every s <= r via running min
    run_min = np.minimum.accumulate(q)
    bad = np.flatnonzero(q > run_min * (1 + rtol) + rtol)
    if bad.size:
        k = int(bad[0])
        j = int(np.argmin(q[:k + 1]))
        raise HypothesisError(
            f"r^-delta sigma(r) increases: r={r[k]:.6g} vs s={r[j]:.6g}")
    lhs = np.asarray(om(tau * r), dtype=float) * np.ones_like(r)
    bad = np.flatnonzero(lhs > tau**alpha_bar * w + s + rtol * scale)
    if bad.size:
        k = int(bad[0])
        raise HypothesisError(f"omega(tau r) <= tau^alpha omega(r) + sigma(r) fails at r={r[k]:.6g}")
    C = iteration_constant(alpha_bar, delta, tau, literal)
    wR0 = float(np.asarray(om(R0)))
    rhs = C * ((r / R0) ** alpha_bar * wR0 + s)
    viol = [(float(r[k]), float(w[k]), float(rhs[k]))
            for k in np.flatnonzero(w > rhs * (1 + rtol) + rtol * scale)]
    return C, IterationReport(C, literal, int(r.size), viol)


# ----------------------------------------------------------- exponent fits


@dataclass
class HolderFit:
    exponent: float
    constant: float
    r2: float
    bins_used: int
    pairs: int
    defined: bool
    mode: str
    reason: str = ""

    def __str__(self):
        if not self.defined:
            return f"Hoelder fit ({self.mode}) undefined: {self.reason}"
        return (f"Hoelder fit ({self.mode}): sigma={self.exponent:.4f}, C={self.constant:.4g}, "
                f"R^2={self.r2:.4f} over {self.bins_used} bins / {self.pairs} pairs")


def envelope_fit(modulus, diff, bins: int = 24, mode: str = "custom", min_bins: int = 3) -> HolderFit:
    """Least squares of log max|dF| against log modulus over logarithmic bins.

    Each bin contributes its maximising pair (modulus and difference of that pair).
    """
    modulus = np.asarray(modulus, dtype=float)
    diff = np.asarray(diff, dtype=float)
    ok = (modulus > 0) & (diff > 0) & np.isfinite(modulus) & np.isfinite(diff)
    if not ok.any():
        return HolderFit(math.nan, math.nan, math.nan, 0, int(modulus.size), False, mode,
                         "no pair with a positive difference")
    m, d = modulus[ok], diff[ok]
    lo, hi = m.min(), m.max()
    if hi <= lo * (1 + 1e-12):
        return HolderFit(math.nan, math.nan, math.nan, 0, int(m.size), False, mode,
                         "modulus range is degenerate")
    edges = np.geomspace(lo, hi, bins + 1)
    which = np.clip(np.searchsorted(edges, m, side="right") - 1, 0, bins - 1)
    xs, ys = [], []
    for b in range(bins):
        sel = np.flatnonzero(which == b)
        if sel.size == 0:
            continue
        k = sel[np.argmax(d[sel])]
        xs.append(math.log(m[k]))
        ys.append(math.log(d[k]))
    if len(xs) < min_bins:
        return HolderFit(math.nan, math.nan, math.nan, len(xs), int(m.size), False, mode,
                         f"only {len(xs)} nonempty bins")
    xs, ys = np.array(xs), np.array(ys)
    slope, icpt = np.polyfit(xs, ys, 1)
    pred = slope * xs + icpt
    ss_res = float(np.sum((ys - pred) ** 2))
    ss_tot = float(np.sum((ys - ys.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return HolderFit(float(slope), float(math.exp(icpt)), float(r2), len(xs), int(m.size), True, mode)


def fit_holder_exponent(traj: Trajectory, t_floor: float, mode: str = "nash-combined",
                        bins: int = 24, max_pairs: int = MAX_PAIRS, seed: int = 0,
                        fields=None, min_dist: float | None = None) -> HolderFit:
    """Envelope fit of |F(X) - F(Y)| against (sqrt|t-s| v |x-y|) / sqrt(t ^ s).

    mode 'space' uses same-time pairs, 'time' same-site pairs, 'nash-combined' all pairs.
    Pairs closer than ``min_dist`` (default 1/N) in the parabolic distance are dropped:
    below the lattice spacing only time increments exist, and those see the smooth
    ODE flow rather than the spatial regularity.
    """
    policy = {"space": "same_time", "time": "same_site", "nash-combined": "all"}.get(mode)
    if policy is None:
        raise ValueError(f"unknown mode {mode!r}")
    if t_floor <= 0:
        raise PreconditionError("t_floor must be positive")
    tix = np.flatnonzero(traj.times >= t_floor)
    if tix.size == 0:
        raise PreconditionError("no trajectory node at or above t_floor")
    S = SpaceTimeSampleSet.lattice_points(traj, time_indices=tix, policy=policy,
                                          max_pairs=max_pairs, seed=seed)
    F = S.values(0)[:, 0] if fields is None else S.field_values(fields)[:, 0]
    ii, jj = S.pairs()
    if ii.size == 0:
        return HolderFit(math.nan, math.nan, math.nan, 0, 0, False, mode, "empty pair set")
    dist = np.maximum(np.sqrt(np.abs(S.t[ii] - S.t[jj])), torus_distance(S.z[ii], S.z[jj]))
    h = 1.0 / traj.lattice.N if min_dist is None else float(min_dist)
    keep = dist >= h * (1 - 1e-9)
    ii, jj, dist = ii[keep], jj[keep], dist[keep]
    if ii.size == 0:
        return HolderFit(math.nan, math.nan, math.nan, 0, 0, False, mode, "no pair above min_dist")
    modulus = dist / np.sqrt(np.minimum(S.t[ii], S.t[jj]))
    return envelope_fit(modulus, np.abs(F[ii] - F[jj]), bins, mode)
