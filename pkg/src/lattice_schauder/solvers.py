"""Explicit RK4 solvers for lattice reaction-diffusion and linear problems.

All integrators share one rule: the step is dt = cfl / (4 n c_+ N^2) with
cfl = 0.5, shrunk so that every requested sample time is hit exactly.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from numpy.polynomial import Polynomial

from . import _kernels
from .errors import (
    EnvelopeError,
    IntegratorInstabilityError,
    InvariantError,
    LatticeMismatchError,
    PreconditionError,
    SizeGuardError,
)
from .lattice import (
    ConstantCoefficients,
    EdgeCoefficients,
    TorusLattice,
    ball_mask,
    grad_dual,
    grad_forward,
    laplacian,
)

CFL = 0.5
ENVELOPE_SLACK = 1e-8
DENSE_GUARD = 4096
SCAN_POINTS = 20001


def cfl_step(lat: TorusLattice, c_plus: float, cfl: float = CFL) -> float:
    return cfl / (4.0 * lat.n * c_plus * lat.N**2)


# ------------------------------------------------------------ nonlinearity


_PHI_PRESETS = {"identity": [0.0, 1.0], "cubic": [0.0, 1.0, 0.0, 0.1]}
_F_PRESETS = {"none": [0.0], "allen-cahn": [0.0, 1.0, 0.0, -1.0], "logistic": [1.0, -1.0]}


@dataclass(frozen=True)
class Nonlinearity:
    """phi, f and K for du/dt = Delta phi(u) + K f(u) on the envelope [u_minus, u_plus].

    Construction scans phi' on a fine grid of the envelope to get c_minus,
    c_plus and ||phi''||. It rejects phi' <= 0, and when K > 0 it also rejects
    f(u_minus) < 0 or f(u_plus) > 0. The strict sign conditions of the comparison argument are
    checked by ``comparison_envelope``; f == 0 is admitted here so that pure
    diffusion can use the same type.
    """

    phi: Callable
    dphi: Callable
    d2phi: Callable
    d3phi: Callable
    f: Callable
    df: Callable
    K: float
    u_minus: float
    u_plus: float
    name: str = "custom"
    c_minus: float = field(init=False)
    c_plus: float = field(init=False)
    phi2_norm: float = field(init=False)

    def __post_init__(self):
        if not self.u_minus < self.u_plus:
            raise EnvelopeError(f"empty envelope [{self.u_minus}, {self.u_plus}]")
        if self.K < 0:
            raise ValueError(f"K must be nonnegative, got {self.K}")
        grid = np.linspace(self.u_minus, self.u_plus, SCAN_POINTS)
        dp = np.asarray(self.dphi(grid), dtype=float) * np.ones_like(grid)
        if np.any(dp <= 0):
            raise InvariantError("phi' must be positive on the envelope")
        object.__setattr__(self, "c_minus", float(dp.min()))
        object.__setattr__(self, "c_plus", float(dp.max()))
        d2 = np.asarray(self.d2phi(grid), dtype=float) * np.ones_like(grid)
        object.__setattr__(self, "phi2_norm", float(np.max(np.abs(d2))))
        fm, fp = float(self.f(self.u_minus)), float(self.f(self.u_plus))
        if self.K > 0 and (fm < 0 or fp > 0):
            raise EnvelopeError(
                f"f({self.u_minus})={fm:.3g}, f({self.u_plus})={fp:.3g}: the envelope is not invariant"
            )

    @classmethod
    def polynomial(cls, phi_coeffs, f_coeffs, K: float, u_minus: float, u_plus: float,
                   name: str = "polynomial") -> "Nonlinearity":
        """phi and f given by ascending coefficient lists (or preset names)."""
        if isinstance(phi_coeffs, str):
            phi_coeffs = _PHI_PRESETS[phi_coeffs]
        if isinstance(f_coeffs, str):
            f_coeffs = _F_PRESETS[f_coeffs]
        P = Polynomial(phi_coeffs)
        F = Polynomial(f_coeffs)
        return cls(P, P.deriv(1), P.deriv(2), P.deriv(3), F, F.deriv(1),
                   float(K), float(u_minus), float(u_plus), name)

    @classmethod
    def allen_cahn(cls, K: float, phi: str | Sequence[float] = "cubic",
                   envelope=(-1.2, 1.2)) -> "Nonlinearity":
        return cls.polynomial(phi, "allen-cahn", K, *envelope, name="allen-cahn")

    @classmethod
    def heat(cls, envelope=(-10.0, 10.0)) -> "Nonlinearity":
        return cls.polynomial("identity", "none", 0.0, *envelope, name="heat")

    def quotient(self, a, b):
        """(phi(a) - phi(b)) / (a - b), with phi'((a+b)/2) below the eps_mv threshold."""
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        eps = 1e-9 * (self.u_plus - self.u_minus)
        d = a - b
        close = np.abs(d) <= eps
        safe = np.where(close, 1.0, d)
        q = (self.phi(a) - self.phi(b)) / safe
        return np.where(close, self.dphi(0.5 * (a + b)), q)

    def phi_inverse(self, psi, iterations: int = 50):
        psi = np.asarray(psi, dtype=float)
        lo = np.full(psi.shape, self.u_minus)
        hi = np.full(psi.shape, self.u_plus)
        for _ in range(iterations):
            mid = 0.5 * (lo + hi)
            below = self.phi(mid) < psi
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
        return 0.5 * (lo + hi)

    def range_scan(self, fn, lo: float, hi: float, points: int = 257):
        """(min, max) of ``fn`` over [lo, hi] by a grid scan including endpoints."""
        g = np.linspace(lo, hi, points)
        v = np.asarray(fn(g), dtype=float) * np.ones_like(g)
        return float(v.min()), float(v.max())


def coefficients_from_state(lat: TorusLattice, u, nl: Nonlinearity,
                            slack: float = ENVELOPE_SLACK) -> EdgeCoefficients:
    u = lat.field(u)
    if u.min() < nl.u_minus - slack or u.max() > nl.u_plus + slack:
        raise EnvelopeError(
            f"state range [{u.min():.6g}, {u.max():.6g}] leaves [{nl.u_minus}, {nl.u_plus}]"
        )
    vals = nl.quotient(u[lat.neighbors], u[:, None])
    return EdgeCoefficients(lat, vals, c_minus=nl.c_minus, c_plus=nl.c_plus,
                            check=True, tol=1e-12 * nl.c_plus)


# -------------------------------------------------------------- trajectory


class Trajectory:
    """Time-sampled fields on one lattice. Values are stored as (M+1, N^n)."""

    def __init__(self, lattice: TorusLattice, times, values, dt: float | None = None):
        times = np.array(times, dtype=np.float64)
        values = np.array(values, dtype=np.float64)
        if times.ndim != 1 or times.size == 0:
            raise InvariantError("time grid must be a nonempty 1-d array")
        if np.any(np.diff(times) <= 0):
            raise InvariantError("time grid must be strictly increasing")
        if values.shape != (times.size, lattice.size):
            raise InvariantError(
                f"values of shape {values.shape} do not match {times.size} nodes on {lattice!r}"
            )
        times.setflags(write=False)
        values.setflags(write=False)
        self.lattice = lattice
        self.times = times
        self.values = values
        self.dt = dt

    def __len__(self):
        return self.times.size

    def __repr__(self):
        return (f"Trajectory({self.lattice!r}, {self.times.size} nodes on "
                f"[{self.times[0]:.4g}, {self.times[-1]:.4g}])")

    @property
    def T(self) -> float:
        return float(self.times[-1])

    def index_of(self, t: float, tol: float = 1e-12) -> int:
        k = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[k] - t) > tol * max(1.0, abs(t)):
            raise KeyError(f"t={t} is not a trajectory node")
        return k

    def at(self, t: float, order: int = 1) -> np.ndarray:
        """Field at time t: linear (order=1) or 4-point Lagrange (order=3) in time."""
        ts = self.times
        if t < ts[0] - 1e-14 or t > ts[-1] + 1e-14:
            raise PreconditionError(f"t={t} outside [{ts[0]}, {ts[-1]}]")
        k = int(np.searchsorted(ts, t))
        if k < ts.size and abs(ts[k] - t) <= 1e-14 * max(1.0, abs(t)):
            return self.values[k].copy()
        if k > 0 and abs(ts[k - 1] - t) <= 1e-14 * max(1.0, abs(t)):
            return self.values[k - 1].copy()
        k = min(max(k, 1), ts.size - 1)
        if order == 1 or ts.size < 4:
            w = (t - ts[k - 1]) / (ts[k] - ts[k - 1])
            return (1 - w) * self.values[k - 1] + w * self.values[k]
        lo = min(max(k - 2, 0), ts.size - 4)
        idx = range(lo, lo + 4)
        out = np.zeros(self.lattice.size)
        for i in idx:
            li = 1.0
            for j in idx:
                if j != i:
                    li *= (t - ts[j]) / (ts[i] - ts[j])
            out += li * self.values[i]
        return out

    def map(self, fn) -> "Trajectory":
        return Trajectory(self.lattice, self.times, [fn(v) for v in self.values], self.dt)

    def restrict(self, indices) -> "Trajectory":
        idx = np.asarray(indices)
        return Trajectory(self.lattice, self.times[idx], self.values[idx], self.dt)

    def dump_csv(self, path) -> None:
        lat = self.lattice
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t"] + [f"x{i}" for i in range(lat.n)] + ["value"])
            for t, vals in zip(self.times, self.values):
                tt = repr(float(t))
                for x, v in zip(lat.coords, vals):
                    w.writerow([tt] + [int(c) for c in x] + [repr(float(v))])

    @classmethod
    def load_csv(cls, path) -> "Trajectory":
        with Path(path).open(newline="") as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], rows[1:]
        n = len(header) - 2
        if header != ["t"] + [f"x{i}" for i in range(n)] + ["value"]:
            raise ValueError(f"unexpected trajectory header {header}")
        times = sorted({float(r[0]) for r in body})
        per = len(body) // len(times)
        N = round(per ** (1.0 / n))
        lat = TorusLattice(n, N)
        tix = {t: i for i, t in enumerate(times)}
        vals = np.full((len(times), lat.size), np.nan)
        for r in body:
            vals[tix[float(r[0])], lat.site_index([int(c) for c in r[1:1 + n]])] = float(r[-1])
        if np.isnan(vals).any():
            raise ValueError("trajectory CSV is incomplete")
        return cls(lat, times, vals)


# --------------------------------------------------------------- time grid


def _sample_grid(T: float, samples) -> np.ndarray | None:
    """Requested output times; None means every integrator step."""
    if samples is None or (isinstance(samples, str) and samples == "steps"):
        return None
    if isinstance(samples, (int, np.integer)):
        if samples < 1:
            raise ValueError("need at least one sample interval")
        return np.linspace(0.0, T, int(samples) + 1)
    ts = np.asarray(samples, dtype=float)
    if ts.ndim != 1 or np.any(np.diff(ts) <= 0):
        raise ValueError("sample times must be strictly increasing")
    if ts[0] < 0 or ts[-1] > T * (1 + 1e-12):
        raise ValueError("sample times must lie in [0, T]")
    if ts[0] > 0:
        ts = np.concatenate([[0.0], ts])
    return ts


def _integrate(rhs, y0, T, dt_max, samples, after_step=None, t0: float = 0.0):
    """RK4 from t0 to t0+T, returning (times, states) at the requested samples.

    ``rhs(t, y)`` gives dy/dt; ``after_step(t, y)`` may raise to abort.
    """
    grid = _sample_grid(T, samples)
    if grid is None:
        m = max(1, math.ceil(T / dt_max - 1e-9))
        grid = np.linspace(0.0, T, m + 1)
    grid = t0 + grid
    y = np.array(y0, dtype=float)
    out = [y.copy()]
    t = grid[0]
    for t_next in grid[1:]:
        span = t_next - t
        m = max(1, math.ceil(span / dt_max - 1e-9))
        h = span / m
        for k in range(m):
            tk = t + k * h
            k1 = rhs(tk, y)
            k2 = rhs(tk + 0.5 * h, y + 0.5 * h * k1)
            k3 = rhs(tk + 0.5 * h, y + 0.5 * h * k2)
            k4 = rhs(tk + h, y + h * k3)
            y = y + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
            if after_step is not None:
                after_step(tk + h, y)
        t = t_next
        out.append(y.copy())
    return grid, np.array(out)


def _envelope_guard(lo: float, hi: float, slack: float = ENVELOPE_SLACK, what: str = "u"):
    def check(t, y):
        ymin, ymax = float(y.min()), float(y.max())
        if not (np.isfinite(ymin) and np.isfinite(ymax)):
            raise IntegratorInstabilityError(f"non-finite {what} at t={t:.6g}")
        if ymin < lo - slack or ymax > hi + slack:
            raise IntegratorInstabilityError(
                f"{what} range [{ymin:.10g}, {ymax:.10g}] escaped [{lo}, {hi}] at t={t:.6g}; dt too large?"
            )
    return check


def _check_initial(u0, nl: Nonlinearity):
    if not (u0.min() > nl.u_minus and u0.max() < nl.u_plus):
        raise EnvelopeError(
            f"initial range [{u0.min():.6g}, {u0.max():.6g}] not strictly inside ({nl.u_minus}, {nl.u_plus})"
        )


# ------------------------------------------------------------- quasilinear


def solve_quasilinear(nl: Nonlinearity, lat: TorusLattice, u0, T: float,
                      samples=None, cfl: float = CFL) -> Trajectory:
    """du/dt = Delta phi(u) + K f(u) by RK4. ``samples``: None (every step), int or times."""
    u0 = lat.field(u0)
    _check_initial(u0, nl)
    dt = cfl_step(lat, nl.c_plus, cfl)
    ones = np.ones((lat.size, 2 * lat.n))
    N2 = float(lat.N**2)
    nbr = lat.neighbors

    def rhs(t, u):
        return _kernels.edge_apply(nl.phi(u), nbr, ones, N2) + nl.K * nl.f(u)

    times, vals = _integrate(rhs, u0, T, dt, samples,
                             _envelope_guard(nl.u_minus, nl.u_plus))
    return Trajectory(lat, times, vals, dt)


def solve_nondivergence_psi(nl: Nonlinearity, lat: TorusLattice, u0, T: float,
                            samples=None, cfl: float = CFL) -> Trajectory:
    """d psi/dt = phi'(u) (Delta psi + K f(u)) with u = phi^{-1}(psi); returns psi."""
    u0 = lat.field(u0)
    _check_initial(u0, nl)
    dt = cfl_step(lat, nl.c_plus, cfl)

    def rhs(t, psi):
        u = nl.phi_inverse(psi)
        return nl.dphi(u) * (laplacian(lat, psi) + nl.K * nl.f(u))

    lo, hi = float(nl.phi(nl.u_minus)), float(nl.phi(nl.u_plus))
    times, vals = _integrate(rhs, nl.phi(u0), T, dt, samples,
                             _envelope_guard(lo, hi, what="psi"))
    return Trajectory(lat, times, vals, dt)


@dataclass
class GradientSystemResult:
    u: Trajectory
    xi: dict  # axis -> Trajectory of xi_{+e_axis}
    max_curl: float

    def second_derivative(self, nl: Nonlinearity, k: int, e1, e2) -> np.ndarray:
        """grad_{e1} grad_{e2} u at node k via grad_{e1}(xi_{e2} / a_{x,e2}); e2 > 0."""
        lat = self.u.lattice
        if not e2.positive:
            raise ValueError("the xi route needs e2 > 0")
        u = self.u.values[k]
        a = nl.quotient(u[lat.neighbors[:, e2.index]], u)
        return grad_forward(lat, self.xi[e2.axis].values[k] / a, e1)


def solve_gradient_system(nl: Nonlinearity, lat: TorusLattice, u0, T: float,
                          samples=None, cfl: float = CFL,
                          curl_tol: float = 1e-8) -> GradientSystemResult:
    """Co-evolve u and xi_e = grad_e phi(u), e > 0, through the gradient system.

    d xi_e/dt = -grad_e(abar sum_{e'>0} grad*_{e'} xi_{e'}) + grad_e g,
    abar = phi'(u), g = K abar f(u). The curl grad_{e'} xi_e - grad_e xi_{e'}
    is monitored after every step.
    """
    u0 = lat.field(u0)
    _check_initial(u0, nl)
    S, n = lat.size, lat.n
    dt = cfl_step(lat, nl.c_plus, cfl)
    pos = lat.positive_directions
    y0 = np.concatenate([u0] + [grad_forward(lat, nl.phi(u0), e) for e in pos])

    def rhs(t, y):
        u = y[:S]
        xis = [y[S * (i + 1):S * (i + 2)] for i in range(n)]
        abar = nl.dphi(u)
        div = np.zeros(S)
        for e, xe in zip(pos, xis):
            div += grad_dual(lat, xe, e)
        H = -abar * div + nl.K * abar * nl.f(u)
        du = laplacian(lat, nl.phi(u)) + nl.K * nl.f(u)
        return np.concatenate([du] + [grad_forward(lat, H, e) for e in pos])

    curl = [0.0]
    guard = _envelope_guard(nl.u_minus, nl.u_plus)

    def after(t, y):
        guard(t, y[:S])
        for i in range(n):
            for j in range(i + 1, n):
                xi_i = y[S * (i + 1):S * (i + 2)]
                xi_j = y[S * (j + 1):S * (j + 2)]
                c = float(np.max(np.abs(grad_forward(lat, xi_i, pos[j]) - grad_forward(lat, xi_j, pos[i]))))
                curl[0] = max(curl[0], c)
                if c > curl_tol:
                    raise InvariantError(f"curl of xi reached {c:.3e} at t={t:.6g}")

    times, vals = _integrate(rhs, y0, T, dt, samples, after)
    u = Trajectory(lat, times, vals[:, :S], dt)
    xi = {e.axis: Trajectory(lat, times, vals[:, S * (i + 1):S * (i + 2)], dt)
          for i, e in enumerate(pos)}
    return GradientSystemResult(u, xi, curl[0])


# ------------------------------------------------------------ linear problems


class LinearProblem:
    """du/dt = L_{a(t)} u + g(t), u(0) = u0.

    ``a`` is a callable t -> (N^n, 2n) table; ``g`` a callable t -> field or None.
    Tabulated schedules are linearly interpolated between nodes.
    """

    def __init__(self, lattice: TorusLattice, u0, a: Callable, g: Callable | None = None,
                 c_minus: float | None = None, c_plus: float | None = None,
                 check_times: Sequence[float] = (0.0,)):
        self.lattice = lattice
        self.u0 = lattice.field(u0)
        self.a = a
        self.g = g
        tabs = [EdgeCoefficients(lattice, a(t), tol=1e-12) for t in check_times]
        self.c_minus = min(t.c_minus for t in tabs) if c_minus is None else float(c_minus)
        self.c_plus = max(t.c_plus for t in tabs) if c_plus is None else float(c_plus)
        for tab in tabs:
            if tab.c_minus < self.c_minus - 1e-12 or tab.c_plus > self.c_plus + 1e-12:
                raise InvariantError("coefficient schedule leaves its declared bounds")

    @classmethod
    def constant(cls, lattice: TorusLattice, u0, a, g=None) -> "LinearProblem":
        tab = EdgeCoefficients.constant(lattice, a) if not isinstance(a, EdgeCoefficients) else a
        vals = tab.values
        gfun = None
        if g is not None:
            gfun = g if callable(g) else (lambda t, _g=lattice.field(g): _g)
        return cls(lattice, u0, lambda t: vals, gfun)

    @classmethod
    def from_schedule(cls, lattice: TorusLattice, times, a_table, u0, g_table=None) -> "LinearProblem":
        times = np.asarray(times, dtype=float)
        a_table = np.asarray(a_table, dtype=float)
        if a_table.shape != (times.size, lattice.size, 2 * lattice.n):
            raise InvariantError("schedule table does not match its time grid")
        for k in range(times.size):
            EdgeCoefficients(lattice, a_table[k], tol=1e-12)

        def interp(table):
            def at(t):
                k = int(np.clip(np.searchsorted(times, t), 1, times.size - 1))
                w = (t - times[k - 1]) / (times[k] - times[k - 1])
                w = min(max(w, 0.0), 1.0)
                return (1 - w) * table[k - 1] + w * table[k]
            return at

        g = None if g_table is None else interp(np.asarray(g_table, dtype=float))
        return cls(lattice, u0, interp(a_table), g,
                   c_minus=float(a_table.min()), c_plus=float(a_table.max()), check_times=())

    @classmethod
    def from_trajectory(cls, traj: Trajectory, nl: Nonlinearity) -> "LinearProblem":
        """Freeze a(t) = a(u(t)) and g(t) = K f(u(t)) along a quasilinear trajectory."""
        lat = traj.lattice
        a_tab = np.array([coefficients_from_state(lat, u, nl).values for u in traj.values])
        g_tab = nl.K * nl.f(traj.values)
        return cls.from_schedule(lat, traj.times, a_tab, traj.values[0], g_tab)

    def matrix(self, t: float) -> np.ndarray:
        return generator_matrix(self.lattice, self.a(t))


def generator_matrix(lat: TorusLattice, a_table) -> np.ndarray:
    """Dense matrix of L_a: M[x, x+e] += N^2 a_{x,e}, M[x, x] -= N^2 sum_e a_{x,e}."""
    a_table = np.asarray(a_table, dtype=float)
    S = lat.size
    M = np.zeros((S, S))
    N2 = float(lat.N**2)
    rows = np.repeat(np.arange(S), 2 * lat.n)
    np.add.at(M, (rows, lat.neighbors.ravel()), N2 * a_table.ravel())
    M[np.arange(S), np.arange(S)] -= N2 * a_table.sum(axis=1)
    return M


def solve_linear_divergence(p: LinearProblem, T: float, samples=None,
                            cfl: float = CFL, envelope=None) -> Trajectory:
    lat = p.lattice
    dt = cfl_step(lat, p.c_plus, cfl)
    N2 = float(lat.N**2)
    nbr = lat.neighbors

    def rhs(t, u):
        out = _kernels.edge_apply(u, nbr, np.ascontiguousarray(p.a(t)), N2)
        if p.g is not None:
            out = out + p.g(t)
        return out

    guard = None if envelope is None else _envelope_guard(*envelope)
    times, vals = _integrate(rhs, p.u0, T, dt, samples, guard)
    return Trajectory(lat, times, vals, dt)


def solve_linear_nondivergence(lat: TorusLattice, a: Callable, u0, T: float,
                               samples=None, cfl: float = CFL) -> Trajectory:
    """du/dt = sum_e a_{x,e}(t) N^2 (u(x+e) + u(x-e) - 2u(x)).

    This is the forward-parabolic sign: the verbatim operator of
    ``nondivergence_operator`` enters with a minus. ``a`` is t -> (N^n, 2n), a >= 0,
    no symmetry needed.
    """
    u0 = lat.field(u0)
    a0 = np.asarray(a(0.0))
    c_plus = max(float(a0.max()), 1e-300)
    # the stencil weights 2 a_e per direction pair, hence the factor 2 in the bound
    dt = cfl / (8.0 * lat.n * c_plus * lat.N**2)
    N2 = float(lat.N**2)

    def rhs(t, u):
        at = np.ascontiguousarray(a(t))
        if np.any(at < 0):
            raise InvariantError("non-divergence coefficients must be nonnegative")
        return -_kernels.second_diff_apply(u, lat.neighbors, lat.opposite, at, N2)

    times, vals = _integrate(rhs, u0, T, dt, samples)
    return Trajectory(lat, times, vals, dt)


def _rk4_matrix_step(M_of_t, t: float, h: float, P: np.ndarray) -> np.ndarray:
    M1 = M_of_t(t)
    M2 = M_of_t(t + 0.5 * h)
    M3 = M_of_t(t + h)
    K1 = M1 @ P
    K2 = M2 @ (P + 0.5 * h * K1)
    K3 = M2 @ (P + 0.5 * h * K2)
    K4 = M3 @ (P + h * K3)
    return P + (h / 6.0) * (K1 + 2 * K2 + 2 * K3 + K4)


def dense_evolve(M_of_t, S: int, s: float, t: float, dt_max: float,
                 P0: np.ndarray | None = None, checkpoints: Sequence[float] = ()):
    """RK4 for dP/dt = M(t) P from s to t (t >= s); returns P(t) and checkpoint copies."""
    if t < s:
        raise PreconditionError(f"need s <= t, got s={s}, t={t}")
    P = np.eye(S) if P0 is None else np.array(P0, dtype=float)
    marks = sorted(set(float(c) for c in checkpoints if s < c < t))
    stops = marks + [t]
    saved = {}
    cur = s
    for stop in stops:
        span = stop - cur
        if span > 0:
            m = max(1, math.ceil(span / dt_max - 1e-9))
            h = span / m
            for k in range(m):
                P = _rk4_matrix_step(M_of_t, cur + k * h, h, P)
        cur = stop
        saved[stop] = P.copy()
    return P, saved


def _guard(lat: TorusLattice):
    if lat.size > DENSE_GUARD:
        raise SizeGuardError(f"dense propagator needs N^n <= {DENSE_GUARD}, got {lat.size}")


def propagator(p: LinearProblem, s: float, t: float, dt_factor: float = 1.0,
               cfl: float = CFL) -> np.ndarray:
    """P_{s,t}: column y is the solution at t started from the indicator of y at s."""
    lat = p.lattice
    _guard(lat)
    if t < s:
        raise PreconditionError(f"need s <= t, got s={s}, t={t}")
    dt = cfl_step(lat, p.c_plus, cfl) * dt_factor
    P, _ = dense_evolve(p.matrix, lat.size, s, t, dt)
    return P


def duhamel_reconstruct(p: LinearProblem, T: float, cfl: float = CFL) -> Trajectory:
    """u(t_k) = P_{0,t_k} u0 + int_0^{t_k} P_{s,t_k} g(s) ds, trapezoid on the integrator grid.

    The one-step matrices S_j = P_{t_j, t_{j+1}} are RK4 step matrices, and the
    two sums are carried forward recursively so no P_{s,t} is formed twice.
    """
    lat = p.lattice
    _guard(lat)
    dt = cfl_step(lat, p.c_plus, cfl)
    m = max(1, math.ceil(T / dt - 1e-9))
    h = T / m
    times = np.linspace(0.0, T, m + 1)
    S = lat.size
    zero = np.zeros(S)
    g = (lambda t: zero) if p.g is None else p.g
    free = p.u0.copy()          # P_{0,t_k} u0
    g0 = g(0.0)
    carried_g0 = g0.copy()      # P_{0,t_k} g(0)
    H = g0.copy()               # sum_{j<=k} P_{t_j,t_k} g(t_j)
    out = [p.u0.copy()]
    I = np.eye(S)
    for k in range(m):
        Sk = _rk4_matrix_step(p.matrix, times[k], h, I)
        free = Sk @ free
        carried_g0 = Sk @ carried_g0
        gk = g(times[k + 1])
        H = Sk @ H + gk
        integral = h * (H - 0.5 * carried_g0 - 0.5 * gk)
        out.append(free + integral)
    return Trajectory(lat, times, np.array(out), h)


# ---------------------------------------------------------- comparison / max


def comparison_envelope(nl: Nonlinearity, lat: TorusLattice, u0) -> tuple[float, float]:
    u0 = lat.field(u0)
    fm, fp = float(nl.f(nl.u_minus)), float(nl.f(nl.u_plus))
    problems = []
    if not fm > 0:
        problems.append(f"f(u_-)={fm:.4g} is not > 0")
    if not fp < 0:
        problems.append(f"f(u_+)={fp:.4g} is not < 0")
    if not nl.u_minus < u0.min():
        problems.append(f"u_-={nl.u_minus} is not below min u0={u0.min():.6g}")
    if not u0.max() < nl.u_plus:
        problems.append(f"u_+={nl.u_plus} is not above max u0={u0.max():.6g}")
    if problems:
        raise EnvelopeError("no valid comparison envelope: " + "; ".join(problems))
    return nl.u_minus, nl.u_plus


@dataclass
class MaximumPrincipleReport:
    kind: str
    passed: bool
    initial_max: float
    initial_min: float
    overshoot: float          # max(u) - max(u0), positive means violation
    undershoot: float         # min(u0) - min(u)
    worst_time: float
    worst_site: tuple
    slack: float

    def __str__(self):
        state = "ok" if self.passed else "VIOLATED"
        return (f"maximum principle ({self.kind}) {state}: overshoot {self.overshoot:.3e}, "
                f"undershoot {self.undershoot:.3e} (slack {self.slack:g}); worst at t={self.worst_time:.6g}, "
                f"x={list(self.worst_site)}")


def check_maximum_principle(traj: Trajectory, kind: str = "divergence",
                            slack: float = ENVELOPE_SLACK) -> MaximumPrincipleReport:
    """max/min over the whole run against their values at t = 0.

    For ``kind='nondivergence'`` the trajectory is expected from
    ``solve_linear_nondivergence`` (forward-parabolic sign).
    """
    if kind not in ("divergence", "nondivergence"):
        raise ValueError(f"unknown kind {kind!r}")
    v = traj.values
    mx0, mn0 = float(v[0].max()), float(v[0].min())
    over = v - mx0
    under = mn0 - v
    if over.max() >= under.max():
        k, x = np.unravel_index(int(np.argmax(over)), v.shape)
    else:
        k, x = np.unravel_index(int(np.argmax(under)), v.shape)
    o, u_ = float(over.max()), float(under.max())
    return MaximumPrincipleReport(kind, bool(o <= slack and u_ <= slack), mx0, mn0, o, u_,
                                  float(traj.times[k]), tuple(int(c) for c in traj.lattice.coords[x]),
                                  slack)


def mass_drift(traj: Trajectory) -> float:
    """max_t |sum u(t) - sum u(0)| / N^n."""
    s = traj.values.sum(axis=1)
    return float(np.max(np.abs(s - s[0])) / traj.lattice.size)


# ------------------------------------------------------------ heat cylinder


@dataclass(frozen=True)
class ParabolicCylinder:
    """Q(Y, r) = (t1 - r^2, t1) x D(y, r), D the open L2 ball on the torus."""

    t1: float
    y: tuple
    r: float

    def __post_init__(self):
        object.__setattr__(self, "y", tuple(float(c) for c in np.atleast_1d(self.y)))
        if not self.r > 0:
            raise InvariantError("cylinder radius must be positive")
        if not self.r**2 < self.t1:
            raise InvariantError(f"need r^2 < t1, got r={self.r}, t1={self.t1}")

    @property
    def t0(self) -> float:
        return self.t1 - self.r**2

    def interior(self, lat: TorusLattice) -> np.ndarray:
        return ball_mask(lat, self.y, self.r)

    def outer_boundary(self, lat: TorusLattice) -> np.ndarray:
        return lat.outer_boundary(self.interior(lat))

    def closure(self, lat: TorusLattice) -> np.ndarray:
        D = self.interior(lat)
        return D | lat.outer_boundary(D)

    def contains(self, t, z, lat_closed_time: bool = False) -> np.ndarray:
        from .lattice import torus_distance
        t = np.asarray(t, dtype=float)
        inside_t = (t > self.t0) & ((t <= self.t1) if lat_closed_time else (t < self.t1))
        return inside_t & (torus_distance(z, np.asarray(self.y)) < self.r)

    def nearest_site(self, lat: TorusLattice) -> int:
        return lat.site_index(np.round(np.asarray(self.y) * lat.N).astype(int))


@dataclass
class CylinderSolution:
    cylinder: ParabolicCylinder
    lattice: TorusLattice
    times: np.ndarray
    values: np.ndarray          # (M, N^n), NaN off the closure
    interior: np.ndarray
    boundary: np.ndarray

    def as_trajectory(self) -> Trajectory:
        return Trajectory(self.lattice, self.times, np.nan_to_num(self.values))


def solve_heat_on_cylinder(lat: TorusLattice, Q: ParabolicCylinder, a: ConstantCoefficients,
                           boundary: Trajectory, cfl: float = CFL) -> CylinderSolution:
    """Solve (Delta_a - d/dt) v = 0 on Q_N with v = boundary on the outer parabolic boundary.

    Output nodes are the boundary trajectory's nodes inside [t1 - r^2, t1] plus the
    two ends; boundary values between nodes use 4-point Lagrange interpolation in t.
    """
    if boundary.lattice != lat:
        raise LatticeMismatchError("boundary trajectory lives on another lattice")
    if Q.t0 < boundary.times[0] - 1e-12 or Q.t1 > boundary.times[-1] + 1e-12:
        raise PreconditionError(
            f"cylinder time span [{Q.t0:.6g}, {Q.t1:.6g}] not covered by the trajectory"
        )
    D = Q.interior(lat)
    B = lat.outer_boundary(D)
    if not D.any():
        raise PreconditionError("cylinder contains no lattice site")
    ts = boundary.times
    inner = ts[(ts > Q.t0 + 1e-13) & (ts < Q.t1 - 1e-13)]
    grid = np.concatenate([[Q.t0], inner, [Q.t1]])
    table = np.ascontiguousarray(np.broadcast_to(a.values, (lat.size, 2 * lat.n)))
    N2 = float(lat.N**2)
    dt = cfl_step(lat, a.c_plus, cfl)

    def pinned(t, v):
        w = v.copy()
        w[B] = boundary.at(t, order=3)[B]
        return w

    def rhs(t, v):
        out = _kernels.edge_apply(pinned(t, v), lat.neighbors, table, N2)
        out[~D] = 0.0
        return out

    v0 = np.where(D | B, boundary.at(Q.t0, order=3), 0.0)
    _, vals = _integrate(rhs, v0, grid[-1] - grid[0], dt, grid - grid[0], t0=grid[0])
    vals = np.array([pinned(t, v) for t, v in zip(grid, vals)])
    vals[:, ~(D | B)] = np.nan
    return CylinderSolution(Q, lat, grid, vals, D, B)
