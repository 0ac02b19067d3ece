"""Fundamental solutions of lattice parabolic operators.

Kernels use the layout ``K[x, y] = p(s, y; t, x)`` (row = target site, column
= source site), so a dense propagator P with u(t) = P u(s) gives p = N^n P.
The Levi construction freezes coefficients at the source point, corrects the
frozen kernel Z by the Volterra series Phi = sum_k (LZ)_k and is checked
against the dense RK4 oracle.
"""

from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import InvariantError, PreconditionError, QuadratureError, SizeGuardError
from .lattice import (
    ConstantCoefficients,
    Direction,
    EdgeCoefficients,
    TorusLattice,
    grad_forward,
    torus_distance,
)
from .solvers import (
    CFL,
    DENSE_GUARD,
    LinearProblem,
    Nonlinearity,
    Trajectory,
    cfl_step,
    coefficients_from_state,
    dense_evolve,
    solve_linear_divergence,
)

K_MAX = 4
MIN_NODES = 4


# ------------------------------------------------------------ operator L_t


class OperatorLt:
    """L_t u = -1/2 sum_e a_e grad*_e grad_e u + sum_e b_e grad_e u + c u.

    ``a``, ``b`` map t to (N^n, 2n) tables indexed by direction; ``c`` maps t to
    an (N^n,) field or is None. a_e = a_{-e} is required per site. The declared
    Hoelder data (alpha, C_H, D0) are carried for reporting and bound checks.
    """

    def __init__(self, lattice: TorusLattice, a: Callable, b: Callable | None = None,
                 c: Callable | None = None, c_minus: float | None = None,
                 c_plus: float | None = None, D0: float | None = None,
                 alpha: float | None = None, C_H: float | None = None,
                 check_times: Sequence[float] = (0.0,)):
        self.lattice = lattice
        self.a = a
        self.b = b
        self.c = c
        self.alpha = alpha
        self.C_H = C_H
        a0 = np.asarray(a(check_times[0] if check_times else 0.0))
        self.c_minus = float(a0.min()) if c_minus is None else float(c_minus)
        self.c_plus = float(a0.max()) if c_plus is None else float(c_plus)
        self.D0 = D0
        for t in check_times:
            self.check(t)

    @classmethod
    def constant(cls, lattice: TorusLattice, a: ConstantCoefficients) -> "OperatorLt":
        vals = np.tile(np.asarray(a.values, dtype=float), (lattice.size, 1))
        return cls(lattice, lambda t: vals, None, None, a.c_minus, a.c_plus, 0.0)

    def check(self, t: float, tol: float = 1e-12) -> None:
        lat = self.lattice
        a = np.asarray(self.a(t), dtype=float)
        if a.shape != (lat.size, 2 * lat.n):
            raise InvariantError(f"a_e table has shape {a.shape}")
        if np.max(np.abs(a - a[:, lat.opposite])) > tol:
            raise InvariantError("a_e != a_{-e}")
        if a.min() < self.c_minus - tol or a.max() > self.c_plus + tol:
            raise InvariantError(f"a_e leaves [{self.c_minus}, {self.c_plus}] at t={t}")
        if self.D0 is not None:
            for name, tab in (("b", self.b), ("c", self.c)):
                if tab is not None and np.max(np.abs(tab(t))) > self.D0 + tol:
                    raise InvariantError(f"|{name}| exceeds D0={self.D0} at t={t}")

    def frozen(self, t: float, site: int) -> ConstantCoefficients:
        """Constant coefficients a_e(t, site) for the frozen operator."""
        return ConstantCoefficients(self.lattice, np.asarray(self.a(t))[site])

    def matrix(self, t: float) -> np.ndarray:
        lat = self.lattice
        S = lat.size
        N = float(lat.N)
        a = np.asarray(self.a(t), dtype=float)
        rows = np.repeat(np.arange(S), 2 * lat.n)
        cols = lat.neighbors.ravel()
        M = np.zeros((S, S))
        # -1/2 a_e grad*_e grad_e u = 1/2 a_e N^2 (u(x+e) + u(x-e) - 2u); summing
        # over +-e gives a_e N^2 (u(x+e) - u) per direction since a_e = a_{-e}
        np.add.at(M, (rows, cols), N * N * a.ravel())
        M[np.arange(S), np.arange(S)] -= N * N * a.sum(axis=1)
        if self.b is not None:
            b = np.asarray(self.b(t), dtype=float)
            np.add.at(M, (rows, cols), N * b.ravel())
            M[np.arange(S), np.arange(S)] -= N * b.sum(axis=1)
        if self.c is not None:
            M[np.arange(S), np.arange(S)] += np.asarray(self.c(t), dtype=float)
        return M

    def apply(self, t: float, u) -> np.ndarray:
        u = self.lattice.field(u)
        lat = self.lattice
        N = float(lat.N)
        a = np.asarray(self.a(t), dtype=float)
        diff = u[lat.neighbors] - u[:, None]
        out = N * N * np.sum(a * diff, axis=1)
        if self.b is not None:
            out += N * np.sum(np.asarray(self.b(t)) * diff, axis=1)
        if self.c is not None:
            out += np.asarray(self.c(t)) * u
        return out

    def with_time_shift(self, t0: float) -> "OperatorLt":
        sh = lambda fn: None if fn is None else (lambda t: fn(t + t0))
        return OperatorLt(self.lattice, sh(self.a), sh(self.b), sh(self.c),
                          self.c_minus, self.c_plus, self.D0, self.alpha, self.C_H, check_times=())


def rewrite_divergence(a, lattice: TorusLattice | None = None) -> OperatorLt:
    """Express L_a (divergence form) as an OperatorLt.

    a_e(x) = 1/2 (a_{x-e,e} + a_{x+e,-e}) = 1/2 (a_{x,e} + a_{x,-e}),
    b_e(x) = -1/2 grad_{-e} a_{.,e}(x), c = 0.
    ``a`` is EdgeCoefficients or a callable t -> (N^n, 2n) table (then ``lattice``
    is required).
    """
    if isinstance(a, EdgeCoefficients):
        lat = a.lattice
        if a.symmetry_residual() > 1e-12:
            raise InvariantError("rewrite needs symmetric coefficients a_{x,e} = a_{x+e,-e}")
        vals = a.values
        fn = lambda t: vals
        check = (0.0,)
    elif callable(a):
        if lattice is None:
            raise PreconditionError("a callable schedule needs its lattice")
        lat, fn, check = lattice, a, (0.0,)
        EdgeCoefficients(lat, fn(0.0), tol=1e-12)
    else:
        raise TypeError("expected EdgeCoefficients or a callable schedule")
    opp = lat.opposite
    nbr = lat.neighbors
    N = float(lat.N)

    def a_e(t):
        v = np.asarray(fn(t), dtype=float)
        return 0.5 * (v + v[:, opp])

    def b_e(t):
        v = np.asarray(fn(t), dtype=float)
        d = np.arange(2 * lat.n)
        # grad_{-e} f(x) = N (f(x-e) - f(x)) with f = a_{.,e}
        back = v[nbr[:, opp], d[None, :]]
        return -0.5 * N * (back - v)

    v0 = np.asarray(fn(0.0))
    return OperatorLt(lat, a_e, b_e, None, float(v0.min()), float(v0.max()), check_times=check)


def operator_from_trajectory(traj: Trajectory, nl: Nonlinearity) -> OperatorLt:
    """Rewritten operator for the coefficients a(u(t)) along a trajectory."""
    p = LinearProblem.from_trajectory(traj, nl)
    op = rewrite_divergence(p.a, traj.lattice)
    op.c_minus, op.c_plus = p.c_minus, p.c_plus
    return op


def divergence_rewrite_residual(a: EdgeCoefficients, u) -> float:
    from .lattice import divergence_operator

    op = rewrite_divergence(a)
    return float(np.max(np.abs(op.apply(0.0, u) - divergence_operator(a.lattice, a, u))))


# -------------------------------------------------------------- kernel grid


class KernelGrid:
    """Kernels p(s, y; t_k, x) for one source time s, stored as values[k][x, y]."""

    def __init__(self, lattice: TorusLattice, s: float, times, values):
        self.lattice = lattice
        self.s = float(s)
        self.times = np.asarray(times, dtype=float)
        self.values = np.asarray(values, dtype=float)
        S = lattice.size
        if self.values.shape != (self.times.size, S, S):
            raise InvariantError(f"kernel values {self.values.shape} do not match {self.times.size} x {S} x {S}")

    def __len__(self):
        return self.times.size

    def at(self, t: float) -> np.ndarray:
        k = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[k] - t) > 1e-12:
            raise PreconditionError(f"t={t} is not a grid time")
        return self.values[k]

    def conservation_residual(self) -> float:
        """max |N^-n sum_y p(s, y; t, x) - 1| over t and x."""
        Nn = float(self.lattice.size)
        return float(np.max(np.abs(self.values.sum(axis=2) / Nn - 1.0)))

    def min_value(self) -> float:
        return float(self.values.min())

    def initial_residual(self) -> float:
        """|p(s, .; s, .) - N^n delta| when the grid starts at s."""
        if abs(self.times[0] - self.s) > 1e-14:
            raise PreconditionError("grid does not contain t = s")
        S = self.lattice.size
        return float(np.max(np.abs(self.values[0] - S * np.eye(S))))

    def dump_csv(self, path) -> None:
        lat = self.lattice
        pts = lat.coords
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["s", "t"] + [f"y{i}" for i in range(lat.n)]
                       + [f"x{i}" for i in range(lat.n)] + ["value"])
            for k, t in enumerate(self.times):
                for x in range(lat.size):
                    for y in range(lat.size):
                        w.writerow([repr(self.s), repr(float(t)), *map(int, pts[y]),
                                    *map(int, pts[x]), repr(float(self.values[k, x, y]))])

    @classmethod
    def load_csv(cls, lattice: TorusLattice, path) -> "KernelGrid":
        rows = list(csv.reader(open(path)))[1:]
        n = lattice.n
        times = sorted({float(r[1]) for r in rows})
        tix = {t: i for i, t in enumerate(times)}
        vals = np.zeros((len(times), lattice.size, lattice.size))
        s = float(rows[0][0])
        for r in rows:
            y = lattice.site_index([int(v) for v in r[2:2 + n]])
            x = lattice.site_index([int(v) for v in r[2 + n:2 + 2 * n]])
            vals[tix[float(r[1])], x, y] = float(r[-1])
        return cls(lattice, s, times, vals)


def displacement_table(lat: TorusLattice) -> np.ndarray:
    """D[x, y] = site index of x - y (mod N)."""
    g = lat.coords
    d = np.mod(g[:, None, :] - g[None, :, :], lat.N)
    idx = np.zeros(d.shape[:2], dtype=np.int64)
    for i in range(lat.n):
        idx = idx * lat.N + d[..., i]
    return idx


# ---------------------------------------------------- constant-coefficient


def _symbol(lat: TorusLattice, a: ConstantCoefficients) -> np.ndarray:
    """Eigenvalues lambda_k >= 0 of -Delta_a on the N^n grid, shaped lat.shape."""
    per = a.per_axis
    k = np.arange(lat.N)
    one = 2.0 * lat.N**2 * (1.0 - np.cos(2.0 * np.pi * k / lat.N))
    lam = np.zeros(lat.shape)
    for i in range(lat.n):
        sh = [1] * lat.n
        sh[i] = lat.N
        lam = lam + per[i] * one.reshape(sh)
    return lam


def constant_kernel(lat: TorusLattice, a: ConstantCoefficients, tau, method: str = "spectral",
                    cfl: float = CFL, derivative: bool = False) -> np.ndarray:
    """pbar(tau, x): the kernel of Delta_a started from N^n delta_0, for each tau.

    ``tau`` scalar gives shape (N^n,), a sequence gives (len, N^n). 'spectral'
    diagonalises with the FFT (exact semigroup); 'rk4' integrates the delta.
    ``derivative=True`` returns d/dtau pbar = Delta_a pbar instead (spectral only).
    """
    taus = np.atleast_1d(np.asarray(tau, dtype=float))
    if np.any(taus < 0):
        raise PreconditionError("tau must be nonnegative")
    Nn = float(lat.size)
    if method == "spectral":
        lam = _symbol(lat, a)
        out = np.empty((taus.size, lat.size))
        for i, t in enumerate(taus):
            hat = np.exp(-t * lam)
            if derivative:
                hat = -lam * hat
            out[i] = Nn * np.real(np.fft.ifftn(hat)).ravel()
    elif method == "rk4":
        if derivative:
            raise ValueError("derivative output needs the spectral method")
        out = np.empty((taus.size, lat.size))
        out[taus == 0] = Nn * lat.delta([0] * lat.n)
        pos = np.unique(taus[taus > 0])
        if pos.size:
            p = LinearProblem.constant(lat, Nn * lat.delta([0] * lat.n), a)
            tr = solve_linear_divergence(p, float(pos[-1]), samples=pos, cfl=cfl)
            for i in np.flatnonzero(taus > 0):
                out[i] = tr.values[tr.index_of(taus[i])]
    else:
        raise ValueError(f"unknown method {method!r}")
    return out[0] if np.ndim(tau) == 0 else out


def constant_kernel_grid(lat: TorusLattice, a: ConstantCoefficients, s: float, times,
                         method: str = "spectral") -> KernelGrid:
    times = np.asarray(times, dtype=float)
    pbar = constant_kernel(lat, a, times - s, method=method)
    D = displacement_table(lat)
    return KernelGrid(lat, s, times, pbar[:, D])


# ------------------------------------------------------------ Gaussian fits


def gaussian_profile(lat: TorusLattice, t, z_disp) -> np.ndarray:
    """g(t, z) = t^(-n/2) exp(-|z|^2 / t) with |z| the torus distance to 0."""
    t = np.asarray(t, dtype=float)
    r2 = torus_distance(z_disp, np.zeros((1, lat.n))) ** 2
    return t[..., None] ** (-lat.n / 2.0) * np.exp(-r2[None, :] / t[..., None])


def kernel_derivatives(lat: TorusLattice, pbar: np.ndarray, order: int) -> list[tuple[tuple, np.ndarray]]:
    """[(direction tuple, grad..grad pbar)] for all ordered tuples of length ``order``."""
    if order == 0:
        return [((), pbar)]
    out = []
    for es in itertools.product(lat.directions, repeat=order):
        f = pbar
        for e in es:
            f = np.array([grad_forward(lat, row, e) for row in np.atleast_2d(f)])
        out.append((tuple(e.index for e in es), f.reshape(pbar.shape)))
    return out


@dataclass
class GaussianFit:
    order: int
    c: float
    k: float
    calibration_taus: np.ndarray
    validation_taus: np.ndarray
    violations: int
    worst_ratio: float
    floor: float
    by_direction: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.violations == 0

    def __str__(self):
        return (f"order {self.order}: c={self.c:.6g}, k={self.k:.6g}, "
                f"validation violations={self.violations} (worst ratio {self.worst_ratio:.4f})")


def tau_grids(lat: TorusLattice, a: ConstantCoefficients, tau_max: float, points: int = 24):
    """Interleaved geometric calibration and validation grids starting at one dt."""
    dt = cfl_step(lat, a.c_plus)
    g = np.geomspace(dt, tau_max, 2 * points)
    return g[0::2], g[1::2]


def _ratios(lat, series, taus, order, k, floor):
    disp = lat.points()
    g = gaussian_profile(lat, k * taus, disp) * taus[:, None] ** (-order / 2.0)
    return np.abs(series) / g, np.abs(series) > floor


def kernel_gradient_bounds_check(lat: TorusLattice, a: ConstantCoefficients, order: int,
                                 tau_max: float = 0.1, points: int = 24, margin: float = 1.1,
                                 floor_rel: float = 1e-10, k_grid=None) -> GaussianFit:
    """Fit |grad^order pbar(tau, x)| <= c tau^(-order/2) g(k tau, x/N), then validate.

    (c, k) are fitted on the calibration grid: for each k in ``k_grid`` the
    smallest admissible c is the max ratio, and the k with the smallest c wins.
    c is inflated by ``margin``. Values below ``floor_rel * N^n`` are treated as
    numerical zero. Violations are counted on the disjoint validation grid.
    """
    if order not in (0, 1, 2):
        raise ValueError("order must be 0, 1 or 2")
    cal, val = tau_grids(lat, a, tau_max, points)
    floor = floor_rel * lat.size
    if k_grid is None:
        # lattice tails at small tau need k well above the continuum value 4 c_+
        k_grid = 4.0 * a.c_plus * 2.0 ** (np.arange(17) / 2.0)
    pc = constant_kernel(lat, a, cal)
    pv = constant_kernel(lat, a, val)
    dc = kernel_derivatives(lat, pc, order)
    dv = kernel_derivatives(lat, pv, order)
    best = None
    for k in k_grid:
        cmax = 0.0
        for _, f in dc:
            r, ok = _ratios(lat, f, cal, order, k, floor)
            if ok.any():
                cmax = max(cmax, float(r[ok].max()))
        if best is None or cmax < best[0]:
            best = (cmax, float(k))
    c = best[0] * margin
    k = best[1]
    viol, worst, per = 0, 0.0, {}
    for key, f in dv:
        r, ok = _ratios(lat, f, val, order, k, floor)
        r = np.where(ok, r, 0.0)
        viol += int(np.sum(r > c))
        w = float(r.max() / c) if c > 0 else 0.0
        worst = max(worst, w)
        per[key] = float(np.abs(f).max())
    return GaussianFit(order, c, k, cal, val, viol, worst, floor, per)


def aronson_fit(lat: TorusLattice, a: ConstantCoefficients, **kw) -> GaussianFit:
    return kernel_gradient_bounds_check(lat, a, 0, **kw)


# ---------------------------------------------------------- Levi parametrix


def _check_dense(lat: TorusLattice):
    if lat.size > DENSE_GUARD:
        raise SizeGuardError(f"dense kernels need N^n <= {DENSE_GUARD}, got {lat.size}")


def trapezoid_weights(times: np.ndarray, j: int, i: int) -> np.ndarray:
    """Composite trapezoid weights on nodes j..i (zeros elsewhere)."""
    w = np.zeros(times.size)
    if i <= j:
        return w
    h = np.diff(times[j:i + 1])
    w[j:i] += 0.5 * h
    w[j + 1:i + 1] += 0.5 * h
    return w


@dataclass
class LeviSeries:
    """Tabulations on the time grid t_0 < ... < t_M, blocks [i, j] for t_i >= t_j.

    Z[i, j] and LZ[i, j] are (N^n, N^n) matrices [x, z]; terms[k-1][i, j] is
    (LZ)_k restricted to the requested source indices; phi = sum of the terms.
    """

    op: OperatorLt
    times: np.ndarray
    sources: tuple
    Z: np.ndarray
    LZ: np.ndarray
    terms: list
    phi: np.ndarray

    @property
    def k_max(self) -> int:
        return len(self.terms)

    def term_norms(self) -> np.ndarray:
        """sup-norm of each (LZ)_k over the tabulation."""
        return np.array([float(np.max(np.abs(t))) for t in self.terms])

    def partial_sum_increments(self) -> np.ndarray:
        """sup |Phi_k - Phi_{k-1}| for k = 2..k_max (equal to sup |(LZ)_k|)."""
        return self.term_norms()[1:]

    def ratio_test(self) -> np.ndarray:
        n = self.term_norms()
        with np.errstate(divide="ignore", invalid="ignore"):
            return n[1:] / n[:-1]


def frozen_kernel_tables(op: OperatorLt, times: np.ndarray):
    """Z[i, j][x, z] = pbar_{a(t_j, z)}(t_i - t_j, x - z) and LZ = (L_{t_i} - Delta_frozen) Z."""
    lat = op.lattice
    S = lat.size
    M = times.size
    D = displacement_table(lat)
    Z = np.zeros((M, M, S, S))
    dZ = np.zeros((M, M, S, S))
    for j in range(M):
        a_j = np.asarray(op.a(times[j]))
        taus = times[j:] - times[j]
        cache = {}
        for z in range(S):
            key = tuple(np.round(a_j[z], 15))
            if key not in cache:
                cc = ConstantCoefficients(lat, a_j[z])
                cache[key] = (constant_kernel(lat, cc, taus),
                              constant_kernel(lat, cc, taus, derivative=True))
            pb, dpb = cache[key]
            Z[j:, j, :, z] = pb[:, D[:, z]]
            dZ[j:, j, :, z] = dpb[:, D[:, z]]
    LZ = np.zeros_like(Z)
    for i in range(M):
        Mi = op.matrix(times[i])
        for j in range(i + 1):
            LZ[i, j] = Mi @ Z[i, j] - dZ[i, j]
    return Z, LZ


def levi_iterate(op: OperatorLt, times, k_max: int = K_MAX, sources=None) -> LeviSeries:
    """Partial sum Phi = sum_{k<=k_max} (LZ)_k with composite trapezoid in time.

    (LZ)_{k+1}[i, j] = sum_m w_m N^-n LZ[i, m] (LZ)_k[m, j] over nodes m in [j, i].
    The grid must have at least four nodes.
    """
    if k_max < 1:
        raise ValueError("k_max must be >= 1")
    lat = op.lattice
    _check_dense(lat)
    times = np.asarray(times, dtype=float)
    if times.size < MIN_NODES:
        raise QuadratureError(f"need at least {MIN_NODES} time nodes, got {times.size}")
    if np.any(np.diff(times) <= 0):
        raise QuadratureError("time nodes must increase strictly")
    M = times.size
    sources = tuple(range(M)) if sources is None else tuple(int(j) for j in sources)
    Z, LZ = frozen_kernel_tables(op, times)
    inv = 1.0 / lat.size
    cur = np.zeros((M, len(sources), lat.size, lat.size))
    for c, j in enumerate(sources):
        cur[j:, c] = LZ[j:, j]
    terms = [cur.copy()]
    for _ in range(k_max - 1):
        nxt = np.zeros_like(cur)
        for c, j in enumerate(sources):
            for i in range(j + 1, M):
                w = trapezoid_weights(times, j, i)
                acc = np.zeros((lat.size, lat.size))
                for m in range(j, i + 1):
                    if w[m] != 0.0:
                        acc += w[m] * (LZ[i, m] @ cur[m, c])
                nxt[i, c] = inv * acc
        terms.append(nxt)
        cur = nxt
    phi = np.sum(terms, axis=0)
    return LeviSeries(op, times, sources, Z, LZ, terms, phi)


def assemble_parametrix(series: LeviSeries, source: int = 0) -> KernelGrid:
    """p[i] = Z[i, j] + sum_m w_m N^-n Z[i, m] Phi[m, j] for the source node j."""
    if source not in series.sources:
        raise PreconditionError(f"source node {source} was not tabulated")
    c = series.sources.index(source)
    times = series.times
    lat = series.op.lattice
    inv = 1.0 / lat.size
    out = []
    for i in range(source, times.size):
        w = trapezoid_weights(times, source, i)
        acc = series.Z[i, source].copy()
        for m in range(source, i + 1):
            if w[m] != 0.0:
                acc += inv * w[m] * (series.Z[i, m] @ series.phi[m, c])
        out.append(acc)
    return KernelGrid(lat, times[source], times[source:], np.array(out))


def parametrix_kernel(op: OperatorLt, s: float, t: float, nodes: int, k_max: int = K_MAX,
                      quadrature: str = "trapezoid") -> KernelGrid:
    """Parametrix on a uniform grid of ``nodes`` nodes on [s, t], source s.

    quadrature='richardson' also runs the grid with 2 nodes - 1 nodes and returns
    (4 p_{h/2} - p_h) / 3 on the coarse times, removing the O(h^2) trapezoid error.
    """
    times = np.linspace(s, t, nodes)
    coarse = assemble_parametrix(levi_iterate(op, times, k_max, sources=(0,)), 0)
    if quadrature == "trapezoid":
        return coarse
    if quadrature != "richardson":
        raise ValueError(f"unknown quadrature {quadrature!r}")
    fine = assemble_parametrix(levi_iterate(op, np.linspace(s, t, 2 * nodes - 1), k_max, sources=(0,)), 0)
    vals = (4.0 * fine.values[::2] - coarse.values) / 3.0
    return KernelGrid(op.lattice, s, times, vals)


# --------------------------------------------------------------- oracles


def oracle_kernel(op: OperatorLt, s: float, times, cfl: float = CFL, dt_factor: float = 1.0) -> KernelGrid:
    """N^n P_{s,t} from the dense RK4 propagator P' = M(t) P."""
    lat = op.lattice
    _check_dense(lat)
    times = np.asarray(times, dtype=float)
    dt = dt_factor * cfl / (4.0 * lat.n * lat.N**2 * max(op.c_plus, 1e-300)
                            + (2.0 * lat.N * _b_bound(op, s) if op.b is not None else 0.0))
    t_end = float(times.max())
    _, saved = dense_evolve(op.matrix, lat.size, s, t_end, dt, checkpoints=times)
    vals = [lat.size * (np.eye(lat.size) if abs(t - s) < 1e-15 else saved[float(t)]) for t in times]
    return KernelGrid(lat, s, times, np.array(vals))


def _b_bound(op: OperatorLt, t: float) -> float:
    return float(np.max(np.abs(op.b(t)))) if op.b is not None else 0.0


def adjoint_kernel(op: OperatorLt, s: float, t: float, cfl: float = CFL, dt_factor: float = 1.0) -> np.ndarray:
    """p*(s, y; t, x) as a matrix [x, y] from the backward problem (L*_sigma + d_sigma) p* = 0.

    With tau = t - sigma the terminal-value problem becomes dQ/dtau = M(t - tau)^T Q,
    Q(0) = N^n I, where Q[y, x] = p*(t - tau, y; t, x).
    """
    lat = op.lattice
    _check_dense(lat)
    if t < s:
        raise PreconditionError("need s <= t")
    Nn = float(lat.size)
    if t == s:
        return Nn * np.eye(lat.size)
    dt = dt_factor * cfl / (4.0 * lat.n * lat.N**2 * max(op.c_plus, 1e-300)
                            + (2.0 * lat.N * _b_bound(op, s) if op.b is not None else 0.0))
    Q, _ = dense_evolve(lambda tau: op.matrix(t - tau).T, lat.size, 0.0, t - s, dt,
                        P0=Nn * np.eye(lat.size))
    return Q.T


def duality_residual(op: OperatorLt, s: float, t: float, cfl: float = CFL) -> float:
    """sup |p - p*| with p from forward solves of deltas and p* from backward ones."""
    p = oracle_kernel(op, s, [t], cfl).values[0]
    q = adjoint_kernel(op, s, t, cfl)
    return float(np.max(np.abs(p - q)))


def chapman_kolmogorov_residual(p_sr: np.ndarray, p_rt: np.ndarray, p_st: np.ndarray) -> float:
    """sup |p(s,y;t,x) - N^-n sum_z p(r,z;t,x) p(s,y;r,z)|."""
    Nn = p_sr.shape[0]
    return float(np.max(np.abs(p_st - (p_rt @ p_sr) / Nn)))


def sup_error(a: KernelGrid, b: KernelGrid) -> float:
    if a.values.shape != b.values.shape or np.max(np.abs(a.times - b.times)) > 1e-12:
        raise PreconditionError("kernel grids are not compatible")
    return float(np.max(np.abs(a.values - b.values)))


# ------------------------------------------------ commutator and expansion


def commutator_terms(lat: TorusLattice, u, nl: Nonlinearity, e: Direction):
    """(lhs, rhs) of grad_e L_a u = L_a grad_e u + sum_{e'>0} grad_{e'}(grad_e A_{e'} tau_{e-e'} grad_{e'} u),
    with a = a(u) and A_{e'}(x) = a_{x-e',e'}.
    """
    from .lattice import divergence_operator

    u = lat.field(u)
    a = coefficients_from_state(lat, u, nl)
    lhs = grad_forward(lat, divergence_operator(lat, a, u), e)
    rhs = divergence_operator(lat, a, grad_forward(lat, u, e))
    for ep in lat.positive_directions:
        A = nl.quotient(u, u[lat.neighbors[:, (-ep).index]])
        g = grad_forward(lat, u, ep)
        # tau_{e-e'} g(x) = g(x + e - e')
        shifted = g[lat.neighbors[lat.neighbors[:, e.index], (-ep).index]]
        rhs = rhs + grad_forward(lat, grad_forward(lat, A, e) * shifted, ep)
    return lhs, rhs


def commutator_residual(lat: TorusLattice, u, nl: Nonlinearity, e: Direction, relative: bool = False) -> float:
    lhs, rhs = commutator_terms(lat, u, nl, e)
    err = float(np.max(np.abs(lhs - rhs)))
    if relative:
        err /= max(1.0, float(np.max(np.abs(lhs))))
    return err


def coefficient_gradient_bound(lat: TorusLattice, u, nl: Nonlinearity, e: Direction, ep: Direction,
                               rtol: float = 1e-9):
    """|grad_e a_{x-e',e'}(u)| <= 1/2 ||phi''|| (|grad_e u(x)| + |grad_e u(x-e')|).

    Returns (violations, max ratio lhs/rhs).
    """
    u = lat.field(u)
    back = lat.neighbors[:, (-ep).index]
    A = nl.quotient(u, u[back])
    lhs = np.abs(grad_forward(lat, A, e))
    g = np.abs(grad_forward(lat, u, e))
    rhs = 0.5 * nl.phi2_norm * (g + g[back])
    slack = rtol * max(1.0, float(rhs.max()))
    viol = int(np.sum(lhs > rhs + slack))
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(rhs > 0, lhs / np.where(rhs > 0, rhs, 1.0), 0.0)
    return viol, float(ratio.max())


def _phi3_range(nl: Nonlinearity, lo, hi, points: int = 65):
    lo, hi = np.minimum(lo, hi), np.maximum(lo, hi)
    s = np.linspace(0.0, 1.0, points)
    v = np.asarray(nl.d3phi(lo[..., None] + s * (hi - lo)[..., None]), dtype=float)
    v = v * np.ones(lo.shape + (points,))
    return v.min(axis=-1), v.max(axis=-1)


@dataclass
class ExpansionCheck:
    lhs: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    violations: int
    max_excess: float
    width: float

    @property
    def passed(self) -> bool:
        return self.violations == 0


def second_expansion_residual(lat: TorusLattice, u, nl: Nonlinearity, e1: Direction, e2: Direction,
                              ep: Direction, rtol: float = 1e-8) -> ExpansionCheck:
    """Enclose grad_{e1} grad_{e2} A_{e'} with A_{e'}(x) = a_{x-e',e'}(u).

    Exact part: -1/2 phi''(u(x)) [DD u(x) - DD u(x-e')] + phi''(u(x+e1)) DD u(x)
    with DD = grad_{e1} grad_{e2}. The third-order remainders are linear in
    phi''' at unknown intermediate states; each is ranged over its state
    interval and the resulting bounds are summed.
    """
    u = lat.field(u)
    N = float(lat.N)
    nb = lat.neighbors
    x = np.arange(lat.size)
    x1 = nb[x, e1.index]
    x2 = nb[x, e2.index]
    x12 = nb[x1, e2.index]
    back = lambda idx: nb[idx, (-ep).index]
    A = nl.quotient(u, u[back(x)])
    lhs = N * N * (A[x12] - A[x1] - A[x2] + A[x])

    DD = grad_forward(lat, grad_forward(lat, u, e2), e1)
    exact = (-0.5 * nl.d2phi(u) * (DD - DD[back(x)])
             + nl.d2phi(u[x1]) * DD)

    terms = []   # (coefficient, interval lo, interval hi)
    Dm = lambda z: N * (u[back(z)] - u[z])          # grad_{-e'} u(z)
    for sgn, z in ((1.0, x12), (-1.0, x2), (-1.0, x1), (1.0, x)):
        terms.append((sgn * Dm(z) ** 2 / 6.0, u[z], u[back(z)]))
    g2 = lambda z: N * (u[nb[z, e2.index]] - u[z])
    g1 = N * (u[x1] - u)
    terms.append((0.5 * g2(x1) ** 2, u[x1], u[x12]))
    terms.append((-0.5 * g2(x) ** 2, u, u[x2]))
    terms.append((g1 * g2(x), u, u[x1]))
    for sgn, z in ((1.0, x12), (-1.0, x2), (-1.0, x1)):
        terms.append((0.5 * sgn * N * (u[z] - u) * Dm(z), u, u[z]))

    lower = exact.copy()
    upper = exact.copy()
    for coef, lo, hi in terms:
        pmin, pmax = _phi3_range(nl, lo, hi)
        lower += np.minimum(coef * pmin, coef * pmax)
        upper += np.maximum(coef * pmin, coef * pmax)
    scale = max(1.0, float(np.max(np.abs(lhs))))
    slack = rtol * scale
    excess = np.maximum(lower - lhs, lhs - upper)
    viol = int(np.sum(excess > slack))
    return ExpansionCheck(lhs, lower, upper, viol, float(excess.max()), float(np.max(upper - lower)))
