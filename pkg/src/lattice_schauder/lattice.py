"""Discrete torus, difference operators and bilinear forms.

Fields are flat float64 arrays of length ``N**n`` in row-major site order;
``TorusLattice.grid`` reshapes them to ``(N,)*n`` when that is handier.
Directions are indexed ``d = 2*axis + (0 if sign > 0 else 1)``, so the
opposite of ``d`` is ``d ^ 1``.
"""

from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import _kernels
from .errors import InvariantError, LatticeMismatchError, PreconditionError


@dataclass(frozen=True, order=True)
class Direction:
    axis: int
    sign: int

    def __post_init__(self):
        if self.sign not in (1, -1):
            raise ValueError(f"sign must be +1 or -1, got {self.sign}")
        if self.axis < 0:
            raise ValueError(f"axis must be nonnegative, got {self.axis}")

    @property
    def index(self) -> int:
        return 2 * self.axis + (0 if self.sign > 0 else 1)

    @property
    def positive(self) -> bool:
        return self.sign > 0

    def __neg__(self) -> "Direction":
        return Direction(self.axis, -self.sign)

    def vector(self, n: int) -> np.ndarray:
        v = np.zeros(n, dtype=np.int64)
        v[self.axis] = self.sign
        return v

    def __repr__(self) -> str:
        return f"{'+' if self.sign > 0 else '-'}e{self.axis}"


class TorusLattice:
    """The periodic lattice {0..N-1}^n with sites scaled by 1/N."""

    def __init__(self, n: int, N: int):
        if not (1 <= int(n) <= 3):
            raise ValueError(f"dimension n must be in 1..3, got {n}")
        if int(N) < 2:
            raise ValueError(f"mesh count N must be >= 2, got {N}")
        self.n = int(n)
        self.N = int(N)
        self.shape = (self.N,) * self.n
        self.size = self.N**self.n
        self.directions = tuple(
            Direction(axis, s) for axis in range(self.n) for s in (1, -1)
        )
        self.positive_directions = tuple(d for d in self.directions if d.positive)
        idx = np.arange(self.size).reshape(self.shape)
        nbr = np.empty((self.size, 2 * self.n), dtype=np.int64)
        for d in self.directions:
            nbr[:, d.index] = np.roll(idx, -d.sign, axis=d.axis).ravel()
        nbr.setflags(write=False)
        self.neighbors = nbr
        self.opposite = np.array([d ^ 1 for d in range(2 * self.n)], dtype=np.int64)
        self.opposite.setflags(write=False)
        coords = np.indices(self.shape).reshape(self.n, -1).T.astype(np.int64)
        coords.setflags(write=False)
        self.coords = coords

    def __eq__(self, other):
        return isinstance(other, TorusLattice) and (self.n, self.N) == (other.n, other.N)

    def __hash__(self):
        return hash((self.n, self.N))

    def __repr__(self):
        return f"TorusLattice(n={self.n}, N={self.N})"

    def direction(self, axis: int, sign: int = 1) -> Direction:
        if not 0 <= axis < self.n:
            raise ValueError(f"axis {axis} out of range for n={self.n}")
        return Direction(axis, sign)

    def site_index(self, x) -> int:
        x = np.mod(np.asarray(x, dtype=np.int64), self.N)
        return int(np.ravel_multi_index(tuple(x), self.shape))

    def points(self) -> np.ndarray:
        """Continuum coordinates x/N of every site, shape (N^n, n)."""
        return self.coords / self.N

    def grid(self, u) -> np.ndarray:
        return np.asarray(u).reshape(self.shape)

    def field(self, values) -> np.ndarray:
        """Validate and flatten ``values`` into a field on this lattice."""
        u = np.asarray(values, dtype=np.float64)
        if u.shape == self.shape:
            u = u.ravel()
        if u.shape != (self.size,):
            raise LatticeMismatchError(
                f"field of shape {np.shape(values)} does not fit {self!r}"
            )
        return u

    def constant(self, c: float) -> np.ndarray:
        return np.full(self.size, float(c))

    def delta(self, x) -> np.ndarray:
        u = np.zeros(self.size)
        u[self.site_index(x)] = 1.0
        return u

    def shift(self, u, y) -> np.ndarray:
        """(tau_y u)(x) = u(x + y) for an integer shift vector y."""
        g = self.grid(self.field(u))
        y = np.asarray(y, dtype=np.int64).reshape(self.n)
        return np.roll(g, tuple(-y), axis=tuple(range(self.n))).ravel()

    def outer_boundary(self, mask) -> np.ndarray:
        """Sites outside ``mask`` having a nearest neighbour inside it."""
        mask = np.asarray(mask, dtype=bool)
        touched = mask[self.neighbors].any(axis=1)
        return touched & ~mask


class EdgeCoefficients:
    """Per-site, per-direction coefficients a[x, d] with the edge symmetry."""

    def __init__(self, lattice: TorusLattice, values, c_minus=None, c_plus=None,
                 check: bool = True, tol: float = 0.0):
        vals = np.array(values, dtype=np.float64)
        if vals.shape != (lattice.size, 2 * lattice.n):
            raise InvariantError(
                f"coefficients must have shape {(lattice.size, 2 * lattice.n)}, got {vals.shape}"
            )
        vals.setflags(write=False)
        self.lattice = lattice
        self.values = vals
        self.c_minus = float(vals.min()) if c_minus is None else float(c_minus)
        self.c_plus = float(vals.max()) if c_plus is None else float(c_plus)
        if check:
            self.check(tol)

    @classmethod
    def constant(cls, lattice: TorusLattice, a: "ConstantCoefficients | float"):
        if isinstance(a, ConstantCoefficients):
            row = a.values
        else:
            row = np.full(2 * lattice.n, float(a))
        return cls(lattice, np.tile(row, (lattice.size, 1)))

    @classmethod
    def from_edges(cls, lattice: TorusLattice, positive_values, **kw):
        """Build from values on positive edges, shape (N^n, n), filling the rest by symmetry."""
        pv = np.asarray(positive_values, dtype=np.float64)
        vals = np.empty((lattice.size, 2 * lattice.n))
        for axis in range(lattice.n):
            dp = 2 * axis
            vals[:, dp] = pv[:, axis]
            # a_{x,-e} = a_{x-e,+e}
            vals[:, dp + 1] = pv[lattice.neighbors[:, dp + 1], axis]
        return cls(lattice, vals, **kw)

    def symmetry_residual(self) -> float:
        lat = self.lattice
        mirrored = self.values[lat.neighbors, lat.opposite[None, :]]
        return float(np.max(np.abs(self.values - mirrored)))

    def check(self, tol: float = 0.0) -> None:
        res = self.symmetry_residual()
        if res > tol:
            raise InvariantError(f"edge coefficients are not symmetric (residual {res:.3e})")
        if not (self.c_minus > 0):
            raise InvariantError(f"declared lower bound c_minus={self.c_minus} is not positive")
        lo, hi = float(self.values.min()), float(self.values.max())
        slack = 1e-12 * max(1.0, abs(self.c_plus))
        if lo < self.c_minus - slack or hi > self.c_plus + slack:
            raise InvariantError(
                f"coefficients in [{lo}, {hi}] leave declared bounds [{self.c_minus}, {self.c_plus}]"
            )


class ConstantCoefficients:
    """Direction-dependent constants a_e with a_e = a_{-e}."""

    def __init__(self, lattice: TorusLattice, values):
        vals = np.array(values, dtype=np.float64).reshape(-1)
        if vals.shape != (2 * lattice.n,):
            raise InvariantError(f"need {2 * lattice.n} directional values, got {vals.shape}")
        if np.any(vals[0::2] != vals[1::2]):
            raise InvariantError("constant coefficients must satisfy a_e = a_{-e}")
        if np.any(vals <= 0):
            raise InvariantError("constant coefficients must be positive")
        vals.setflags(write=False)
        self.lattice = lattice
        self.values = vals

    @classmethod
    def from_axes(cls, lattice: TorusLattice, per_axis):
        per_axis = np.broadcast_to(np.asarray(per_axis, dtype=np.float64), (lattice.n,))
        return cls(lattice, np.repeat(per_axis, 2))

    @property
    def per_axis(self) -> np.ndarray:
        return self.values[0::2].copy()

    @property
    def c_minus(self) -> float:
        return float(self.values.min())

    @property
    def c_plus(self) -> float:
        return float(self.values.max())

    def __repr__(self):
        return f"ConstantCoefficients({self.per_axis.tolist()})"


def _same(lat: TorusLattice, *objs):
    for o in objs:
        if getattr(o, "lattice", lat) != lat:
            raise LatticeMismatchError(f"{o!r} lives on {o.lattice!r}, expected {lat!r}")


def _edge_table(lat: TorusLattice, a) -> np.ndarray:
    if isinstance(a, EdgeCoefficients):
        _same(lat, a)
        return a.values
    if isinstance(a, ConstantCoefficients):
        _same(lat, a)
        return np.ascontiguousarray(np.broadcast_to(a.values, (lat.size, 2 * lat.n)))
    arr = np.asarray(a, dtype=np.float64)
    if arr.shape == (2 * lat.n,):
        return np.ascontiguousarray(np.broadcast_to(arr, (lat.size, 2 * lat.n)))
    if arr.shape != (lat.size, 2 * lat.n):
        raise InvariantError(f"coefficient table of shape {arr.shape} does not fit {lat!r}")
    return np.ascontiguousarray(arr)


# ------------------------------------------------------------- gradients


def grad_forward(lat: TorusLattice, u, e: Direction) -> np.ndarray:
    """N (u(x+e) - u(x))."""
    u = lat.field(u)
    return lat.N * (u[lat.neighbors[:, e.index]] - u)


def grad_dual(lat: TorusLattice, u, e: Direction) -> np.ndarray:
    """N (u(x-e) - u(x)), the adjoint of grad_forward under inner_product."""
    u = lat.field(u)
    return lat.N * (u[lat.neighbors[:, (-e).index]] - u)


def grad_pair(lat: TorusLattice, u, e1: Direction, e2: Direction) -> np.ndarray:
    return grad_forward(lat, grad_forward(lat, u, e2), e1)


# ------------------------------------------------------------- operators


def laplacian(lat: TorusLattice, u) -> np.ndarray:
    u = lat.field(u)
    ones = np.ones((lat.size, 2 * lat.n))
    return _kernels.edge_apply(u, lat.neighbors, ones, float(lat.N**2))


def laplacian_dual_form(lat: TorusLattice, u) -> np.ndarray:
    """-sum_{e>0} grad_dual(grad_forward u); used to cross-check ``laplacian``."""
    out = np.zeros(lat.size)
    for e in lat.positive_directions:
        out -= grad_dual(lat, grad_forward(lat, u, e), e)
    return out


def divergence_operator(lat: TorusLattice, a: EdgeCoefficients, u) -> np.ndarray:
    """L_a u(x) = N^2 sum_{|e|=1} a_{x,e} (u(x+e) - u(x))."""
    if not isinstance(a, EdgeCoefficients):
        a = EdgeCoefficients(lat, a)
    _same(lat, a)
    return _kernels.edge_apply(lat.field(u), lat.neighbors, a.values, float(lat.N**2))


def divergence_operator_dual_form(lat: TorusLattice, a: EdgeCoefficients, u) -> np.ndarray:
    """-1/2 sum_{|e|=1} grad_dual(a_e grad_forward u, e)."""
    out = np.zeros(lat.size)
    for e in lat.directions:
        out -= 0.5 * grad_dual(lat, a.values[:, e.index] * grad_forward(lat, u, e), e)
    return out


def constant_laplacian(lat: TorusLattice, a: ConstantCoefficients, u) -> np.ndarray:
    """Delta_a u = N sum_{|e|=1} a_e grad_e u."""
    if not isinstance(a, ConstantCoefficients):
        a = ConstantCoefficients(lat, a)
    _same(lat, a)
    return _kernels.edge_apply(lat.field(u), lat.neighbors, _edge_table(lat, a), float(lat.N**2))


def constant_laplacian_forms(lat: TorusLattice, a: ConstantCoefficients, u):
    """The three equivalent expressions of Delta_a, for identity checks."""
    u = lat.field(u)
    f1 = np.zeros(lat.size)
    f2 = np.zeros(lat.size)
    f3 = np.zeros(lat.size)
    for e in lat.directions:
        ae = a.values[e.index]
        g = grad_forward(lat, u, e)
        if e.positive:
            f1 -= ae * grad_dual(lat, g, e)
        f2 -= 0.5 * grad_dual(lat, ae * g, e)
        f3 += lat.N * ae * g
    return f1, f2, f3


def nondivergence_operator(lat: TorusLattice, a, u) -> np.ndarray:
    """sum_{|e|=1} a_{x,e} grad_dual(grad_forward u, e), taken verbatim.

    grad_dual(grad_forward u) = N^2 (2u(x) - u(x+e) - u(x-e)) is a
    nonnegative second difference, so a = 1/2 gives ``-laplacian``.
    No symmetry is required of ``a``; only a >= 0.
    """
    tab = _edge_table(lat, a)
    if np.any(tab < 0):
        raise InvariantError("non-divergence coefficients must be nonnegative")
    return _kernels.second_diff_apply(
        lat.field(u), lat.neighbors, lat.opposite, tab, float(lat.N**2)
    )


def conventional_nondivergence_operator(lat: TorusLattice, a, u) -> np.ndarray:
    """Same stencil with the elliptic sign: sum a_{x,e} N^2 (u(x+e) + u(x-e) - 2u(x))."""
    return -nondivergence_operator(lat, a, u)


# -------------------------------------------------------- bilinear forms


def inner_product(lat: TorusLattice, u, v) -> float:
    return float(np.dot(lat.field(u), lat.field(v)) / lat.size)


def dirichlet_form(lat: TorusLattice, a: EdgeCoefficients, u, v) -> float:
    _same(lat, a)
    total = 0.0
    for e in lat.directions:
        total += float(np.sum(a.values[:, e.index] * grad_forward(lat, u, e) * grad_forward(lat, v, e)))
    return total / (2.0 * lat.size)


def sbp_residual(lat: TorusLattice, F, G, region, e: Direction | None = None,
                 mode: str = "plain", a=None, tol: float = 0.0) -> float:
    """|LHS - RHS| of a summation-by-parts identity on the site set ``region``.

    Modes:
      plain      sum_{x in R} F grad_dual(G, e) = sum_{x or x+e in R} grad_e F G
      weighted   same with G replaced by the site field a * G
      quadratic  sum_{x in R} F sum_{e>0} grad_dual(a_e grad_e G, e)
                   = sum_{e>0} sum_{x or x+e in R} a_{x,e} grad_e F grad_e G
    F must vanish on the outer boundary of R (checked, not imposed).
    """
    F = lat.field(F)
    G = lat.field(G)
    R = np.asarray(region, dtype=bool).reshape(lat.size)
    bnd = lat.outer_boundary(R)
    if np.any(np.abs(F[bnd]) > tol):
        worst = int(np.flatnonzero(bnd)[np.argmax(np.abs(F[bnd]))])
        raise PreconditionError(
            f"F is nonzero on the outer boundary (site {lat.coords[worst].tolist()}, value {F[worst]:.3e})"
        )
    if mode in ("plain", "weighted"):
        if e is None:
            raise ValueError(f"mode {mode!r} needs a direction")
        H = G if mode == "plain" else lat.field(a) * G
        lhs = float(np.sum(F[R] * grad_dual(lat, H, e)[R]))
        touch = R | R[lat.neighbors[:, e.index]]
        rhs = float(np.sum((grad_forward(lat, F, e) * H)[touch]))
        return abs(lhs - rhs)
    if mode == "quadratic":
        if not isinstance(a, EdgeCoefficients):
            a = EdgeCoefficients(lat, a)
        inner = np.zeros(lat.size)
        rhs = 0.0
        for d in lat.positive_directions:
            ad = a.values[:, d.index]
            inner += grad_dual(lat, ad * grad_forward(lat, G, d), d)
            touch = R | R[lat.neighbors[:, d.index]]
            rhs += float(np.sum((ad * grad_forward(lat, F, d) * grad_forward(lat, G, d))[touch]))
        lhs = float(np.sum(F[R] * inner[R]))
        return abs(lhs - rhs)
    raise ValueError(f"unknown summation-by-parts mode {mode!r}")


# -------------------------------------------------------------- distance


def torus_distance(z1, z2, metric: str = "l2"):
    """Distance on the unit torus, L2 (default) or L-infinity. Vectorised over leading axes."""
    g = np.abs(np.asarray(z1, dtype=np.float64) - np.asarray(z2, dtype=np.float64))
    g = np.mod(g, 1.0)
    g = np.minimum(g, 1.0 - g)
    if g.ndim == 0:
        return float(g)
    if metric == "l2":
        out = np.sqrt(np.sum(g * g, axis=-1))
    elif metric == "linf":
        out = np.max(g, axis=-1)
    else:
        raise ValueError(f"unknown metric {metric!r}")
    return float(out) if np.ndim(out) == 0 else out


def ball_mask(lat: TorusLattice, center, radius: float, metric: str = "l2",
              closed: bool = False) -> np.ndarray:
    d = torus_distance(lat.points(), np.asarray(center, dtype=float).reshape(1, lat.n), metric)
    return d <= radius if closed else d < radius


# --------------------------------------------------------------------- IO


def _fmt(v: float) -> str:
    return repr(float(v))


def dump_field(lat: TorusLattice, u, path) -> None:
    u = lat.field(u)
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"x{i}" for i in range(lat.n)] + ["value"])
        for x, val in zip(lat.coords, u):
            w.writerow([int(c) for c in x] + [_fmt(val)])


def load_field(path):
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    n = len(header) - 1
    if header != [f"x{i}" for i in range(n)] + ["value"] or n < 1:
        raise ValueError(f"unexpected field header {header}")
    N = round(len(body) ** (1.0 / n))
    lat = TorusLattice(n, N)
    if len(body) != lat.size:
        raise ValueError(f"{len(body)} rows do not form a lattice of dimension {n}")
    u = np.empty(lat.size)
    seen = np.zeros(lat.size, dtype=bool)
    for row in body:
        k = lat.site_index([int(c) for c in row[:n]])
        u[k] = float(row[n])
        seen[k] = True
    if not seen.all():
        raise ValueError("field CSV misses some sites")
    return lat, u


def direction_tuples(lat: TorusLattice, order: int):
    return itertools.product(lat.directions, repeat=order)
