"""Polylinear extension of lattice fields to the continuum torus."""

from __future__ import annotations

import itertools

import numpy as np

from .lattice import Direction, TorusLattice, grad_forward

_SNAP = 1e-12


def _cell(lat: TorusLattice, z):
    """Lower corner [Nz] (as integer coords) and fractional part {Nz} per axis.

    Coordinates within 1e-12 of a lattice plane are snapped onto it. A point
    on a face then belongs to the box above the face and lattice values are
    reproduced exactly.
    """
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    if z.shape[1] != lat.n:
        raise ValueError(f"points must have {lat.n} coordinates, got shape {z.shape}")
    s = z * lat.N
    r = np.round(s)
    s = np.where(np.abs(s - r) <= _SNAP * lat.N, r, s)
    base = np.floor(s)
    frac = s - base
    return np.mod(base.astype(np.int64), lat.N), frac


def _corner_index(lat: TorusLattice, base, v) -> np.ndarray:
    idx = np.zeros(base.shape[0], dtype=np.int64)
    for i in range(lat.n):
        idx = idx * lat.N + np.mod(base[:, i] + v[i], lat.N)
    return idx


def corner_weights(lat: TorusLattice, z):
    """Site indices (P, 2^n) and weights theta(v, z) (P, 2^n) of the 2^n corners."""
    base, frac = _cell(lat, z)
    corners = list(itertools.product((0, 1), repeat=lat.n))
    idx = np.empty((base.shape[0], len(corners)), dtype=np.int64)
    w = np.ones((base.shape[0], len(corners)))
    for c, v in enumerate(corners):
        idx[:, c] = _corner_index(lat, base, v)
        for i in range(lat.n):
            w[:, c] *= frac[:, i] if v[i] else 1.0 - frac[:, i]
    return idx, w


class InterpolatedField:
    """u~(z) = sum_v theta(v, z) u([Nz] + v)."""

    def __init__(self, lattice: TorusLattice, base):
        self.lattice = lattice
        self.base = lattice.field(base).copy()
        self.base.setflags(write=False)

    def __call__(self, z):
        idx, w = corner_weights(self.lattice, z)
        out = np.sum(w * self.base[idx], axis=1)
        return out if np.ndim(z) > 1 else out[0]

    def partial(self, i: int, z):
        return interp_partial(self.lattice, self.base, i, z)

    def grad(self, e: Direction) -> "InterpolatedField":
        """Interpolation of grad_e u; equals grad_e of the interpolation."""
        return InterpolatedField(self.lattice, grad_forward(self.lattice, self.base, e))


def interpolate(lat: TorusLattice, u) -> InterpolatedField:
    return InterpolatedField(lat, u)


def interp_partial(lat: TorusLattice, u, i: int, z):
    """d/dz_i of the interpolation: a convex combination of grad_{e_i} u on the cell.

    On a face orthogonal to axis i the value from the cell above the face is
    returned (the fractional-part convention).
    """
    u = lat.field(u)
    g = grad_forward(lat, u, Direction(i, 1))
    base, frac = _cell(lat, z)
    out = np.zeros(base.shape[0])
    for v in itertools.product((0, 1), repeat=lat.n):
        if v[i]:
            continue
        w = np.ones(base.shape[0])
        for j in range(lat.n):
            if j != i:
                w *= frac[:, j] if v[j] else 1.0 - frac[:, j]
        out += w * g[_corner_index(lat, base, v)]
    return out if np.ndim(z) > 1 else out[0]


def grad_commute_residual(lat: TorusLattice, u, e: Direction, z) -> float:
    """max |interp(grad_e u)(z) - N (u~(z + e/N) - u~(z))| over the points z."""
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    ut = InterpolatedField(lat, u)
    lhs = InterpolatedField(lat, grad_forward(lat, u, e))(z)
    shifted = np.mod(z + e.vector(lat.n) / lat.N, 1.0)
    rhs = lat.N * (ut(shifted) - ut(z))
    return float(np.max(np.abs(lhs - rhs)))


def stratified_points(lat: TorusLattice, m: int = 4, offset: float = 0.0) -> np.ndarray:
    """Tensor grid with m points per axis per cell at (k + offset)/(mN).

    offset = 0 contains every lattice point; offset = 0.5 gives cell midpoints
    of the refined grid.
    """
    if m < 1:
        raise ValueError("need m >= 1")
    g = (np.arange(m * lat.N) + offset) / (m * lat.N)
    mesh = np.meshgrid(*([g] * lat.n), indexing="ij")
    return np.stack([c.ravel() for c in mesh], axis=1)


class PointEvaluator:
    """Evaluate interpolations of many fields at one fixed point set.

    Corner indices and weights are computed once; calling with an array of
    shape (..., N^n) returns (..., P).
    """

    def __init__(self, lat: TorusLattice, z):
        self.lattice = lat
        self.points = np.atleast_2d(np.asarray(z, dtype=np.float64))
        self.idx, self.w = corner_weights(lat, self.points)

    def __call__(self, F) -> np.ndarray:
        F = np.asarray(F, dtype=np.float64)
        return np.sum(F[..., self.idx] * self.w, axis=-1)
