"""Hot loops of the package, each in a numba and a plain numpy flavour.

The backend is picked once at import from ``LATTICE_SCHAUDER_BACKEND``:
``numba`` forces the jitted kernels, ``numpy`` forces the vectorised
fallback, ``auto`` (default) uses numba when it imports cleanly.
Both flavours are kept bit-for-bit comparable up to summation order, and
``tests/test_kernels.py`` checks them against each other.
"""

from __future__ import annotations

import os

import numpy as np

try:
    from numba import njit

    NUMBA_AVAILABLE = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    NUMBA_AVAILABLE = False

    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]
        return lambda fn: fn


_REQUESTED = os.environ.get("LATTICE_SCHAUDER_BACKEND", "auto").strip().lower()
if _REQUESTED not in {"auto", "numba", "numpy"}:
    raise ValueError(
        f"LATTICE_SCHAUDER_BACKEND must be auto, numba or numpy, got {_REQUESTED!r}"
    )
if _REQUESTED == "numba" and not NUMBA_AVAILABLE:
    raise ImportError("LATTICE_SCHAUDER_BACKEND=numba but numba is not importable")

USE_NUMBA = NUMBA_AVAILABLE and _REQUESTED != "numpy"


def backend() -> str:
    return "numba" if USE_NUMBA else "numpy"


# ---------------------------------------------------------------- edge sums


def edge_apply_numpy(u, nbr, a, scale):
    # scale * sum_d a[x,d] (u[nbr[x,d]] - u[x])
    return scale * np.einsum("xd,xd->x", a, u[nbr] - u[:, None])


@njit(cache=True)
def edge_apply_numba(u, nbr, a, scale):
    S, D = nbr.shape
    out = np.empty(S)
    for x in range(S):
        ux = u[x]
        acc = 0.0
        for d in range(D):
            acc += a[x, d] * (u[nbr[x, d]] - ux)
        out[x] = scale * acc
    return out


def second_diff_apply_numpy(u, nbr, opp, a, scale):
    # scale * sum_d a[x,d] (2u(x) - u(x+e_d) - u(x-e_d))
    return scale * np.einsum("xd,xd->x", a, 2.0 * u[:, None] - u[nbr] - u[nbr[:, opp]])


@njit(cache=True)
def second_diff_apply_numba(u, nbr, opp, a, scale):
    S, D = nbr.shape
    out = np.empty(S)
    for x in range(S):
        ux = u[x]
        acc = 0.0
        for d in range(D):
            acc += a[x, d] * (2.0 * ux - u[nbr[x, d]] - u[nbr[x, opp[d]]])
        out[x] = scale * acc
    return out


# ------------------------------------------------------ pairwise quotients


def _torus_gap_numpy(zi, zj):
    g = np.abs(zi - zj)
    g = np.minimum(g, 1.0 - g)
    return np.sqrt(np.sum(g * g, axis=1))


def pair_quotient_max_numpy(F, t, z, ii, jj, weight_exp, alpha, time_only):
    """max over pairs of (d_i ^ d_j)^w |F_i - F_j|_max / dist^alpha.

    ``time_only`` switches the distance to |t_i - t_j| (angle brackets),
    otherwise the parabolic max(sqrt|t_i - t_j|, |z_i - z_j|) is used.
    Returns (value, argmax pair position) with -1 when nothing counted.
    """
    if ii.size == 0:
        return 0.0, -1
    diff = np.max(np.abs(F[ii] - F[jj]), axis=1)
    dt = np.abs(t[ii] - t[jj])
    if time_only:
        dist = dt
    else:
        dist = np.maximum(np.sqrt(dt), _torus_gap_numpy(z[ii], z[jj]))
    tmin = np.minimum(t[ii], t[jj])
    if weight_exp == 0.0:
        w = np.ones_like(tmin)
    else:
        w = np.sqrt(tmin) ** weight_exp
    ok = dist > 0.0
    if not ok.any():
        return 0.0, -1
    q = np.full_like(diff, -np.inf)
    q[ok] = w[ok] * diff[ok] / dist[ok] ** alpha
    k = int(np.argmax(q))
    return float(q[k]), k


@njit(cache=True)
def pair_quotient_max_numba(F, t, z, ii, jj, weight_exp, alpha, time_only):
    best = 0.0
    arg = -1
    P = ii.shape[0]
    C = F.shape[1]
    n = z.shape[1]
    for p in range(P):
        i = ii[p]
        j = jj[p]
        diff = 0.0
        for c in range(C):
            v = abs(F[i, c] - F[j, c])
            if v > diff:
                diff = v
        dt = abs(t[i] - t[j])
        if time_only:
            dist = dt
        else:
            s = 0.0
            for k in range(n):
                g = abs(z[i, k] - z[j, k])
                g2 = 1.0 - g
                if g2 < g:
                    g = g2
                s += g * g
            dist = max(np.sqrt(dt), np.sqrt(s))
        if dist <= 0.0:
            continue
        tmin = min(t[i], t[j])
        if weight_exp == 0.0:
            w = 1.0
        else:
            w = np.sqrt(tmin) ** weight_exp
        q = w * diff / dist**alpha
        if arg < 0 or q > best:
            best = q
            arg = p
    return best, arg


# -------------------------------------------------------------- dispatch

if USE_NUMBA:
    edge_apply = edge_apply_numba
    second_diff_apply = second_diff_apply_numba
    pair_quotient_max = pair_quotient_max_numba
else:
    edge_apply = edge_apply_numpy
    second_diff_apply = second_diff_apply_numpy
    pair_quotient_max = pair_quotient_max_numpy

__all__ = [
    "NUMBA_AVAILABLE",
    "USE_NUMBA",
    "backend",
    "edge_apply",
    "edge_apply_numba",
    "edge_apply_numpy",
    "pair_quotient_max",
    "pair_quotient_max_numba",
    "pair_quotient_max_numpy",
    "second_diff_apply",
    "second_diff_apply_numba",
    "second_diff_apply_numpy",
]
