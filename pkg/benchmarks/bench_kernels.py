"""Time the numba and numpy flavours of the hot loops.

    python3 benchmarks/bench_kernels.py [--repeat 20]
"""

import argparse
import time

import numpy as np

from lattice_schauder import _kernels as K
from lattice_schauder.lattice import TorusLattice


def best_of(fn, repeat):
    fn()  # warm-up, includes jit compilation
    out = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        out.append(time.perf_counter() - t0)
    return min(out)


def cases(rng):
    for n, N in ((1, 64), (1, 1024), (2, 64), (2, 256)):
        lat = TorusLattice(n, N)
        u = rng.normal(size=lat.size)
        a = rng.uniform(0.5, 2.0, (lat.size, 2 * n))
        s = float(N * N)
        yield f"edge_apply n={n} N={N}", (
            lambda: K.edge_apply_numba(u, lat.neighbors, a, s),
            lambda: K.edge_apply_numpy(u, lat.neighbors, a, s))
        yield f"second_diff_apply n={n} N={N}", (
            lambda: K.second_diff_apply_numba(u, lat.neighbors, lat.opposite, a, s),
            lambda: K.second_diff_apply_numpy(u, lat.neighbors, lat.opposite, a, s))
    P = 4000
    F = rng.normal(size=(P, 2))
    t = rng.uniform(0.01, 0.1, P)
    z = rng.uniform(0, 1, (P, 2))
    for pairs in (10_000, 200_000):
        ii = rng.integers(0, P, pairs)
        jj = rng.integers(0, P, pairs)
        yield f"pair_quotient_max pairs={pairs}", (
            lambda: K.pair_quotient_max_numba(F, t, z, ii, jj, 1.0, 0.5, False),
            lambda: K.pair_quotient_max_numpy(F, t, z, ii, jj, 1.0, 0.5, False))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    print(f"{'kernel':40s} {'numba [ms]':>12s} {'numpy [ms]':>12s} {'speed-up':>9s}")
    for name, (fast, ref) in cases(rng):
        tf = best_of(fast, args.repeat)
        tr = best_of(ref, args.repeat)
        print(f"{name:40s} {1e3 * tf:12.4f} {1e3 * tr:12.4f} {tr / tf:9.2f}")


if __name__ == "__main__":
    main()
