import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from lattice_schauder.errors import HypothesisError, InvariantError, PreconditionError
from lattice_schauder.lattice import TorusLattice, torus_distance
from lattice_schauder.norms import (
    SeminormSpec,
    SpaceTimeSampleSet,
    _tri_pairs,
    campanato_decay_constants,
    campanato_profile,
    ck_norm,
    derivative_fields,
    envelope_fit,
    fit_holder_exponent,
    holder_seminorm,
    interpolation_inequality_check,
    iteration_bound,
    iteration_constant,
    max_derivative,
    oscillation,
    oscillation_constants,
    time_seminorm,
    weighted_sup,
)
from lattice_schauder.solvers import Nonlinearity, ParabolicCylinder, Trajectory, solve_quasilinear


def traj_from(lat, times, fn):
    x = lat.points()
    return Trajectory(lat, times, [fn(t, x) for t in times])


def heat_run(N=16, T=0.1, samples=20):
    lat = TorusLattice(1, N)
    x = lat.points()[:, 0]
    u0 = np.sin(2 * np.pi * x) + 0.3 * np.cos(6 * np.pi * x)
    return solve_quasilinear(Nonlinearity.heat(), lat, u0, T, samples=samples)


# --------------------------------------------------------------- C^k norms


def test_ck_norm_of_a_delta():
    lat = TorusLattice(1, 4)
    d = lat.delta([1])
    assert ck_norm(lat, d, 0) == 1.0
    assert ck_norm(lat, d, 1) == 1.0 + 4 + 4
    assert len(derivative_fields(lat, d, 2)) == 4
    # grad_e grad_{-e} of a delta peaks at 2 N^2
    assert max_derivative(lat, d, 2) == pytest.approx(32.0)
    with pytest.raises(ValueError):
        ck_norm(lat, d, 5)


def test_first_difference_of_a_sine():
    # 2N sin(pi/N) times the largest midpoint cosine, cos(pi/N)
    for N in (8, 64, 256):
        lat = TorusLattice(1, N)
        u = np.sin(2 * np.pi * lat.points()[:, 0])
        assert max_derivative(lat, u, 1) == pytest.approx(N * np.sin(2 * np.pi / N), rel=1e-12)


# -------------------------------------------------------------- seminorms


def test_seminorm_spec_validation():
    with pytest.raises(InvariantError):
        SeminormSpec(1.5, 0.0, "bracket", 0)
    with pytest.raises(InvariantError):
        SeminormSpec(2.5, 0.0, "angle")
    with pytest.raises(ValueError):
        SeminormSpec(0.5, 0.0, "other")
    s = SeminormSpec(1.4, -0.5, "bracket", 1)
    assert s.weight_exponent == pytest.approx(0.9)
    assert SeminormSpec(0.5, None).weight_exponent == 0.0
    assert "unweighted" in SeminormSpec(0.5, None).label


@given(st.integers(2, 40))
def test_tri_pairs_enumerates_the_upper_triangle(n):
    i, j = _tri_pairs(np.arange(n * (n - 1) // 2), n)
    ref_i, ref_j = np.triu_indices(n, 1)
    np.testing.assert_array_equal(i, ref_i)
    np.testing.assert_array_equal(j, ref_j)


def brute_bracket(traj, alpha, wexp):
    lat = traj.lattice
    pts = lat.points()
    best = 0.0
    samples = [(t, z, v) for t, vals in zip(traj.times, traj.values) for z, v in zip(pts, vals)]
    for (t1, z1, v1), (t2, z2, v2) in itertools.combinations(samples, 2):
        d = max(math.sqrt(abs(t1 - t2)), float(torus_distance(z1, z2)))
        if d > 0:
            best = max(best, math.sqrt(min(t1, t2)) ** wexp * abs(v1 - v2) / d**alpha)
    return best


@pytest.mark.parametrize("alpha,b", [(0.5, None), (1.0, 0.0), (0.3, -0.3), (0.7, 0.5)])
def test_holder_seminorm_matches_brute_force(alpha, b):
    lat = TorusLattice(1, 8)
    tr = traj_from(lat, [0.02, 0.05, 0.09],
                   lambda t, x: np.exp(-t) * np.sin(2 * np.pi * x[:, 0]) + t * x[:, 0] ** 2)
    S = SpaceTimeSampleSet.lattice_points(tr)
    spec = SeminormSpec(alpha, b)
    assert holder_seminorm(S, spec) == pytest.approx(brute_bracket(tr, alpha, spec.weight_exponent),
                                                     rel=1e-12)


def test_time_seminorm_of_linear_growth():
    lat = TorusLattice(1, 4)
    c = np.array([1.0, -2.0, 0.5, 0.0])
    tr = Trajectory(lat, [0.01, 0.04, 0.09], [t * c for t in (0.01, 0.04, 0.09)])
    S = SpaceTimeSampleSet.lattice_points(tr)
    # order 2: |dt| |c| / |dt| = |c|
    assert time_seminorm(S, SeminormSpec(2.0, None, "angle")) == pytest.approx(2.0)
    # weighted: sqrt(t ^ s)^(a+b) with a + b = 1, max at the pair (0.04, 0.09)
    assert time_seminorm(S, SeminormSpec(2.0, -1.0, "angle")) == pytest.approx(0.2 * 2.0)


def test_weighted_sup():
    lat = TorusLattice(1, 4)
    tr = Trajectory(lat, [0.0, 0.25, 1.0], np.ones((3, 4)) * np.array([[1.0], [2.0], [1.0]]))
    S = SpaceTimeSampleSet.lattice_points(tr)
    assert weighted_sup(S, 0.0) == 2.0
    assert weighted_sup(S, 1.0) == pytest.approx(1.0)
    # negative weights skip t = 0
    assert weighted_sup(S, -1.0) == pytest.approx(4.0)
    assert holder_seminorm(S, SeminormSpec(0.5, 1.0, "sup")) == pytest.approx(1.0)


def test_sample_set_policies_and_cap():
    lat = TorusLattice(1, 6)
    tr = traj_from(lat, [0.1, 0.2, 0.3], lambda t, x: t + x[:, 0])
    S = SpaceTimeSampleSet.lattice_points(tr, policy=("same_time", "same_site"))
    ii, jj = S.pairs()
    assert ii.size == 3 * 15 + 6 * 3
    same_t = S.t[ii] == S.t[jj]
    same_z = np.all(S.z[ii] == S.z[jj], axis=1)
    assert np.all(same_t ^ same_z)
    capped = SpaceTimeSampleSet.lattice_points(tr, max_pairs=10, seed=3)
    a = capped.pairs()
    b = SpaceTimeSampleSet.lattice_points(tr, max_pairs=10, seed=3).pairs()
    assert a[0].size == 10
    np.testing.assert_array_equal(a[0], b[0])
    with pytest.raises(PreconditionError):
        SpaceTimeSampleSet(tr, np.array([[0.01]]))
    with pytest.raises(ValueError):
        SpaceTimeSampleSet.lattice_points(tr, policy="diagonal")


def test_interpolated_samples_agree_on_lattice_points():
    lat = TorusLattice(2, 4)
    tr = traj_from(lat, [0.1, 0.2], lambda t, x: t * np.cos(2 * np.pi * x[:, 0]) + x[:, 1])
    A = SpaceTimeSampleSet(tr, lat.points(), interpolated=True)
    B = SpaceTimeSampleSet.lattice_points(tr)
    np.testing.assert_allclose(A.values(1), B.values(1), atol=1e-12)


def test_oscillation_on_cylinder():
    lat = TorusLattice(1, 16)
    tr = traj_from(lat, np.linspace(0.05, 0.1, 6), lambda t, x: np.sin(2 * np.pi * x[:, 0]))
    Q = ParabolicCylinder(0.1, (0.25,), 0.1)
    # sites 3/16..5/16 are inside the open ball of radius 0.1
    expected = 1.0 - math.sin(2 * math.pi * 3 / 16)
    assert oscillation(tr, Q) == pytest.approx(expected)
    assert oscillation(tr, Q, use_interpolation=True) >= expected - 1e-12
    with pytest.raises(PreconditionError):
        oscillation(tr, ParabolicCylinder(0.04, (0.25,), 0.1))


# -------------------------------------------------------------- Campanato


def test_campanato_profile_is_monotone_and_vanishes_on_constants():
    tr = heat_run()
    prof = campanato_profile(tr, (0.1, 0.5), [0.03, 0.06, 0.1, 0.15])
    assert prof.monotone and np.all(np.diff(prof.omega) >= 0)
    assert prof.means.shape == (4, 1)
    const = tr.map(lambda v: np.full_like(v, 2.0))
    flat = campanato_profile(const, (0.1, 0.5), [0.05, 0.1], fields=const.values)
    np.testing.assert_allclose(flat.omega, 0.0, atol=1e-20)
    np.testing.assert_allclose(flat.means[:, 0], 2.0)


def test_campanato_preconditions():
    tr = heat_run()
    with pytest.raises(PreconditionError):
        campanato_profile(tr, (0.1, 0.5), [0.2])
    with pytest.raises(PreconditionError):
        campanato_profile(tr, (0.1, 0.5), [0.0, 0.1])
    with pytest.raises(PreconditionError):
        campanato_decay_constants(tr, [(0.1, 0.5)], [(0.1, 0.05)])


def test_campanato_decay_of_an_affine_field():
    # F = x - 1/2 near y = 1/2: omega(r) = r^2 * int_{-r}^{r} x^2 dx = 2 r^5 / 3,
    # up to the ball edge on the refined grid (relative error ~ 1/(4 N r))
    lat = TorusLattice(1, 256)
    tr = traj_from(lat, np.linspace(0.0, 0.1, 41), lambda t, x: x[:, 0] - 0.5)
    r = np.array([0.06, 0.08, 0.12, 0.15])
    prof = campanato_profile(tr, (0.1, 0.5), r, fields=tr.values)
    np.testing.assert_allclose(prof.omega, 2 * r**5 / 3, rtol=0.03)
    C = campanato_decay_constants(tr, [(0.1, 0.5)], [(0.06, 0.12), (0.08, 0.15)])
    assert C.shape == (1, 2)
    np.testing.assert_allclose(C, 1.0, rtol=0.03)


def test_oscillation_constants():
    tr = heat_run(N=32)
    vals = oscillation_constants(tr, (0.1, 0.3), [0.02, 0.04], R1=0.06)
    assert vals.shape == (2,) and np.all(vals > 0)
    with pytest.raises(PreconditionError):
        oscillation_constants(tr, (0.1, 0.3), [0.1], R1=0.06)


# ---------------------------------------------------- interpolation inequality


def test_interpolation_inequality_on_heat_run():
    rep = interpolation_inequality_check(heat_run(), 0.5)
    assert rep.passed1 and rep.passed2
    assert rep.U1 > 0 and rep.osc > 0
    assert "3-bound" in str(rep)
    with pytest.raises(ValueError):
        interpolation_inequality_check(heat_run(), 1.5)


# -------------------------------------------------------- iteration lemma


def test_iteration_constant_values():
    t = 0.5
    assert iteration_constant(0.8, 0.4, t) == pytest.approx(t**-0.4 / (t**0.4 - t**0.8))
    assert iteration_constant(0.8, 0.4, t) == pytest.approx(7.190422, rel=1e-6)
    # small tau, small delta: tau^-alpha_bar dominates and the literal variant drops it
    assert iteration_constant(2.0, 0.1, 0.01) == pytest.approx(1e4)
    lit = iteration_constant(2.0, 0.1, 0.01, literal=True)
    assert lit == pytest.approx(0.01**-0.1 / (0.01**0.1 - 1e-4))


@pytest.mark.parametrize("ab,delta,tau", [(0.8, 0.4, 0.5), (0.5, 0.1, 0.25), (1.0, 0.9, 0.7)])
def test_iteration_bound_holds_on_power_families(ab, delta, tau):
    omega = lambda r: r**ab + 0.3 * r**delta
    sigma = lambda r: 0.3 * r**delta
    C, rep = iteration_bound(omega, sigma, ab, delta, tau, R0=1.0)
    assert rep.passed and rep.checked == 400
    assert C == iteration_constant(ab, delta, tau)


def test_iteration_bound_accepts_tables():
    r = np.geomspace(1e-3, 1.0, 200)
    C, rep = iteration_bound((r, r**0.7), (r, 0 * r), 0.7, 0.3, 0.5, R0=1.0, r_grid=r[r >= 0.02])
    assert rep.passed


def test_iteration_bound_rejects_bad_hypotheses():
    ok = lambda r: r**0.8
    zero = lambda r: 0.0 * r
    with pytest.raises(HypothesisError):
        iteration_bound(ok, zero, 0.8, 0.9, 0.5, 1.0)
    with pytest.raises(HypothesisError):
        iteration_bound(ok, zero, 0.8, 0.4, 1.5, 1.0)
    with pytest.raises(HypothesisError, match="omega decreases"):
        iteration_bound(lambda r: 1 - r, zero, 0.8, 0.4, 0.5, 1.0)
    with pytest.raises(HypothesisError, match="increases"):
        iteration_bound(ok, lambda r: r, 0.8, 0.4, 0.5, 1.0)
    with pytest.raises(HypothesisError, match="fails at"):
        iteration_bound(lambda r: r**0.2, zero, 0.8, 0.4, 0.5, 1.0)
    with pytest.raises(HypothesisError):
        iteration_bound(ok, zero, 0.8, 0.4, 0.5, 1.0, r_grid=[0.5, 2.0])


# ----------------------------------------------------------- exponent fits


def test_envelope_fit_recovers_a_power_law(rng):
    m = rng.uniform(1e-3, 1.0, 2000)
    fit = envelope_fit(m, 2.0 * m**0.6, bins=20)
    assert fit.defined and fit.bins_used == 20
    assert fit.exponent == pytest.approx(0.6, abs=1e-10)
    assert fit.constant == pytest.approx(2.0, rel=1e-9)
    assert fit.r2 == pytest.approx(1.0)
    noisy = envelope_fit(m, 2.0 * m**0.6 * rng.uniform(0.5, 1.0, m.size), bins=20)
    assert noisy.r2 > 0.95
    assert "sigma=" in str(fit)


def test_envelope_fit_degenerate_inputs():
    assert not envelope_fit([1.0, 1.0], [1.0, 2.0]).defined
    assert not envelope_fit([1.0, 2.0], [0.0, 0.0]).defined
    assert "bins" in envelope_fit([1.0, 2.0], [1.0, 2.0], min_bins=3).reason


def test_fit_holder_exponent_modes_and_errors():
    tr = heat_run(N=16, samples=np.geomspace(0.005, 0.1, 20))
    fit = fit_holder_exponent(tr, 0.005)
    # a smooth linear run is Lipschitz; the (0, 1] range is asserted on quasilinear runs
    assert fit.defined and 0 < fit.exponent < 2 and fit.bins_used == 24
    assert fit_holder_exponent(tr, 0.005, mode="space").defined
    assert not fit_holder_exponent(tr, 0.005, min_dist=10.0).defined
    with pytest.raises(ValueError):
        fit_holder_exponent(tr, 0.005, mode="diag")
    with pytest.raises(PreconditionError):
        fit_holder_exponent(tr, 0.0)
    with pytest.raises(PreconditionError):
        fit_holder_exponent(tr, 1.0)
