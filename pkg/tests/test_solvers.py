import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import random_edges, smooth_field
from lattice_schauder.errors import (
    EnvelopeError,
    InvariantError,
    PreconditionError,
    SizeGuardError,
)
from lattice_schauder.lattice import ConstantCoefficients, EdgeCoefficients, TorusLattice, grad_forward
from lattice_schauder.solvers import (
    LinearProblem,
    Nonlinearity,
    ParabolicCylinder,
    Trajectory,
    check_maximum_principle,
    coefficients_from_state,
    comparison_envelope,
    duhamel_reconstruct,
    mass_drift,
    propagator,
    solve_gradient_system,
    solve_heat_on_cylinder,
    solve_linear_divergence,
    solve_linear_nondivergence,
    solve_nondivergence_psi,
    solve_quasilinear,
)


def sine(lat, k=1):
    return np.sin(2 * np.pi * k * lat.points()[:, 0])


# ----------------------------------------------------------- nonlinearity


def test_cubic_constants():
    nl = Nonlinearity.allen_cahn(1.0)
    # phi' = 1 + 0.3 u^2, phi'' = 0.6 u on [-1.2, 1.2]
    assert nl.c_minus == pytest.approx(1.0)
    assert nl.c_plus == pytest.approx(1.432)
    assert nl.phi2_norm == pytest.approx(0.72)
    assert float(nl.f(1.0)) == 0.0 and float(nl.f(0.5)) == pytest.approx(0.375)


def test_nonlinearity_rejections():
    with pytest.raises(InvariantError):
        Nonlinearity.polynomial([0, 1, -1], "none", 0.0, -1, 1)
    with pytest.raises(EnvelopeError):
        Nonlinearity.polynomial("identity", "none", 0.0, 1, -1)
    with pytest.raises(ValueError):
        Nonlinearity.polynomial("identity", "none", -1.0, -1, 1)
    # f(u_+) > 0 with K > 0
    with pytest.raises(EnvelopeError):
        Nonlinearity.polynomial("identity", [1.0], 1.0, -1, 1)


def test_comparison_envelope():
    lat = TorusLattice(1, 8)
    u0 = 0.5 * sine(lat)
    assert comparison_envelope(Nonlinearity.allen_cahn(2.0), lat, u0) == (-1.2, 1.2)
    with pytest.raises(EnvelopeError):
        comparison_envelope(Nonlinearity.heat(), lat, u0)
    with pytest.raises(EnvelopeError):
        comparison_envelope(Nonlinearity.allen_cahn(2.0), lat, 1.3 * sine(lat))


@given(st.floats(-1.2, 1.2), st.floats(-1.2, 1.2))
def test_quotient_is_a_mean_value(a, b):
    nl = Nonlinearity.allen_cahn(1.0)
    q = float(nl.quotient(a, b))
    assert nl.c_minus - 1e-12 <= q <= nl.c_plus + 1e-12
    assert q == pytest.approx(float(nl.quotient(b, a)))
    mid = float(nl.dphi(0.5 * (a + b)))
    assert abs(q - mid) <= 0.5 * nl.phi2_norm * abs(a - b) + 1e-12


def test_quotient_limit_and_inverse():
    nl = Nonlinearity.allen_cahn(1.0)
    assert float(nl.quotient(0.4, 0.4)) == pytest.approx(float(nl.dphi(0.4)))
    u = np.linspace(-1.1, 1.1, 41)
    np.testing.assert_allclose(nl.phi_inverse(nl.phi(u)), u, atol=1e-12)
    assert nl.range_scan(nl.dphi, -1.2, 1.2) == pytest.approx((1.0, 1.432))


def test_coefficients_from_state(rng):
    lat = TorusLattice(2, 6)
    nl = Nonlinearity.allen_cahn(1.0)
    u = rng.uniform(-1, 1, lat.size)
    a = coefficients_from_state(lat, u, nl)
    assert a.symmetry_residual() == pytest.approx(0.0, abs=1e-14)
    assert nl.c_minus <= a.values.min() and a.values.max() <= nl.c_plus
    with pytest.raises(EnvelopeError):
        coefficients_from_state(lat, u + 1.0, nl)


# -------------------------------------------------------------- trajectory


def test_trajectory_validation():
    lat = TorusLattice(1, 4)
    with pytest.raises(InvariantError):
        Trajectory(lat, [0.0, 0.0], np.zeros((2, 4)))
    with pytest.raises(InvariantError):
        Trajectory(lat, [0.0, 1.0], np.zeros((2, 5)))
    tr = Trajectory(lat, [0.0, 1.0], np.zeros((2, 4)))
    with pytest.raises(ValueError):
        tr.values[0, 0] = 1.0


def test_trajectory_time_interpolation():
    lat = TorusLattice(1, 4)
    ts = np.linspace(0, 1, 6)
    vals = np.outer(ts**3 - ts, np.arange(1, 5))
    tr = Trajectory(lat, ts, vals)
    np.testing.assert_array_equal(tr.at(ts[2]), vals[2])
    t = 0.53
    np.testing.assert_allclose(tr.at(t, order=3), (t**3 - t) * np.arange(1, 5), atol=1e-13)
    lin = tr.at(t)
    w = (t - 0.4) / 0.2
    np.testing.assert_allclose(lin, (1 - w) * vals[2] + w * vals[3])
    with pytest.raises(PreconditionError):
        tr.at(1.5)
    assert tr.index_of(0.4) == 2
    with pytest.raises(KeyError):
        tr.index_of(0.41)
    assert len(tr.restrict([0, 5])) == 2
    np.testing.assert_array_equal(tr.map(lambda v: 2 * v).values, 2 * vals)


def test_trajectory_csv_roundtrip(tmp_path, rng):
    lat = TorusLattice(2, 3)
    tr = Trajectory(lat, [0.0, 0.1, 0.25], rng.normal(size=(3, 9)))
    p = tmp_path / "tr.csv"
    tr.dump_csv(p)
    back = Trajectory.load_csv(p)
    assert back.lattice == lat
    np.testing.assert_array_equal(back.times, tr.times)
    np.testing.assert_array_equal(back.values, tr.values)


# -------------------------------------------------------------- evolution


@pytest.mark.parametrize("N", [8, 16, 32])
def test_heat_mode_decays_at_discrete_rate(N):
    lat = TorusLattice(1, N)
    tr = solve_quasilinear(Nonlinearity.heat(), lat, sine(lat), 0.1, samples=4)
    assert tr.times.size == 5
    # a lattice eigenmode is damped by the RK4 stability polynomial each step
    m = int(np.ceil(0.025 / tr.dt - 1e-9))
    z = -(0.025 / m) * 4 * N**2 * np.sin(np.pi / N) ** 2
    steps = 4 * m
    R = 1 + z + z**2 / 2 + z**3 / 6 + z**4 / 24
    np.testing.assert_allclose(tr.values[-1], R**steps * sine(lat), rtol=0, atol=1e-13)
    lam = 4 * N**2 * np.sin(np.pi / N) ** 2
    assert abs(R**steps - np.exp(-lam * 0.1)) < 1e-6 * np.exp(-lam * 0.1)


def test_identity_phi_matches_linear_solver(rng):
    lat = TorusLattice(2, 8)
    u0 = smooth_field(lat, rng)
    a = solve_quasilinear(Nonlinearity.heat(), lat, u0, 0.05, samples=5)
    b = solve_linear_divergence(LinearProblem.constant(lat, u0, 1.0), 0.05, samples=5)
    np.testing.assert_allclose(a.values, b.values, atol=1e-13)


def test_quasilinear_conserves_mass_and_respects_envelope(rng):
    lat = TorusLattice(2, 8)
    nl = Nonlinearity.polynomial("cubic", "none", 0.0, -1.2, 1.2)
    u0 = rng.uniform(-1, 1, lat.size)
    tr = solve_quasilinear(nl, lat, u0, 0.05, samples=10)
    assert mass_drift(tr) < 1e-12
    assert check_maximum_principle(tr).passed
    with pytest.raises(EnvelopeError):
        solve_quasilinear(nl, lat, 1.25 * np.ones(lat.size), 0.01)


def test_allen_cahn_stays_in_envelope(rng):
    lat = TorusLattice(1, 32)
    nl = Nonlinearity.allen_cahn(16.0)
    tr = solve_quasilinear(nl, lat, rng.uniform(-1.1, 1.1, lat.size), 0.2, samples=20)
    assert tr.values.min() >= -1.2 and tr.values.max() <= 1.2
    # the flow drives toward the wells
    assert np.abs(tr.values[-1]).max() <= 1.0 + 1e-6


def test_psi_formulation_matches_quasilinear(rng):
    lat = TorusLattice(1, 16)
    nl = Nonlinearity.allen_cahn(2.0)
    u0 = 0.8 * sine(lat) + 0.1 * sine(lat, 3)
    u = solve_quasilinear(nl, lat, u0, 0.05, samples=5)
    psi = solve_nondivergence_psi(nl, lat, u0, 0.05, samples=5)
    np.testing.assert_allclose(nl.phi_inverse(psi.values), u.values, atol=1e-7)


def test_gradient_system_tracks_gradient(rng):
    lat = TorusLattice(2, 8)
    nl = Nonlinearity.allen_cahn(1.0)
    u0 = smooth_field(lat, rng)
    res = solve_gradient_system(nl, lat, u0, 0.02, samples=4)
    assert res.max_curl < 1e-8
    for e in lat.positive_directions:
        xi = res.xi[e.axis].values[-1]
        direct = grad_forward(lat, nl.phi(res.u.values[-1]), e)
        np.testing.assert_allclose(xi, direct, atol=1e-6 * np.abs(direct).max())
    with pytest.raises(ValueError):
        res.second_derivative(nl, -1, lat.directions[0], lat.directions[1])


def test_nondivergence_linear_solver_sign(rng):
    lat = TorusLattice(1, 16)
    a = rng.uniform(0.2, 1.0, (lat.size, 2))
    tr = solve_linear_nondivergence(lat, lambda t: a, sine(lat), 0.05, samples=5)
    assert check_maximum_principle(tr, kind="nondivergence").passed
    assert np.abs(tr.values[-1]).max() < np.abs(tr.values[0]).max()


def test_linear_problem_schedule_checks(rng):
    lat = TorusLattice(1, 6)
    bad = rng.uniform(1, 2, (2, lat.size, 2))
    with pytest.raises(InvariantError):
        LinearProblem.from_schedule(lat, [0, 1], bad, np.zeros(6))
    with pytest.raises(InvariantError):
        LinearProblem.from_schedule(lat, [0, 1, 2], np.ones((2, 6, 2)), np.zeros(6))


def test_from_trajectory_reproduces_quasilinear_run(rng):
    # freezing a(u(t)) and g = K f(u(t)) along a fine run gives back the run
    lat = TorusLattice(1, 8)
    nl = Nonlinearity.allen_cahn(1.0)
    u = solve_quasilinear(nl, lat, 0.5 * sine(lat), 0.02)
    lin = solve_linear_divergence(LinearProblem.from_trajectory(u, nl), 0.02, samples=u.times)
    # the schedule is linear between steps, RK4 stages see a(u) at midpoints
    np.testing.assert_allclose(lin.values[-1], u.values[-1], atol=1e-5)


# -------------------------------------------------------------- propagator


def test_propagator_is_stochastic_and_composes(rng):
    lat = TorusLattice(1, 8)
    a = random_edges(lat, rng)
    p = LinearProblem.constant(lat, np.zeros(8), a)
    P = propagator(p, 0.0, 0.02, dt_factor=0.25)
    np.testing.assert_allclose(P.sum(axis=0), 1.0, atol=1e-12)
    np.testing.assert_allclose(P.sum(axis=1), 1.0, atol=1e-12)
    np.testing.assert_allclose(P, P.T, atol=1e-12)
    assert P.min() > 0
    half = propagator(p, 0.0, 0.01, dt_factor=0.25)
    np.testing.assert_allclose(P, half @ half, atol=1e-9)
    np.testing.assert_array_equal(propagator(p, 0.01, 0.01), np.eye(8))
    with pytest.raises(PreconditionError):
        propagator(p, 0.02, 0.01)


def test_propagator_size_guard():
    lat = TorusLattice(2, 65)
    p = LinearProblem.constant(lat, np.zeros(lat.size), 1.0)
    with pytest.raises(SizeGuardError):
        propagator(p, 0.0, 1e-6)


def random_schedule(lat, rng, T=0.2, nodes=5):
    ts = np.linspace(0, T, nodes)
    tab = np.array([random_edges(lat, rng).values for _ in ts])
    x = lat.points()[:, 0]
    g = np.array([np.cos(2 * np.pi * x + k) for k in range(nodes)])
    return LinearProblem.from_schedule(lat, ts, tab, sine(lat), g)


def test_duhamel_matches_direct_solve(rng):
    lat = TorusLattice(1, 8)
    p = random_schedule(lat, rng)
    direct = solve_linear_divergence(p, 0.2)
    rec = duhamel_reconstruct(p, 0.2)
    np.testing.assert_allclose(rec.times, direct.times)
    rel = np.max(np.abs(rec.values - direct.values)) / np.max(np.abs(direct.values))
    assert rel < 1e-5


def test_duhamel_quadrature_is_second_order(rng):
    lat = TorusLattice(1, 8)
    p = random_schedule(lat, rng)
    errs = []
    for cfl in (0.5, 0.25):
        d = solve_linear_divergence(p, 0.2, cfl=cfl)
        errs.append(np.max(np.abs(duhamel_reconstruct(p, 0.2, cfl=cfl).values[-1] - d.values[-1])))
    assert 3.0 < errs[0] / errs[1] < 5.0


def test_duhamel_trivial_cases():
    lat = TorusLattice(1, 8)
    p = LinearProblem.constant(lat, sine(lat), 1.0, np.ones(8))
    rec = duhamel_reconstruct(p, 0.1)
    np.testing.assert_allclose(rec.values[-1].mean(), 0.1, atol=1e-14)
    free = LinearProblem.constant(lat, sine(lat), 1.0)
    np.testing.assert_allclose(duhamel_reconstruct(free, 0.1).values[-1],
                               propagator(free, 0.0, 0.1) @ sine(lat), atol=1e-13)


# ------------------------------------------------------- maximum principle


def test_maximum_principle_report_catches_overshoot():
    lat = TorusLattice(1, 4)
    tr = Trajectory(lat, [0, 1], [[0, 1, 0, 0], [0, 1.5, 0, 0]])
    rep = check_maximum_principle(tr)
    assert not rep.passed
    assert rep.overshoot == pytest.approx(0.5)
    assert rep.worst_site == (1,) and rep.worst_time == 1.0
    assert "VIOLATED" in str(rep)
    with pytest.raises(ValueError):
        check_maximum_principle(tr, kind="other")


# --------------------------------------------------------------- cylinders


def test_cylinder_geometry():
    lat = TorusLattice(2, 16)
    Q = ParabolicCylinder(0.1, (0.5, 0.5), 0.2)
    assert Q.t0 == pytest.approx(0.06)
    D, B = Q.interior(lat), Q.outer_boundary(lat)
    assert D.any() and B.any() and not (D & B).any()
    assert (Q.closure(lat) == (D | B)).all()
    assert Q.nearest_site(lat) == lat.site_index([8, 8])
    assert bool(Q.contains(0.08, [0.55, 0.5]))
    assert not bool(Q.contains(0.1, [0.55, 0.5]))
    with pytest.raises(InvariantError):
        ParabolicCylinder(0.01, (0.5, 0.5), 0.2)


def test_heat_on_cylinder_reproduces_global_solution():
    lat = TorusLattice(1, 32)
    a = ConstantCoefficients.from_axes(lat, 1.0)
    u0 = sine(lat) + 0.3 * np.cos(4 * np.pi * lat.points()[:, 0])
    glob = solve_quasilinear(Nonlinearity.heat(), lat, u0, 0.1)
    Q = ParabolicCylinder(0.1, (0.4,), 0.15)
    sol = solve_heat_on_cylinder(lat, Q, a, glob)
    closure = sol.interior | sol.boundary
    assert np.isnan(sol.values[:, ~closure]).all()
    ref = glob.at(Q.t1)
    assert np.max(np.abs(sol.values[-1, closure] - ref[closure])) < 1e-6
    with pytest.raises(PreconditionError):
        solve_heat_on_cylinder(lat, ParabolicCylinder(0.2, (0.4,), 0.15), a, glob)
