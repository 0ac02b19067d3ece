import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import random_edges, smooth_field
from lattice_schauder import parametrix as pm
from lattice_schauder.errors import InvariantError, PreconditionError, QuadratureError, SizeGuardError
from lattice_schauder.lattice import (
    ConstantCoefficients,
    Direction,
    EdgeCoefficients,
    TorusLattice,
    constant_laplacian,
    divergence_operator,
)
from lattice_schauder.solvers import Nonlinearity, generator_matrix, solve_quasilinear


def variable_operator(N=8, seed=3):
    lat = TorusLattice(1, N)
    x = lat.points()[:, 0]
    rng = np.random.default_rng(seed)
    base = 1.0 + 0.3 * np.sin(2 * np.pi * x) + 0.05 * rng.uniform(-1, 1, N)

    def sched(t):
        return EdgeCoefficients.from_edges(lat, (base * (1 + 0.2 * t))[:, None]).values

    return pm.rewrite_divergence(sched, lat)


# ------------------------------------------------------------- operator


def test_constant_operator_matrix_and_apply(rng):
    lat = TorusLattice(2, 4)
    a = ConstantCoefficients.from_axes(lat, [1.0, 2.0])
    op = pm.OperatorLt.constant(lat, a)
    M = op.matrix(0.3)
    np.testing.assert_allclose(M, generator_matrix(lat, np.tile(a.values, (lat.size, 1))))
    u = rng.normal(size=lat.size)
    np.testing.assert_allclose(op.apply(0.0, u), M @ u, atol=1e-10)
    np.testing.assert_allclose(op.apply(0.0, u), constant_laplacian(lat, a, u), atol=1e-10)
    assert op.frozen(0.0, 3).per_axis.tolist() == [1.0, 2.0]


def test_operator_invariants(rng):
    lat = TorusLattice(1, 4)
    bad = rng.uniform(1, 2, (4, 2))
    with pytest.raises(InvariantError):
        pm.OperatorLt(lat, lambda t: bad)
    ok = np.ones((4, 2))
    with pytest.raises(InvariantError):
        pm.OperatorLt(lat, lambda t: ok, b=lambda t: 3 * ok, D0=1.0)
    with pytest.raises(InvariantError):
        pm.OperatorLt(lat, lambda t: ok, c_minus=1.5)
    shifted = pm.OperatorLt(lat, lambda t: (1 + t) * ok).with_time_shift(1.0)
    np.testing.assert_allclose(shifted.a(0.0), 2 * ok)


@given(st.sampled_from([(1, 8), (2, 4), (3, 3)]), st.integers(0, 2**32 - 1))
def test_rewrite_reproduces_divergence_form(shape, seed):
    lat = TorusLattice(*shape)
    rng = np.random.default_rng(seed)
    a = random_edges(lat, rng)
    u = rng.normal(size=lat.size)
    scale = lat.N**2
    assert pm.divergence_rewrite_residual(a, u) < 1e-12 * scale
    op = pm.rewrite_divergence(a)
    np.testing.assert_allclose(op.matrix(0.0) @ u, divergence_operator(lat, a, u), atol=1e-10 * scale)


def test_rewrite_hand_values():
    lat = TorusLattice(1, 4)
    # edge values a_{x,+} for x = 0..3
    a = EdgeCoefficients.from_edges(lat, np.array([[1.0], [2.0], [3.0], [4.0]]))
    op = pm.rewrite_divergence(a)
    # a_e(x) = (a_{x,+} + a_{x,-}) / 2, a_{x,-} = a_{x-1,+}
    np.testing.assert_allclose(op.a(0)[:, 0], [2.5, 1.5, 2.5, 3.5])
    # b_+(x) = -1/2 N (a_{x-1,+} - a_{x,+})
    np.testing.assert_allclose(op.b(0)[:, 0], [-6.0, 2.0, 2.0, 2.0])
    with pytest.raises(PreconditionError):
        pm.rewrite_divergence(lambda t: a.values)
    with pytest.raises(TypeError):
        pm.rewrite_divergence(np.ones((4, 2)))


def test_operator_from_trajectory_matches_frozen_coefficients():
    lat = TorusLattice(1, 8)
    nl = Nonlinearity.allen_cahn(1.0)
    u0 = 0.5 * np.sin(2 * np.pi * lat.points()[:, 0])
    tr = solve_quasilinear(nl, lat, u0, 0.01)
    op = pm.operator_from_trajectory(tr, nl)
    from lattice_schauder.solvers import coefficients_from_state
    a = coefficients_from_state(lat, tr.values[-1], nl)
    v = np.cos(2 * np.pi * lat.points()[:, 0])
    np.testing.assert_allclose(op.apply(tr.T, v), divergence_operator(lat, a, v), atol=1e-9)
    assert op.c_minus >= nl.c_minus and op.c_plus <= nl.c_plus


# --------------------------------------------------------- kernel grids


def test_kernel_grid_validation_and_csv(tmp_path, rng):
    lat = TorusLattice(1, 3)
    with pytest.raises(InvariantError):
        pm.KernelGrid(lat, 0.0, [0.1], np.zeros((1, 3, 2)))
    g = pm.KernelGrid(lat, 0.0, [0.0, 0.1], np.stack([3 * np.eye(3), rng.uniform(0, 2, (3, 3))]))
    assert g.initial_residual() == 0.0
    assert len(g) == 2
    with pytest.raises(PreconditionError):
        g.at(0.05)
    p = tmp_path / "k.csv"
    g.dump_csv(p)
    back = pm.KernelGrid.load_csv(lat, p)
    np.testing.assert_array_equal(back.values, g.values)
    np.testing.assert_array_equal(back.times, g.times)


def test_displacement_table():
    lat = TorusLattice(2, 3)
    D = pm.displacement_table(lat)
    x, y = lat.site_index([0, 2]), lat.site_index([1, 1])
    assert D[x, y] == lat.site_index([2, 1])
    assert np.all(np.diag(D) == 0)


# ----------------------------------------------- constant-coefficient kernel


@pytest.mark.parametrize("n,N", [(1, 16), (2, 6)])
def test_constant_kernel_spectral_vs_rk4(n, N):
    lat = TorusLattice(n, N)
    a = ConstantCoefficients.from_axes(lat, [1.0, 0.6][:n])
    taus = [0.0, 0.002, 0.01]
    sp = pm.constant_kernel(lat, a, taus)
    rk = pm.constant_kernel(lat, a, taus, method="rk4", cfl=0.1)
    np.testing.assert_allclose(sp, rk, atol=1e-6 * lat.size)
    np.testing.assert_allclose(sp.mean(axis=1), 1.0, atol=1e-12)
    assert sp.min() > -1e-12
    np.testing.assert_allclose(sp[0], lat.size * lat.delta([0] * n), atol=1e-12)
    # d/dtau pbar = Delta_a pbar
    d = pm.constant_kernel(lat, a, 0.01, derivative=True)
    np.testing.assert_allclose(d, constant_laplacian(lat, a, sp[2]), atol=1e-9 * lat.size)
    with pytest.raises(PreconditionError):
        pm.constant_kernel(lat, a, -1.0)
    with pytest.raises(ValueError):
        pm.constant_kernel(lat, a, 0.1, method="rk4", derivative=True)


def test_constant_kernel_grid_is_translation_invariant():
    lat = TorusLattice(1, 8)
    a = ConstantCoefficients.from_axes(lat, 1.0)
    g = pm.constant_kernel_grid(lat, a, 0.0, [0.01])
    K = g.values[0]
    np.testing.assert_allclose(K, np.roll(np.roll(K, 1, axis=0), 1, axis=1), atol=1e-12)
    np.testing.assert_allclose(K, K.T, atol=1e-12)


def test_gaussian_fits_hold_on_validation_grids():
    lat = TorusLattice(1, 16)
    a = ConstantCoefficients.from_axes(lat, 1.0)
    fit = pm.aronson_fit(lat, a)
    assert fit.passed and fit.c > 0 and fit.k >= 4.0
    assert "violations=0" in str(fit)
    assert pm.kernel_gradient_bounds_check(lat, a, 1).passed
    with pytest.raises(ValueError):
        pm.kernel_gradient_bounds_check(lat, a, 3)


def test_tau_grids_interleave():
    lat = TorusLattice(1, 8)
    cal, val = pm.tau_grids(lat, ConstantCoefficients.from_axes(lat, 1.0), 0.1, points=5)
    assert cal.size == val.size == 5
    assert np.all(cal < val) and np.all(val[:-1] < cal[1:])


# ----------------------------------------------------------- Levi series


def test_trapezoid_weights():
    t = np.array([0.0, 0.1, 0.3, 0.6])
    w = pm.trapezoid_weights(t, 1, 3)
    np.testing.assert_allclose(w, [0.0, 0.1, 0.25, 0.15])
    assert w.sum() == pytest.approx(0.5)
    assert not pm.trapezoid_weights(t, 2, 2).any()


def test_levi_preconditions():
    op = variable_operator()
    with pytest.raises(QuadratureError):
        pm.levi_iterate(op, [0.0, 0.1, 0.2])
    with pytest.raises(QuadratureError):
        pm.levi_iterate(op, [0.0, 0.1, 0.1, 0.2])
    with pytest.raises(ValueError):
        pm.levi_iterate(op, np.linspace(0, 0.1, 5), k_max=0)
    big = TorusLattice(2, 65)
    const = pm.OperatorLt.constant(big, ConstantCoefficients.from_axes(big, 1.0))
    with pytest.raises(SizeGuardError):
        pm.levi_iterate(const, np.linspace(0, 0.1, 5))
    series = pm.levi_iterate(op, np.linspace(0, 0.05, 5), 2, sources=(0,))
    with pytest.raises(PreconditionError):
        pm.assemble_parametrix(series, 2)


def test_constant_operator_parametrix_is_the_frozen_kernel():
    lat = TorusLattice(1, 8)
    op = pm.OperatorLt.constant(lat, ConstantCoefficients.from_axes(lat, 1.3))
    g = pm.parametrix_kernel(op, 0.1, 0.15, 5, 3)
    assert np.max(np.abs(g.values[0] - lat.size * np.eye(8))) < 1e-12
    assert np.max(np.abs(pm.levi_iterate(op, g.times, 2, sources=(0,)).term_norms())) < 1e-9
    oracle = pm.oracle_kernel(op, 0.1, [0.15], dt_factor=0.1)
    assert pm.sup_error(pm.KernelGrid(lat, 0.1, [0.15], g.values[-1:]), oracle) < 1e-8


def test_parametrix_improves_with_quadrature():
    op = variable_operator()
    s, t = 0.0, 0.05
    oracle = pm.oracle_kernel(op, s, [t], dt_factor=0.25).values[0]
    errs = [float(np.max(np.abs(pm.parametrix_kernel(op, s, t, m, 4).values[-1] - oracle)))
            for m in (9, 17)]
    assert errs[1] < errs[0]
    rich = pm.parametrix_kernel(op, s, t, 9, 4, quadrature="richardson")
    assert float(np.max(np.abs(rich.values[-1] - oracle))) < errs[1]
    with pytest.raises(ValueError):
        pm.parametrix_kernel(op, s, t, 9, 4, quadrature="simpson")


def test_levi_series_diagnostics():
    op = variable_operator()
    series = pm.levi_iterate(op, np.linspace(0.0, 0.05, 9), 4, sources=(0,))
    norms = series.term_norms()
    assert series.k_max == 4 and norms.shape == (4,)
    np.testing.assert_allclose(series.partial_sum_increments(), norms[1:])
    assert np.all(series.ratio_test() < 1)


# --------------------------------------------------------------- oracles


def test_oracle_duality_and_composition():
    op = variable_operator()
    assert pm.duality_residual(op, 0.0, 0.04) < 1e-6
    direct = pm.oracle_kernel(op, 0.0, [0.02, 0.04], dt_factor=0.25)
    rt = pm.oracle_kernel(op, 0.02, [0.04], dt_factor=0.25).values[0]
    assert pm.chapman_kolmogorov_residual(direct.values[0], rt, direct.values[1]) < 1e-7
    assert direct.conservation_residual() < 1e-9
    assert direct.min_value() > 0
    np.testing.assert_allclose(pm.adjoint_kernel(op, 0.1, 0.1), 8 * np.eye(8))
    with pytest.raises(PreconditionError):
        pm.adjoint_kernel(op, 0.1, 0.0)
    with pytest.raises(PreconditionError):
        pm.sup_error(direct, pm.KernelGrid(op.lattice, 0.0, [0.02], direct.values[:1]))


# ------------------------------------------- commutator and expansions


def cubic_fields(lat, rng):
    return [smooth_field(lat, rng, amp=1.0), rng.uniform(-1, 1, lat.size)]


@pytest.mark.parametrize("shape", [(1, 16), (2, 8)])
def test_commutator_identity(shape, rng):
    lat = TorusLattice(*shape)
    nl = Nonlinearity.allen_cahn(1.0)
    for u in cubic_fields(lat, rng):
        for e in lat.directions:
            assert pm.commutator_residual(lat, u, nl, e, relative=True) < 1e-12
            lhs, rhs = pm.commutator_terms(lat, u, nl, e)
            assert np.max(np.abs(lhs)) > 0


@pytest.mark.parametrize("shape", [(1, 16), (2, 8)])
def test_coefficient_gradient_bound(shape, rng):
    lat = TorusLattice(*shape)
    nl = Nonlinearity.allen_cahn(1.0)
    for u in cubic_fields(lat, rng):
        for e in lat.directions:
            for ep in lat.positive_directions:
                viol, ratio = pm.coefficient_gradient_bound(lat, u, nl, e, ep)
                assert viol == 0 and ratio <= 1.0 + 1e-9


def test_second_expansion_encloses_the_difference(rng):
    lat = TorusLattice(2, 8)
    nl = Nonlinearity.allen_cahn(1.0)
    for u in cubic_fields(lat, rng):
        for e1 in lat.directions:
            for e2 in lat.directions:
                chk = pm.second_expansion_residual(lat, u, nl, e1, e2, Direction(0, 1))
                assert chk.passed, (e1, e2, chk.max_excess)
    # phi''' = 0.6 is constant for the cubic, so the enclosure is a point up to rounding
    assert chk.width < 1e-8 * max(1.0, float(np.abs(chk.lhs).max()))


def test_second_expansion_with_quartic_phi(rng):
    lat = TorusLattice(1, 16)
    nl = Nonlinearity.polynomial([0, 1, 0, 0.1, 0.05], "allen-cahn", 1.0, -1.2, 1.2)
    u = rng.uniform(-1, 1, lat.size)
    chk = pm.second_expansion_residual(lat, u, nl, Direction(0, 1), Direction(0, -1), Direction(0, 1))
    assert chk.passed and chk.width > 0
