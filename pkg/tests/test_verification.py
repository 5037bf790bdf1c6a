import math

import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import given, settings, strategies as st

from conftest import mixed_bc, uniform_bc
from poroinfsup.assembly import OperatorSet
from poroinfsup.counterexample import discrete_eigenpair, mode_trajectory, rough_quantities
from poroinfsup.mesh import unit_square_mesh
from poroinfsup.norms import trial_norm
from poroinfsup.problem import MaterialParams, select_spaces
from poroinfsup.solver import FourFieldTrajectory
from poroinfsup.verification import (
    DEFAULT_GRID,
    TestFunction,
    bilinear_form,
    boundedness_constant,
    broken_spaces,
    check_antiderivative,
    check_L2L2_pressure,
    check_nondegeneracy,
    check_Pr_bound,
    div_infsup_constants,
    evaluate_point,
    infsup_lower_bound,
    parameter_grid,
    pressure_energy_sq,
    project_time_polynomial,
    random_smooth_loads,
    random_trajectory,
    residual_dual_norm,
    spread,
    stability_ratio,
    SweepSetup,
)
from poroinfsup.verification import test_norm as y2_norm

UNIT = MaterialParams(1.0, 1.0, 1.0, 0.0, 1.0, T=1.0)


def make_ops(bc, prm, n=4):
    return OperatorSet(unit_square_mesh(n), bc, prm, select_spaces(bc, prm))


def dense_div_constants(ops):
    E, B, M = ops.E.toarray(), ops.B.toarray(), ops.M.toarray() / ops.params.mu
    S = B @ np.linalg.solve(E, B.T)
    if ops.spaces.D_zero_mean:
        Q = sla.null_space((M @ np.ones(ops.n_s))[None, :])
        S, M = Q.T @ S @ Q, Q.T @ M @ Q
    vals = sla.eigh(S, M, eigvals_only=True)
    return vals[0], vals[-1]


def test_div_constants_dense_oracle_and_mu_independence():
    bc = uniform_bc("essential", "natural")
    ops = make_ops(bc, UNIT)
    c, C = div_infsup_constants(ops)
    c_ref, C_ref = dense_div_constants(ops)
    assert c == pytest.approx(c_ref, rel=1e-8)
    assert C == pytest.approx(C_ref, rel=1e-8)
    c2, C2 = div_infsup_constants(ops.with_params(UNIT.replace(mu=1e3)))
    assert c2 == pytest.approx(c, rel=1e-8) and C2 == pytest.approx(C, rel=1e-8)
    assert 0 < c <= C <= 2 + 1e-8


def test_div_constants_mixed_boundary():
    ops = make_ops(mixed_bc(), UNIT)
    c, C = div_infsup_constants(ops)
    c_ref, C_ref = dense_div_constants(ops)
    assert (c, C) == pytest.approx((c_ref, C_ref), rel=1e-8)


def test_parameter_grid():
    grid = parameter_grid()
    assert len(grid) == 64
    assert {p.lam for p in grid} == set(DEFAULT_GRID["lam"])
    assert all(p.mu == 1 and p.T == 1 for p in grid)
    with pytest.raises(ValueError):
        parameter_grid({"lam": (), "sigma": (0,), "kappa": (1,), "alpha": (1,)})


def test_random_inputs_seeded():
    ops = make_ops(mixed_bc(), UNIT.replace(sigma=1.0))
    a = random_smooth_loads(ops, 4).assemble(ops, 2)
    b = random_smooth_loads(ops, 4).assemble(ops, 2)
    assert np.array_equal(a.lu, b.lu) and np.array_equal(a.l0, b.l0)
    t1, t2 = random_trajectory(ops, 2, 9), random_trajectory(ops, 2, 9)
    assert np.array_equal(t1.p, t2.p)
    free = make_ops(uniform_bc("natural", "essential"), UNIT)
    with pytest.raises(ValueError):
        random_smooth_loads(free, 0)


def test_random_trajectory_respects_constraints():
    ops = make_ops(uniform_bc("essential", "natural"), UNIT)
    traj = random_trajectory(ops, 3, 0)
    assert np.abs(traj.p_tot[:, 0] @ ops.mean).max() < 1e-12
    assert np.abs(traj.m_nodes @ ops.mean).max() < 1e-12
    assert np.abs(traj.p[:, 0] @ ops.mean_p).max() < 1e-12


def riesz_test_function(traj, ops):
    """Maximizer of b(traj, .) / ||.||, built field by field."""
    prm = ops.params
    from poroinfsup.norms import constraint_residuals

    r1, r2 = constraint_residuals(traj, ops)
    mom = np.einsum("ij,kqj->kqi", ops.E.toarray(), traj.u) + np.einsum("ji,kqj->kqi", ops.B.toarray(), traj.p_tot)
    evo = np.einsum("ji,kqj->kqi", ops.Msp.toarray(), traj.dm_dt) + np.einsum("ij,kqj->kqi", ops.L.toarray(), traj.p)
    v = np.linalg.solve(ops.E.toarray(), mom.reshape(-1, ops.n_u).T).T.reshape(mom.shape)
    n = np.linalg.solve(ops.L.toarray(), evo.reshape(-1, ops.n_p).T).T.reshape(evo.shape)
    n0 = np.linalg.solve(ops.L.toarray(), ops.Msp.T @ traj.m_nodes[0])
    return TestFunction(v, r1 / (prm.mu + prm.lam), ops.gamma * r2, n, n0)


@given(seed=st.integers(0, 10**6))
@settings(max_examples=8, deadline=None)
def test_boundedness_sup_attained_by_riesz_function(seed):
    ops = make_ops(mixed_bc(), MaterialParams(1.0, 1e2, 0.3, 1e-2, 1e-3), n=3)
    traj = random_trajectory(ops, 3, seed)
    sup = residual_dual_norm(traj, ops)
    y2 = riesz_test_function(traj, ops)
    assert bilinear_form(traj, y2, ops) / y2_norm(y2, traj, ops) == pytest.approx(sup, rel=1e-9)
    rng = np.random.default_rng(seed)
    other = TestFunction(*(rng.standard_normal(a.shape) for a in y2._parts()))
    assert abs(bilinear_form(traj, other, ops)) <= sup * y2_norm(other, traj, ops) * (1 + 1e-10)


def test_boundedness_uniform_over_parameters():
    bc = mixed_bc()
    consts = []
    for prm in parameter_grid({"lam": (1, 1e8), "sigma": (0, 1), "kappa": (1e-8, 1), "alpha": (0.1, 1)}):
        ops = make_ops(bc, prm, n=3)
        consts.append(boundedness_constant(random_trajectory(ops, 3, 1), ops))
    assert spread(consts) <= 10


def test_infsup_quotient_degenerate_and_positive():
    ops = make_ops(mixed_bc(), UNIT.replace(sigma=0.5))
    c, C = div_infsup_constants(ops)
    zero = random_trajectory(ops, 2, 0).scaled(0.0)
    res = infsup_lower_bound(zero, ops, c, C)
    assert res.degenerate and res.quotient == 0
    traj = stability_ratio(ops, random_smooth_loads(ops, 0), 4).trajectory
    res = infsup_lower_bound(traj, ops, c, C)
    assert not res.degenerate and res.constant > 0.1
    assert res.quotient <= residual_dual_norm(traj, ops) * (1 + 1e-10)


def test_infsup_quotient_tracks_mode_trial_norm():
    bc = uniform_bc("essential", "natural")
    ops = make_ops(bc, UNIT, n=6)
    c, C = div_infsup_constants(ops)
    consts = []
    for k in (1, 4, 8):
        lam, w = discrete_eigenpair(ops, k)
        traj = mode_trajectory(ops, lam, w, n_steps=4)
        res = infsup_lower_bound(traj, ops, c, C)
        consts.append(res.quotient / trial_norm(traj, ops).trial)
    assert min(consts) > 0 and spread(consts) < 10


def test_nondegeneracy():
    bc = uniform_bc("essential", "natural")
    ops = make_ops(bc, UNIT.replace(sigma=1.0))
    assert check_nondegeneracy(ops, 0.1).nonsingular
    assert check_nondegeneracy(ops, 1e6).nonsingular
    broken = ops.with_params(ops.params, broken_spaces(ops.spaces))
    rep = check_nondegeneracy(broken, 0.1)
    assert not rep.nonsingular and "singular" in rep.message


def test_l2l2_bound_on_solution_and_storage_inequality():
    for prm in (UNIT, UNIT.replace(sigma=1.0, lam=1e4), UNIT.replace(sigma=1e-4, alpha=0.1)):
        ops = make_ops(mixed_bc(), prm)
        traj = stability_ratio(ops, random_smooth_loads(ops, 2), 4).trajectory
        res = check_L2L2_pressure(traj, ops)
        assert res.storage_bound_holds and 0 < res.ratio < 1


def test_l2l2_bound_on_modes_closed_form():
    ops = make_ops(uniform_bc("essential", "natural"), UNIT, n=6)
    for k in (1, 6):
        lam, w = discrete_eigenpair(ops, k)
        res = check_L2L2_pressure(mode_trajectory(ops, lam, w), ops)
        q = rough_quantities(lam, 1.0, UNIT)
        expected = 0.5 * q.int_p_L2 / (2 * q.trial_sq)
        assert res.ratio == pytest.approx(expected, rel=1e-10)
    zero = mode_trajectory(ops, lam, w).scaled(0.0)
    assert check_L2L2_pressure(zero, ops).degenerate


def _constant_pressure_trajectory(ops, values):
    """p given per interval, every other field zero."""
    N = len(values)
    t = np.linspace(0, ops.params.T, N + 1)
    z = lambda n: np.zeros((N, n))  # noqa: E731
    return FourFieldTrajectory.from_steps(t, z(ops.n_u), z(ops.n_s), np.asarray(values),
                                          np.zeros((N + 1, ops.n_s)))


def test_time_projection_fixed_point_and_average(rng):
    ops = make_ops(mixed_bc(), UNIT.replace(T=2.0))
    p = rng.standard_normal(ops.n_p)
    proj = project_time_polynomial(_constant_pressure_trajectory(ops, [p] * 4), 0, ops)
    assert np.allclose(proj.coefficients[0], p, atol=1e-12)
    assert proj.norm_sq == pytest.approx(2.0 * p @ ops.L @ p, rel=1e-12)
    ramp = [(k + 1) * p for k in range(4)]
    proj = project_time_polynomial(_constant_pressure_trajectory(ops, ramp), 0, ops)
    assert np.allclose(proj.coefficients[0], 2.5 * p, atol=1e-12)
    for r in (1, 2, 3):
        hi = project_time_polynomial(_constant_pressure_trajectory(ops, [p] * 4), r, ops)
        assert np.allclose(hi.coefficients[0], p, atol=1e-10) and np.abs(hi.coefficients[1:]).max() < 1e-10
    with pytest.raises(ValueError):
        project_time_polynomial(_constant_pressure_trajectory(ops, [p]), 4, ops)


@pytest.mark.parametrize("r", [1, 2, 3])
def test_time_projection_reproduces_polynomials(r):
    ops = make_ops(uniform_bc("essential", "natural"), UNIT)
    lam, w = discrete_eigenpair(ops, 2)
    traj = mode_trajectory(ops, lam, w, r=r, n_steps=3)
    proj = project_time_polynomial(traj, r, ops)
    expected = np.zeros((r + 1, ops.n_p))
    expected[r] = w
    assert np.allclose(proj.coefficients, expected, atol=1e-9)


def test_time_projection_of_modes_closed_form():
    ops = make_ops(uniform_bc("essential", "natural"), UNIT, n=6)
    # k = 40 has a time degree in the hundreds
    for k in (1, 5, 40):
        lam, w = discrete_eigenpair(ops, k)
        traj = mode_trajectory(ops, lam, w, n_steps=2)
        q = rough_quantities(lam, 1.0, UNIT)
        proj = project_time_polynomial(traj, 0, ops)
        assert np.allclose(proj.coefficients[0], w / (q.r + 1), atol=1e-12)
        assert proj.norm_sq == pytest.approx(q.int_P0_p, rel=1e-10)
        assert pressure_energy_sq(traj, ops) == pytest.approx(q.rough, rel=1e-10)
        ratio = check_antiderivative(traj, ops)
        assert ratio * trial_norm(traj, ops).trial == pytest.approx(q.antiderivative_sup, rel=1e-10)


def test_antiderivative_of_zero_pressure():
    ops = make_ops(mixed_bc(), UNIT)
    assert check_antiderivative(_constant_pressure_trajectory(ops, np.zeros((3, ops.n_p))), ops) == 0


def test_stability_ratio_scale_invariant():
    ops = make_ops(mixed_bc(), UNIT.replace(sigma=0.1))
    loads = random_smooth_loads(ops, 7)
    from poroinfsup.solver import LoadData

    scaled = LoadData(f_u=lambda x, t: 3 * loads.f_u(x, t), f_p=lambda x, t: 3 * loads.f_p(x, t), l0=3 * loads.l0)
    a, b = stability_ratio(ops, loads, 4), stability_ratio(ops, scaled, 4)
    assert a.ratio == pytest.approx(b.ratio, rel=1e-10)
    assert b.rhs_sq == pytest.approx(9 * a.rhs_sq, rel=1e-12)


def test_stability_ratio_lambda_and_storage():
    bc = mixed_bc()
    ratios = []
    for lam in (1.0, 1e4, 1e8):
        ops = make_ops(bc, UNIT.replace(lam=lam, sigma=0.0))
        ratios.append(stability_ratio(ops, random_smooth_loads(ops, 3), 8).ratio)
    ops = make_ops(bc, UNIT.replace(sigma=1.0))
    ratios.append(stability_ratio(ops, random_smooth_loads(ops, 3), 8).ratio)
    assert all(np.isfinite(ratios)) and spread(ratios) <= 100


def test_evaluate_point_row():
    bc = mixed_bc()
    ops = make_ops(bc, UNIT)
    c, C = div_infsup_constants(ops)
    row = evaluate_point(SweepSetup(unit_square_mesh(4), bc, 4, 0, c, C), UNIT.replace(sigma=1e-4))
    for key in ("stability_ratio", "pivot_ratio", "infsup_constant", "boundedness_solution", "l2l2_ratio",
                "antiderivative_ratio", "P0_ratio", "P1_ratio", "P2_ratio"):
        assert math.isfinite(row[key]) and row[key] > 0
    assert row["nonsingular"] and row["storage_bound_holds"]
    assert row["P0_ratio"] <= row["P1_ratio"] <= row["P2_ratio"]
    assert check_Pr_bound(stability_ratio(ops, random_smooth_loads(ops, 0), 4).trajectory, 0, ops) > 0
