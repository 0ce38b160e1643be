import numpy as np
import pytest
from oracles import fd_jacobians, random_ibr, random_sg, worst_jacobian_error
from scipy.optimize import fsolve, root

from portmap.apparatus import (
    GridFollowingInverter,
    IBRParams,
    SGParams,
    SynchronousGenerator,
    ibr_dynamics,
    isolated_rotor,
    linearize,
    sg_dynamics,
    solve_steady_state,
)
from portmap.errors import ModelDomainError, NoSteadyStateError, PreconditionError
from portmap.numerics import central_difference_jacobian, complex_step_jacobian, newton


# ---- numerics --------------------------------------------------------------

def test_complex_step_agrees_with_central_difference(rng):
    def fun(x):
        return np.array([x[0] ** 2 * x[1], np.sin(x[0]) + x[1] ** 3])

    x = rng.normal(size=2)
    np.testing.assert_allclose(complex_step_jacobian(fun, x), central_difference_jacobian(fun, x),
                               rtol=1e-7, atol=1e-9)


def test_newton_solves_and_reports_failure():
    x, res, _ = newton(lambda x: np.array([x[0] ** 2 - 2.0]), [1.0])
    assert x[0] == pytest.approx(np.sqrt(2.0), abs=1e-12)
    assert res < 1e-12
    with pytest.raises(NoSteadyStateError) as err:
        newton(lambda x: np.array([x[0] ** 2 + 1.0]), [1.0], maxiter=20)
    assert err.value.residual > 0.5


# ---- nonlinear models ------------------------------------------------------

def test_sg_no_load_point():
    p = SGParams(K_D=0.3)
    x = np.array([0.0, -p.psi_f, 1.0])
    dx, y = sg_dynamics(p, x, [1.0, 0.0, p.K_D])
    np.testing.assert_allclose(dx, 0.0, atol=1e-14)
    np.testing.assert_allclose(y, [0.0, 0.0, 1.0, 0.0], atol=1e-14)


def test_sg_torque_is_flux_times_d_current():
    p = SGParams(L=0.2)
    x = np.array([-0.5 * p.L, -1.0, 1.0])  # i_d = 0.5
    _, y = sg_dynamics(p, x, [1.0, 0.0, 0.0])
    assert y[0] == pytest.approx(0.5)
    assert y[3] == pytest.approx(0.5)


def test_ibr_zero_power_point_is_stationary():
    p = IBRParams()
    x = np.array([0.0, 0.0, 1.0, 0.0, 0.0, p.v_dc_ref, 0.0])
    dx, y = ibr_dynamics(p, x, [1.0, 0.0, 0.0])
    np.testing.assert_allclose(dx, 0.0, atol=1e-13)
    assert y[2] == pytest.approx(1.0)


def test_ibr_rejects_nonpositive_dc_voltage():
    p = IBRParams()
    with pytest.raises(ModelDomainError):
        ibr_dynamics(p, np.array([0, 0, 0, 0, 0, -0.1, 0.0]), [1.0, 0.0, 0.0])


@pytest.mark.parametrize("make", [random_sg, random_ibr], ids=["sg", "ibr"])
def test_analytic_jacobians_match_finite_differences(make):
    assert worst_jacobian_error(make) < 1e-6


def test_parameter_validation():
    with pytest.raises(ValueError):
        SGParams(J=0.0)
    with pytest.raises(ValueError):
        IBRParams(kp_pll=-1.0)


# ---- steady states ---------------------------------------------------------

def test_sg_no_load_steady_state():
    app, op = SynchronousGenerator(SGParams(K_D=0.4), "G").steady_state(0.0, 0.0, 1.0)
    np.testing.assert_allclose([op.i_d0, op.i_q0], 0.0, atol=1e-12)
    np.testing.assert_allclose([op.v_d0, op.v_q0], [1.0, 0.0], atol=1e-12)
    assert op.u0[2] == pytest.approx(0.4)
    assert app.params.psi_f == pytest.approx(1.0)


def test_ibr_no_load_steady_state():
    app, op = GridFollowingInverter(IBRParams(), "I").steady_state(0.0, 0.0, 1.0)
    np.testing.assert_allclose([op.i_d0, op.i_q0], 0.0, atol=1e-12)
    assert op.x0[5] == pytest.approx(app.params.v_dc_ref)


def test_ibr_loaded_steady_state_has_locked_pll_and_settled_integrators():
    app, op = GridFollowingInverter(IBRParams(), "I").steady_state(0.5, 0.2, 1.02, 0.3)
    assert op.v_q0 == pytest.approx(0.0, abs=1e-14)
    dx = app.derivatives(op.x0, op.u0)
    np.testing.assert_allclose(dx[[2, 3]], 0.0, atol=1e-10)
    S = complex(op.v_d0, op.v_q0) * np.conj(complex(op.i_d0, op.i_q0))
    assert S == pytest.approx(0.5 + 0.2j, abs=1e-10)


def test_ibr_off_nominal_frequency_is_rejected():
    with pytest.raises(PreconditionError):
        GridFollowingInverter(IBRParams(), "I").steady_state(0.1, 0, 1.0, omega_0=1.01)


def test_sg_loaded_steady_state_matches_grid_search():
    p = SGParams(R=0.02, L=0.25)
    P, Q, V = 0.5, 0.1, 1.0
    Ic = np.conj(P + 1j * Q) / V

    def residual(psi_f, eps):
        rot = np.exp(-1j * eps)
        v, i = V * rot, Ic * rot
        psi_d, psi_q = -p.L * i.real, -p.L * i.imag - psi_f
        return np.array([v.real + p.R * i.real + psi_q, v.imag + p.R * i.imag - psi_d])

    pf_grid, eps_grid = np.meshgrid(np.linspace(0.5, 2.0, 301), np.linspace(-1.5, 1.5, 301))
    norms = np.hypot(*residual(pf_grid, eps_grid))
    k = np.unravel_index(np.argmin(norms), norms.shape)
    sol = root(lambda z: residual(*z), [pf_grid[k], eps_grid[k]], tol=1e-14)
    app, op = solve_steady_state(SynchronousGenerator(p, "G"), P=P, Q=Q, V=V)
    assert app.params.psi_f == pytest.approx(sol.x[0], abs=1e-9)
    assert op.epsilon_0 == pytest.approx(sol.x[1], abs=1e-9)
    assert op.residual < 1e-10


def test_steady_state_from_phasors_equals_power_form():
    sg = SynchronousGenerator(SGParams(), "G")
    Vc = 1.01 * np.exp(0.2j)
    Ic = np.conj((0.4 + 0.05j) / Vc)
    _, a = solve_steady_state(sg, v_dq=Vc, i_dq=Ic)
    _, b = solve_steady_state(sg, P=0.4, Q=0.05, V=1.01, theta=0.2)
    np.testing.assert_allclose(a.x0, b.x0, atol=1e-12)
    with pytest.raises(PreconditionError):
        solve_steady_state(sg, P=0.4)


# ---- linearization ---------------------------------------------------------

def _loaded_sg(**kw):
    return SynchronousGenerator(SGParams(**kw), "G").steady_state(0.5, 0.1, 1.0)


def test_linearized_sg_matches_finite_differences():
    app, op = _loaded_sg()
    G = linearize(app, op).model
    for an, fd in zip((G.A, G.B, G.C, G.D), fd_jacobians(app, op.x0, op.u0)):
        np.testing.assert_allclose(an, fd, rtol=1e-6, atol=1e-6 * max(1.0, np.abs(fd).max()))


def test_linearize_requires_stationary_point():
    app, op = _loaded_sg()
    shifted = type(op)(op.x0 + 0.01, op.u0, op.y0, op.epsilon_0)
    with pytest.raises(PreconditionError):
        linearize(app, shifted)


def test_huge_inertia_freezes_the_speed_row():
    app, op = _loaded_sg(J=1e9)
    G = linearize(app, op).model
    assert np.max(np.abs(G.A[2])) < 1e-8
    T_omega = G.evaluate(2j * np.pi)[2, 2]
    assert abs(T_omega) < 1e-8


def test_isolated_rotor_transfer():
    p = SGParams(J=5.0, K_D=0.7)
    m = isolated_rotor(p, "R")
    for s in (0.0, 1j, 3 + 4j):
        assert m.evaluate(s)[0, 0] == pytest.approx(1 / (s * p.J + p.K_D))


def test_linearized_torque_is_flux_times_d_current():
    app, op = _loaded_sg()
    G = linearize(app, op).model
    dT = central_difference_jacobian(lambda x: np.atleast_1d(app.electrical_torque(x)), op.x0)
    np.testing.assert_allclose(dT[0], app.params.psi_f * G.C[0], rtol=1e-9, atol=1e-12)


def test_dc_gain_matches_static_nonlinear_perturbation():
    app, op = _loaded_sg(K_D=1.0)
    G = linearize(app, op).model
    dv = np.array([1e-6, -0.5e-6, 0.0])
    predicted = (G.D - G.C @ np.linalg.solve(G.A, G.B)) @ dv
    x1 = fsolve(lambda x: app.derivatives(x, op.u0 + dv), op.x0, xtol=1e-14)
    actual = app.outputs(x1, op.u0 + dv) - op.y0
    np.testing.assert_allclose(actual[:2], predicted[:2], rtol=1e-2, atol=1e-12)


def test_ibr_dc_current_supplies_terminal_power():
    _, op = GridFollowingInverter(IBRParams(), "I").steady_state(0.5, 0.1, 1.0)
    assert op.u0[2] * op.x0[5] == pytest.approx(0.5, abs=1e-12)
