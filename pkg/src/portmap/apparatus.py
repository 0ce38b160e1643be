"""Nonlinear apparatus models, their operating points and local linearization.

Units: voltages, currents, fluxes, torques and speeds are per-unit; time is
in seconds; ``omega_base`` (rad/s) scales the electrical derivatives so
that ``(1/omega_base) dpsi/dt`` is per-unit. Setting ``omega_base=1``
recovers the bare stator/rotor equations. Terminal current is counted
positive flowing out of the apparatus (source convention).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ModelDomainError, PreconditionError
from .lti import PortLabel, StateSpaceModel
from .numerics import newton

OMEGA_BASE_60HZ = 2 * math.pi * 60.0

# residual accepted as "stationary" by linearize(); steady-state solves reach ~1e-13
STATIONARY_TOL = 1e-8


@dataclass(frozen=True)
class SGParams:
    J: float = 8.0
    K_D: float = 0.2
    R: float = 0.01
    L: float = 0.3
    psi_f: float = 1.0
    omega_base: float = OMEGA_BASE_60HZ

    def __post_init__(self):
        if not (self.J > 0 and self.L > 0 and self.R >= 0 and self.K_D >= 0 and self.psi_f > 0):
            raise ValueError(f"invalid SG parameters: {self}")


@dataclass(frozen=True)
class IBRParams:
    """Grid-following inverter parameters.

    Controller gains left as ``None`` are derived from the bandwidths:
    PLL and dc-voltage loops from ``f_bw_pf``, current loops from ``f_bw_i``.
    """

    L_f: float = 0.05
    R_f: float = 0.01
    C_dc: float = 0.1
    v_dc_ref: float = 1.0
    f_bw_pf: float = 25.0
    f_bw_i: float = 250.0
    kp_pll: float | None = None
    ki_pll: float | None = None
    kp_i: float | None = None
    ki_i: float | None = None
    kp_dc: float | None = None
    ki_dc: float | None = None
    i_q_ref: float = 0.0
    omega_base: float = OMEGA_BASE_60HZ

    def __post_init__(self):
        if not (self.L_f > 0 and self.C_dc > 0 and self.R_f >= 0 and self.f_bw_pf > 0
                and self.f_bw_i > 0 and self.v_dc_ref > 0):
            raise ValueError(f"invalid IBR parameters: {self}")
        for name in ("kp_pll", "ki_pll", "kp_i", "ki_i", "kp_dc", "ki_dc"):
            v = getattr(self, name)
            if v is not None and v < 0:
                raise ValueError(f"{name} must be >= 0")

    @property
    def pll_gains(self) -> tuple[float, float]:
        # plant: integrator with gain omega_base (per unit of v_q)
        w = 2 * math.pi * self.f_bw_pf
        m = 1.0 / self.omega_base
        kp = self.kp_pll if self.kp_pll is not None else w * m
        ki = self.ki_pll if self.ki_pll is not None else w * w * m / 4
        return kp, ki

    @property
    def dc_gains(self) -> tuple[float, float]:
        # plant: C s (per unit of i_d at nominal voltage)
        w = 2 * math.pi * self.f_bw_pf
        m = self.C_dc * self.v_dc_ref
        kp = self.kp_dc if self.kp_dc is not None else w * m
        ki = self.ki_dc if self.ki_dc is not None else w * w * m / 4
        return kp, ki

    @property
    def current_gains(self) -> tuple[float, float]:
        w = 2 * math.pi * self.f_bw_i
        m = self.L_f / self.omega_base
        kp = self.kp_i if self.kp_i is not None else w * m
        ki = self.ki_i if self.ki_i is not None else w * w * m / 2
        return kp, ki


@dataclass(frozen=True)
class SGState:
    psi_d: float
    psi_q: float
    omega: float
    epsilon: float = 0.0

    def currents(self, params: SGParams) -> tuple[float, float]:
        return -self.psi_d / params.L, -(self.psi_q + params.psi_f) / params.L


@dataclass(frozen=True, eq=False)
class OperatingPoint:
    """Steady state of one apparatus in its local frame.

    ``u0`` holds the terminal voltage in the local frame followed by the
    mechanical (or dc) port input; ``y0`` the port outputs.
    """

    x0: np.ndarray
    u0: np.ndarray
    y0: np.ndarray
    epsilon_0: float
    omega_0: float = 1.0
    residual: float = 0.0

    @property
    def v_d0(self):
        return float(self.u0[0])

    @property
    def v_q0(self):
        return float(self.u0[1])

    @property
    def i_d0(self):
        return float(self.y0[0])

    @property
    def i_q0(self):
        return float(self.y0[1])

    @property
    def I0(self) -> np.ndarray:
        return np.array([-self.i_q0, self.i_d0])

    @property
    def V0(self) -> np.ndarray:
        return np.array([-self.v_q0, self.v_d0])


class Apparatus:
    """Common surface of the nonlinear apparatus models.

    Subclasses define the state equations ``f(x, u)``, outputs ``h(x, u)``
    and the analytic Jacobian. The first two inputs are always the local
    terminal voltage (v_d, v_q) and the first three outputs (i_d, i_q, omega)
    where omega is the speed of the local frame.
    """

    kind = ""
    state_names: tuple = ()
    input_signals: tuple = ()
    output_signals: tuple = ()
    params = None

    def __init__(self, params, apparatus_id: str = "A"):
        self.params = params
        self.apparatus_id = apparatus_id

    @property
    def n_states(self):
        return len(self.state_names)

    @property
    def omega_base(self):
        return self.params.omega_base

    def with_params(self, **changes):
        return type(self)(replace(self.params, **changes), self.apparatus_id)

    def derivatives(self, x, u):
        raise NotImplementedError

    def outputs(self, x, u):
        raise NotImplementedError

    def jacobians(self, x, u):
        raise NotImplementedError

    def residual(self, op: OperatingPoint) -> float:
        f = self.derivatives(op.x0, op.u0)
        y = self.outputs(op.x0, op.u0)
        return float(max(np.max(np.abs(f)), abs(y[2] - op.omega_0), np.max(np.abs(y - op.y0))))

    def __repr__(self):
        return f"{type(self).__name__}({self.apparatus_id!r}, {self.params})"


def sg_dynamics(params: SGParams, x, u):
    """Stator flux and rotor speed derivatives plus outputs.

    ``x = (psi_d, psi_q, omega)``, ``u = (v_d, v_q, T_m)``. Returns
    ``(dx, (i_d, i_q, omega, T_e))``.
    """
    psi_d, psi_q, w = x[0], x[1], x[2]
    v_d, v_q, T_m = u[0], u[1], u[2]
    i_d = -psi_d / params.L
    i_q = -(psi_q + params.psi_f) / params.L
    T_e = params.psi_f * i_d
    wb = params.omega_base
    dx = np.array([
        wb * (v_d + params.R * i_d + w * psi_q),
        wb * (v_q + params.R * i_q - w * psi_d),
        (T_m - T_e - params.K_D * w) / params.J,
    ])
    return dx, np.array([i_d, i_q, w, T_e])


class SynchronousGenerator(Apparatus):
    kind = "sg"
    state_names = ("psi_d", "psi_q", "omega")
    input_signals = ("v_d", "v_q", "T_m")
    output_signals = ("i_d", "i_q", "omega")

    def derivatives(self, x, u):
        return sg_dynamics(self.params, x, u)[0]

    def outputs(self, x, u):
        return sg_dynamics(self.params, x, u)[1][:3]

    def electrical_torque(self, x):
        return self.params.psi_f * (-x[0] / self.params.L)

    def jacobians(self, x, u):
        p = self.params
        wb, L = p.omega_base, p.L
        psi_d, psi_q, w = x
        A = np.array([
            [-wb * p.R / L, wb * w, wb * psi_q],
            [-wb * w, -wb * p.R / L, -wb * psi_d],
            [p.psi_f / (L * p.J), 0.0, -p.K_D / p.J],
        ])
        B = np.array([[wb, 0.0, 0.0], [0.0, wb, 0.0], [0.0, 0.0, 1.0 / p.J]])
        C = np.array([[-1.0 / L, 0.0, 0.0], [0.0, -1.0 / L, 0.0], [0.0, 0.0, 1.0]])
        D = np.zeros((3, 3))
        return A, B, C, D

    def steady_state(self, P, Q, V, theta=0.0, omega_0=1.0):
        """Operating point delivering ``P + jQ`` at terminal voltage ``V∠theta``.

        The field flux is treated as the excitation setpoint and returned in
        the calibrated apparatus. Returns ``(apparatus, op)``.
        """
        p = self.params
        Vc = V * np.exp(1j * theta)
        Ic = np.conj((P + 1j * Q) / Vc)
        E = Vc + (p.R + 1j * omega_0 * p.L) * Ic
        z0 = np.array([abs(E) / omega_0, np.angle(E)])

        def residual(z):
            psi_f, eps = z
            cal = replace(p, psi_f=psi_f)
            rot = np.exp(-1j * eps)
            v = Vc * rot
            i = Ic * rot
            x = np.array([_flux_d(cal, i), _flux_q(cal, i), omega_0])
            f = sg_dynamics(cal, x, [v.real, v.imag, 0.0])[0]
            return f[:2] / p.omega_base

        z, norm, _ = newton(residual, z0)
        psi_f, eps = z
        cal = replace(p, psi_f=float(psi_f))
        rot = np.exp(-1j * eps)
        v = Vc * rot
        i = Ic * rot
        x0 = np.array([_flux_d(cal, i), _flux_q(cal, i), omega_0])
        T_m = cal.psi_f * i.real + cal.K_D * omega_0
        u0 = np.array([v.real, v.imag, T_m])
        app = type(self)(cal, self.apparatus_id)
        y0 = app.outputs(x0, u0)
        op = OperatingPoint(x0, u0, y0, float(eps), omega_0)
        return app, replace(op, residual=app.residual(op))


def _flux_d(p: SGParams, i):
    return -p.L * i.real


def _flux_q(p: SGParams, i):
    return -p.L * i.imag - p.psi_f


def ibr_dynamics(params: IBRParams, x, u):
    """Averaged grid-following inverter.

    ``x = (i_d, i_q, x_id, x_iq, x_pll, v_dc, x_dc)`` in the PLL frame,
    ``u = (v_d, v_q, i_dc)``. Returns ``(dx, (i_d, i_q, omega, v_dc))``
    where omega is the PLL frequency.
    """
    i_d, i_q, x_id, x_iq, x_pll, v_dc, x_dc = (x[k] for k in range(7))
    v_d, v_q, i_dc = u[0], u[1], u[2]
    if np.any(np.real(v_dc) <= 0):
        raise ModelDomainError(f"dc-link voltage must stay positive, got {v_dc}")
    kp_pll, ki_pll = params.pll_gains
    kp_i, ki_i = params.current_gains
    kp_dc, ki_dc = params.dc_gains
    a = params.omega_base / params.L_f
    w = 1.0 + kp_pll * v_q + x_pll
    i_dref = x_dc + kp_dc * (v_dc - params.v_dc_ref)
    e_d = i_dref - i_d
    e_q = params.i_q_ref - i_q
    p_ac = v_d * i_d + v_q * i_q
    dx = np.array([
        a * (x_id + kp_i * e_d - v_d - params.R_f * i_d),
        a * (x_iq + kp_i * e_q - v_q - params.R_f * i_q),
        ki_i * e_d,
        ki_i * e_q,
        ki_pll * v_q,
        (i_dc - p_ac / v_dc) / params.C_dc,
        ki_dc * (v_dc - params.v_dc_ref),
    ])
    return dx, np.array([i_d, i_q, w, v_dc])


class GridFollowingInverter(Apparatus):
    kind = "ibr"
    state_names = ("i_d", "i_q", "x_id", "x_iq", "x_pll", "v_dc", "x_dc")
    input_signals = ("v_d", "v_q", "i_dc")
    output_signals = ("i_d", "i_q", "omega", "v_dc")

    def derivatives(self, x, u):
        return ibr_dynamics(self.params, x, u)[0]

    def outputs(self, x, u):
        return ibr_dynamics(self.params, x, u)[1]

    def jacobians(self, x, u):
        p = self.params
        kp_pll, ki_pll = p.pll_gains
        kp_i, ki_i = p.current_gains
        kp_dc, ki_dc = p.dc_gains
        a = p.omega_base / p.L_f
        C = p.C_dc
        i_d, i_q, _, _, _, v_dc, _ = x
        v_d, v_q, _ = u
        if v_dc <= 0:
            raise ModelDomainError(f"dc-link voltage must stay positive, got {v_dc}")
        p_ac = v_d * i_d + v_q * i_q
        A = np.zeros((7, 7))
        A[0, [0, 2, 5, 6]] = [-a * (kp_i + p.R_f), a, a * kp_i * kp_dc, a * kp_i]
        A[1, [1, 3]] = [-a * (kp_i + p.R_f), a]
        A[2, [0, 5, 6]] = [-ki_i, ki_i * kp_dc, ki_i]
        A[3, 1] = -ki_i
        A[5, [0, 1, 5]] = [-v_d / (v_dc * C), -v_q / (v_dc * C), p_ac / (v_dc ** 2 * C)]
        A[6, 5] = ki_dc
        B = np.zeros((7, 3))
        B[0, 0] = -a
        B[1, 1] = -a
        B[4, 1] = ki_pll
        B[5] = [-i_d / (v_dc * C), -i_q / (v_dc * C), 1.0 / C]
        Cm = np.zeros((4, 7))
        Cm[0, 0] = Cm[1, 1] = Cm[2, 4] = Cm[3, 5] = 1.0
        D = np.zeros((4, 3))
        D[2, 1] = kp_pll
        return A, B, Cm, D

    def steady_state(self, P, Q, V, theta=0.0, omega_0=1.0):
        """PLL locked to the terminal voltage; ``i_q_ref`` set to deliver Q."""
        p = self.params
        if omega_0 != 1.0:
            raise PreconditionError("grid-following inverter assumes nominal frequency")
        i_d0, i_q0 = P / V, -Q / V
        cal = replace(p, i_q_ref=float(i_q0))
        x_init = np.array([i_d0, i_q0, V + p.R_f * i_d0, p.R_f * i_q0, 0.0, p.v_dc_ref, i_d0])
        u_tail = P / p.v_dc_ref
        app = type(self)(cal, self.apparatus_id)

        kp_pll = cal.pll_gains[0]
        dc_pinned = cal.dc_gains[1] == 0

        # unknowns: 7 states + i_dc; the PLL integrator row is replaced by the
        # locked-frequency condition and one row fixes the delivered power
        def residual(z):
            x, u = z[:7], np.array([V, 0.0, z[7]])
            f = app.derivatives(x, u)
            f[4] = kp_pll * u[1] + x[4]
            if dc_pinned:
                f[6] = x[5] - p.v_dc_ref
            return np.append(f, V * x[0] - P)

        def jac(z):
            x, u = z[:7], np.array([V, 0.0, z[7]])
            A, B, _, _ = app.jacobians(x, u)
            J = np.hstack([A, B[:, 2:3]])
            J[4] = 0.0
            J[4, 4] = 1.0
            if dc_pinned:
                J[6] = 0.0
                J[6, 5] = 1.0
            row = np.zeros(8)
            row[0] = V
            return np.vstack([J, row])

        z, norm, _ = newton(residual, np.append(x_init, u_tail), jac=jac)
        x0 = z[:7]
        u0 = np.array([V, 0.0, z[7]])
        y0 = app.outputs(x0, u0)
        op = OperatingPoint(x0, u0, y0, float(theta), 1.0)
        return app, replace(op, residual=app.residual(op))


def make_apparatus(kind: str, params, apparatus_id: str) -> Apparatus:
    if kind == "sg":
        return SynchronousGenerator(params, apparatus_id)
    if kind == "ibr":
        return GridFollowingInverter(params, apparatus_id)
    raise ValueError(f"unknown apparatus kind {kind!r}")


def solve_steady_state(apparatus: Apparatus, P=None, Q=None, V=None, theta=0.0,
                       v_dq=None, i_dq=None):
    """Operating point from terminal power/voltage or from terminal phasors.

    Either ``(P, Q, V[, theta])`` or ``(v_dq, i_dq)`` given as complex
    numbers in the global frame. Returns ``(calibrated_apparatus, op)``.
    """
    if v_dq is not None and i_dq is not None:
        Vc = complex(v_dq)
        S = Vc * np.conj(complex(i_dq))
        return apparatus.steady_state(S.real, S.imag, abs(Vc), float(np.angle(Vc)))
    if P is None or Q is None or V is None:
        raise PreconditionError("need (P, Q, V) or (v_dq, i_dq)")
    return apparatus.steady_state(P, Q, V, theta)


@dataclass(frozen=True, eq=False)
class LocalPortMatrix:
    """Linearized apparatus in its own frame, with the op it was taken at."""

    model: StateSpaceModel
    op: OperatingPoint
    apparatus: Apparatus = field(repr=False)

    @property
    def apparatus_id(self):
        return self.apparatus.apparatus_id

    @property
    def electrical_inputs(self):
        return self.model.input_labels[:2]

    @property
    def mechanical_inputs(self):
        return self.model.input_labels[2:]

    @property
    def electrical_outputs(self):
        return self.model.output_labels[:2]

    @property
    def mechanical_outputs(self):
        return self.model.output_labels[2:]


def linearize(apparatus: Apparatus, op: OperatingPoint) -> LocalPortMatrix:
    """Local-frame port matrix ``G`` at a stationary operating point.

    The frame angle is not a state here; it is appended by the global
    frame mapping.
    """
    res = apparatus.residual(op)
    if res > STATIONARY_TOL:
        raise PreconditionError(f"operating point is not stationary (residual {res:.2e})")
    A, B, C, D = apparatus.jacobians(op.x0, op.u0)
    aid = apparatus.apparatus_id
    model = StateSpaceModel(
        A, B, C, D,
        [PortLabel(aid, s) for s in apparatus.input_signals],
        [PortLabel(aid, s) for s in apparatus.output_signals],
        [f"{aid}.{s}" for s in apparatus.state_names],
    )
    return LocalPortMatrix(model, op, apparatus)


def isolated_rotor(params: SGParams, apparatus_id: str = "SG") -> StateSpaceModel:
    """Rotor alone: ``J omega' = T_m - K_D omega``."""
    return StateSpaceModel(
        [[-params.K_D / params.J]], [[1.0 / params.J]], [[1.0]], [[0.0]],
        [PortLabel(apparatus_id, "T_m")], [PortLabel(apparatus_id, "omega")],
        [f"{apparatus_id}.omega"],
    )
