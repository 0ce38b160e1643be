"""Frame mapping and grid closure of apparatus port matrices.

``G`` (local frame) -> ``G'`` (global DQ frame, frame angle appended as a
state driven by the apparatus speed) -> ``G''`` (grid impedance closed
around the electrical port). Multi-apparatus systems stack the ``G'`` and
close them against the nodal impedance of the network.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .apparatus import LocalPortMatrix
from .errors import NetworkError, StructuralError
from .lti import (
    PortLabel,
    StateSpaceModel,
    append,
    close_feedback,
    transform_ports,
)


def rotation_matrix(epsilon: float) -> np.ndarray:
    c, s = np.cos(epsilon), np.sin(epsilon)
    return np.array([[c, -s], [s, c]])


@dataclass(frozen=True)
class FrameRotation:
    epsilon: float

    @property
    def matrix(self) -> np.ndarray:
        return rotation_matrix(self.epsilon)

    @property
    def inverse(self) -> np.ndarray:
        return self.matrix.T


def rotate(epsilon: float, u_dq) -> np.ndarray:
    """Local dq vector expressed in the global DQ frame."""
    return rotation_matrix(epsilon) @ np.asarray(u_dq, dtype=float)


def linearized_rotation(epsilon_0: float, u_dq0) -> np.ndarray:
    """2x3 map ``(du_d, du_q, d_epsilon) -> du_DQ`` about ``(epsilon_0, u_dq0)``."""
    u_d0, u_q0 = u_dq0
    U0 = np.array([[-u_q0], [u_d0]])
    return rotation_matrix(epsilon_0) @ np.hstack([np.eye(2), U0])


@dataclass(frozen=True, eq=False)
class GlobalPortMatrix:
    """Apparatus port matrix with the electrical port in the global frame.

    Inputs: ``v_D, v_Q`` then the mechanical/dc inputs; outputs ``i_D, i_Q``
    then the mechanical/dc outputs. The last state is the frame angle.
    """

    model: StateSpaceModel
    local: LocalPortMatrix = field(repr=False)

    @property
    def apparatus_id(self):
        return self.local.apparatus_id

    @property
    def op(self):
        return self.local.op


def map_to_global(local: LocalPortMatrix) -> GlobalPortMatrix:
    """Append the frame angle ``d eps/dt = omega_base * d omega`` and rotate ports.

    Electrical port relations about the operating point:
    ``dv_dq = T^-1 dv_DQ - V0 d eps`` and ``di_DQ = T (di_dq + I0 d eps)``.
    """
    G = local.model
    op = local.op
    aid = local.apparatus_id
    names_out = [lab.signal for lab in G.output_labels]
    if "omega" not in names_out:
        raise StructuralError(f"{aid}: no speed output to integrate into the frame angle")
    k_w = names_out.index("omega")
    wb = local.apparatus.omega_base
    T = rotation_matrix(op.epsilon_0)
    Ti = T.T
    V0 = op.V0.reshape(2, 1)
    I0 = op.I0.reshape(2, 1)

    n = G.n_states
    m_mech = G.n_inputs - 2
    p_mech = G.n_outputs - 2
    Bv, Bm = G.B[:, :2], G.B[:, 2:]
    Ci, Cm = G.C[:2], G.C[2:]
    Div, Dim = G.D[:2, :2], G.D[:2, 2:]
    Dmv, Dmm = G.D[2:, :2], G.D[2:, 2:]
    cw = G.C[k_w]
    dwv, dwm = G.D[k_w, :2], G.D[k_w, 2:]

    A = np.zeros((n + 1, n + 1))
    A[:n, :n] = G.A
    A[:n, n:] = -Bv @ V0
    A[n, :n] = wb * cw
    A[n, n] = -wb * float((dwv @ V0)[0])
    B = np.zeros((n + 1, 2 + m_mech))
    B[:n, :2] = Bv @ Ti
    B[:n, 2:] = Bm
    B[n, :2] = wb * dwv @ Ti
    B[n, 2:] = wb * dwm
    C = np.zeros((2 + p_mech, n + 1))
    C[:2, :n] = T @ Ci
    C[:2, n:] = T @ (I0 - Div @ V0)
    C[2:, :n] = Cm
    C[2:, n:] = -Dmv @ V0
    D = np.zeros((2 + p_mech, 2 + m_mech))
    D[:2, :2] = T @ Div @ Ti
    D[:2, 2:] = T @ Dim
    D[2:, :2] = Dmv @ Ti
    D[2:, 2:] = Dmm

    ins = [PortLabel(aid, "v_D"), PortLabel(aid, "v_Q")] + list(G.input_labels[2:])
    outs = [PortLabel(aid, "i_D"), PortLabel(aid, "i_Q")] + list(G.output_labels[2:])
    model = StateSpaceModel(A, B, C, D, ins, outs, G.state_names + (f"{aid}.epsilon",))
    return GlobalPortMatrix(model, local)


@dataclass(frozen=True, eq=False)
class WholeSystemModel:
    """Closed-loop port model of apparatus + network.

    Inputs: series voltage perturbations ``v_bD, v_bQ`` at every apparatus
    terminal (labelled ``<id>.v_D``/``v_Q``) and the mechanical/dc inputs;
    outputs: apparatus currents and mechanical/dc outputs.
    """

    model: StateSpaceModel
    apparatus: dict = field(default_factory=dict)
    network: StateSpaceModel | None = None

    @property
    def poles(self):
        return self.model.poles

    def global_port(self, apparatus_id) -> GlobalPortMatrix:
        return self.apparatus[apparatus_id]


def close_grid(glob: GlobalPortMatrix, Z_b: StateSpaceModel) -> WholeSystemModel:
    """Close ``v = v_b + Z_b i`` around the apparatus electrical port."""
    if Z_b.n_inputs != 2 or Z_b.n_outputs != 2:
        raise StructuralError("Z_b must be a 2x2 DQ impedance")
    aid = glob.apparatus_id
    ports_v = [PortLabel(aid, "v_D"), PortLabel(aid, "v_Q")]
    ports_i = [PortLabel(aid, "i_D"), PortLabel(aid, "i_Q")]
    closed = close_feedback(glob.model, Z_b, ports_v, ports_i, sign=+1.0)
    return WholeSystemModel(closed, {aid: glob}, Z_b)


def assemble_system(apparatuses, network_impedance, bus_of: dict) -> WholeSystemModel:
    """Stack every ``G'`` and close them against the nodal impedance.

    ``network_impedance`` has inputs ``<bus>.i_D/i_Q`` (current injected
    into the bus) and outputs ``<bus>.v_D/v_Q``; ``bus_of`` maps apparatus
    id to bus id. Several apparatus may share one bus.
    """
    apparatuses = list(apparatuses)
    if not apparatuses:
        raise StructuralError("no apparatus to assemble")
    Z = network_impedance
    bus_index = {}
    for k, lab in enumerate(Z.input_labels):
        if lab.signal == "i_D":
            bus_index[lab.apparatus_id] = k
    stacked = append(*[g.model for g in apparatuses])
    # map stacked apparatus currents onto network injections and back
    n_bus_ports = Z.n_inputs
    M = np.zeros((n_bus_ports, 2 * len(apparatuses)))
    for j, g in enumerate(apparatuses):
        bus = bus_of.get(g.apparatus_id)
        if bus is None or str(bus) not in bus_index:
            raise NetworkError(f"apparatus {g.apparatus_id} sits on unknown bus {bus!r}")
        k = bus_index[str(bus)]
        M[k:k + 2, 2 * j:2 * j + 2] = np.eye(2)
    ports_v = []
    ports_i = []
    for g in apparatuses:
        aid = g.apparatus_id
        ports_v += [PortLabel(aid, "v_D"), PortLabel(aid, "v_Q")]
        ports_i += [PortLabel(aid, "i_D"), PortLabel(aid, "i_Q")]
    Z_app = transform_ports(Z, M, M.T, ports_i, ports_v)
    closed = close_feedback(stacked, Z_app, ports_v, ports_i, sign=+1.0)
    return WholeSystemModel(closed, {g.apparatus_id: g for g in apparatuses}, Z)


def global_blocks_at(local: LocalPortMatrix, s) -> np.ndarray:
    """Pointwise closed-form ``G'(s)`` from ``G(s)`` (frame-dynamics formulas).

    With ``M = (s + omega_base G_vw V0)^-1`` (scalar, one speed output):
    ``G'_v* = s M G_w* `` on the speed row and
    ``T [G_x + (I0 - G_vi V0) omega_base M G_w*]`` on the current rows,
    where ``*`` is the input column set and voltage columns are rotated by
    ``T^-1``. Returns the full ``G'(s)`` in the port order of
    :func:`map_to_global`.
    """
    G = local.model.evaluate(s)
    op = local.op
    wb = local.apparatus.omega_base
    k_w = [lab.signal for lab in local.model.output_labels].index("omega")
    T = rotation_matrix(op.epsilon_0)
    V0 = op.V0.reshape(2, 1)
    I0 = op.I0.reshape(2, 1)
    m = G.shape[1]
    R_in = np.eye(m, dtype=complex)
    R_in[:2, :2] = T.T
    Gw = G[k_w:k_w + 1]
    M = 1.0 / (s + wb * (Gw[:, :2] @ V0)[0, 0])
    eps = wb * M * (Gw @ R_in)  # d eps per unit input
    out = G @ R_in
    out[:, :] = out - G[:, :2] @ V0 @ eps
    out[:2] = T @ (out[:2] + I0 @ eps)
    return out


def closed_blocks_at(G_prime: np.ndarray, Z: np.ndarray) -> np.ndarray:
    """Pointwise ``G''`` for ``v = v_b + Z i`` closed around the electrical port.

    ``G''_vi = (I - G'_vi Z)^-1 G'_vi``, ``G''_Ti = (I - G'_vi Z)^-1 G'_Ti``,
    ``G''_vw = G'_vw (I + Z G''_vi)``, ``G''_Tw = G'_Tw + G'_vw Z G''_Ti``.
    """
    Gvi, GTi = G_prime[:2, :2], G_prime[:2, 2:]
    Gvw, GTw = G_prime[2:, :2], G_prime[2:, 2:]
    S = np.linalg.inv(np.eye(2) - Gvi @ Z)
    out = np.zeros_like(G_prime, dtype=complex)
    out[:2, :2] = S @ Gvi
    out[:2, 2:] = S @ GTi
    out[2:, :2] = Gvw @ (np.eye(2) + Z @ out[:2, :2])
    out[2:, 2:] = GTw + Gvw @ Z @ out[:2, 2:]
    return out
