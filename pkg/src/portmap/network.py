"""Electrical network: power flow and s-domain nodal admittance/impedance.

The dynamic network lives in the global DQ frame rotating at ``omega_0``
(per-unit, normally 1). Series branches are R-L with their currents as
states, every non-source bus carries a shunt capacitance whose voltage is
a state. In this frame the fundamental-frequency phasor network is the
``s = 0`` value of the DQ operators, with each complex number ``a + jb``
appearing as the real block ``[[a, -b], [b, a]]``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import InfeasiblePowerFlowError, NetworkError
from .lti import PortLabel, StateSpaceModel, select_ports

DEFAULT_SHUNT_C = 1e-4
JROT = np.array([[0.0, -1.0], [1.0, 0.0]])


@dataclass(frozen=True)
class BusSpec:
    id: str
    kind: str = "PQ"
    V: float = 1.0
    angle: float = 0.0
    P_gen: float = 0.0
    Q_gen: float = 0.0
    P_load: float = 0.0
    Q_load: float = 0.0
    G_shunt: float = 0.0
    B_shunt: float = 0.0
    shunt_C: float | None = None
    infinite: bool = False

    def __post_init__(self):
        if self.kind not in ("slack", "PV", "PQ"):
            raise NetworkError(f"bus {self.id}: unknown kind {self.kind!r}")
        if self.infinite and self.kind != "slack":
            raise NetworkError(f"bus {self.id}: an infinite bus must be the slack")


@dataclass(frozen=True)
class BranchSpec:
    from_bus: str
    to_bus: str
    R: float = 0.0
    L: float = 0.1
    B: float = 0.0
    tap: float = 1.0
    id: str | None = None

    def __post_init__(self):
        if self.R < 0 or self.L <= 0:
            raise NetworkError(f"branch {self.name}: need R >= 0 and L > 0")
        if str(self.from_bus) == str(self.to_bus):
            raise NetworkError(f"branch {self.name}: from and to bus coincide")
        if self.tap <= 0:
            raise NetworkError(f"branch {self.name}: tap must be positive")

    @property
    def name(self):
        return self.id or f"{self.from_bus}-{self.to_bus}"


@dataclass(frozen=True)
class Network:
    buses: tuple
    branches: tuple
    omega_base: float = 2 * math.pi * 60.0
    omega_0: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "buses", tuple(self.buses))
        object.__setattr__(self, "branches", tuple(self.branches))
        ids = [b.id for b in self.buses]
        if len(set(ids)) != len(ids):
            raise NetworkError("duplicate bus ids")
        known = set(ids)
        for br in self.branches:
            for end in (br.from_bus, br.to_bus):
                if end not in known:
                    raise NetworkError(f"branch {br.name} references unknown bus {end!r}")

    @property
    def bus_ids(self):
        return [b.id for b in self.buses]

    def bus(self, bus_id) -> BusSpec:
        for b in self.buses:
            if b.id == bus_id:
                return b
        raise NetworkError(f"unknown bus {bus_id!r}")

    def branch(self, name) -> BranchSpec:
        for br in self.branches:
            if br.name == name:
                return br
        raise NetworkError(f"unknown branch {name!r}")

    def with_branch(self, name, **changes) -> "Network":
        brs = tuple(replace(b, **changes) if b.name == name else b for b in self.branches)
        return replace(self, branches=brs)

    def with_bus(self, bus_id, **changes) -> "Network":
        buses = tuple(replace(b, **changes) if b.id == bus_id else b for b in self.buses)
        return replace(self, buses=buses)

    def shunt_capacitance(self, bus: BusSpec) -> float:
        """Dynamic capacitance at a bus: explicit/default shunt + line charging + capacitor banks."""
        c = DEFAULT_SHUNT_C if bus.shunt_C is None else bus.shunt_C
        c += max(bus.B_shunt, 0.0)
        for br in self.branches:
            if bus.id in (br.from_bus, br.to_bus):
                c += br.B / 2
        return c


# --------------------------------------------------------------------------
# dynamic lumped network


@dataclass(frozen=True, eq=False)
class DynamicNetwork:
    """Lumped RLC network in the DQ frame.

    ``series`` rows are ``(from, to, R, L, tap)`` where ``to`` indexes a
    state bus, or ``-1`` for ground, or ``-2 - k`` for infinite bus ``k``.
    """

    bus_ids: tuple
    source_ids: tuple
    source_voltage: np.ndarray
    series: tuple
    series_names: tuple
    C: np.ndarray
    G: np.ndarray
    omega_base: float
    omega_0: float = 1.0

    @property
    def n_bus(self):
        return len(self.bus_ids)

    @property
    def n_states(self):
        return 2 * (len(self.series) + self.n_bus)

    def bus_index(self, bus_id):
        try:
            return self.bus_ids.index(bus_id)
        except ValueError:
            raise NetworkError(f"bus {bus_id!r} is not a state bus") from None

    def state_names(self):
        names = []
        for nm in self.series_names:
            names += [f"{nm}.i_D", f"{nm}.i_Q"]
        for b in self.bus_ids:
            names += [f"{b}.v_D", f"{b}.v_Q"]
        return names


def _load_admittance(bus: BusSpec, V: float) -> complex:
    return (bus.P_load - 1j * bus.Q_load) / (V * V)


def dynamic_network(net: Network, pf: "PowerFlowSolution | None" = None,
                    include_loads: bool = True) -> DynamicNetwork:
    """Lump the network into series R-L elements and shunt C/G per bus.

    Loads become constant admittances at the power-flow voltage: the
    conductance is static, an inductive susceptance becomes a shunt
    inductor, a capacitive one adds capacitance.
    """
    state = [b for b in net.buses if not b.infinite]
    sources = [b for b in net.buses if b.infinite]
    sidx = {b.id: k for k, b in enumerate(state)}
    oidx = {b.id: k for k, b in enumerate(sources)}

    def end(bid):
        return sidx[bid] if bid in sidx else -2 - oidx[bid]

    series, names = [], []
    for br in net.branches:
        f, t, tap = br.from_bus, br.to_bus, br.tap
        if f in oidx and t in oidx:
            continue
        if f in oidx:
            # keep the state bus on the "from" side; move the tap across
            f, t = t, f
            names.append(br.name)
            series.append((end(f), end(t), br.R * tap ** 2, br.L * tap ** 2, 1.0 / tap))
            continue
        names.append(br.name)
        series.append((end(f), end(t), br.R, br.L, tap))
    C = np.zeros(len(state))
    G = np.zeros(len(state))
    for k, b in enumerate(state):
        C[k] = net.shunt_capacitance(b)
        G[k] = b.G_shunt
        if b.B_shunt < 0:
            series.append((k, -1, 0.0, -1.0 / b.B_shunt, 1.0))
            names.append(f"shunt_L@{b.id}")
        if include_loads and (b.P_load or b.Q_load):
            if pf is None:
                raise NetworkError("loads need a power-flow solution to become impedances")
            y = _load_admittance(b, abs(pf.voltage(b.id)))
            G[k] += y.real
            if y.imag > 0:
                C[k] += y.imag / net.omega_0
            elif y.imag < 0:
                series.append((k, -1, 0.0, -1.0 / y.imag / net.omega_0, 1.0))
                names.append(f"load_L@{b.id}")
    if np.any(C <= 0):
        bad = [state[k].id for k in np.flatnonzero(C <= 0)]
        raise NetworkError(
            f"buses {bad} have no shunt capacitance; the nodal operator is not "
            f"invertible as a proper system (add a small shunt_C, e.g. {DEFAULT_SHUNT_C})"
        )
    vs = np.array([
        pf.voltage(b.id) if pf is not None else b.V * np.exp(1j * b.angle) for b in sources
    ], dtype=complex)
    return DynamicNetwork(
        tuple(b.id for b in state), tuple(b.id for b in sources), vs,
        tuple(series), tuple(names), C, G, net.omega_base, net.omega_0,
    )


def branch_impedance_dq(R, L, omega_0=1.0, omega_base=1.0, label="br") -> StateSpaceModel:
    """Series R-L as a DQ operator.

    ``Z(s) = [[R + sL/wb, -w0 L], [w0 L, R + sL/wb]]`` is improper, so the
    realization returned is its inverse, the admittance ``i = Y(s) v``
    (states: branch current).
    """
    a = omega_base / L
    A = -a * (R * np.eye(2) + omega_0 * L * JROT)
    B = a * np.eye(2)
    return StateSpaceModel(
        A, B, np.eye(2), np.zeros((2, 2)),
        [PortLabel(label, "v_D"), PortLabel(label, "v_Q")],
        [PortLabel(label, "i_D"), PortLabel(label, "i_Q")],
        [f"{label}.i_D", f"{label}.i_Q"],
    )


def branch_impedance_matrix(R, L, s, omega_0=1.0, omega_base=1.0) -> np.ndarray:
    """Pointwise ``Z(s)`` of a series R-L branch in the DQ frame."""
    return (R + s * L / omega_base) * np.eye(2) + omega_0 * L * JROT


# --------------------------------------------------------------------------
# nodal admittance / impedance


@dataclass(frozen=True, eq=False)
class NodalAdmittance:
    """``Y(s) = Y_series(s) + G_shunt + s C / omega_base`` over the state buses.

    ``series`` is a proper state-space model (voltages to branch-sum
    currents); the shunt part carries the improper ``sC`` term so no
    descriptor realization is needed.
    """

    series: StateSpaceModel
    static: np.ndarray
    derivative: np.ndarray
    bus_ids: tuple
    omega_base: float

    def evaluate(self, s) -> np.ndarray:
        Ys = self.series.evaluate(s) if self.series.n_states else self.series.D
        return Ys + self.static + s * self.derivative

    def block(self, s, i, j) -> np.ndarray:
        Y = self.evaluate(s)
        return Y[2 * i:2 * i + 2, 2 * j:2 * j + 2]


def _incidence(dyn: DynamicNetwork):
    """Per-element maps: branch voltage = E_k^T v, injection = E_k i_k."""
    n = dyn.n_bus
    blocks = []
    for f, t, R, L, tap in dyn.series:
        E = np.zeros((2 * n, 2))
        E[2 * f:2 * f + 2] = np.eye(2) / tap
        if t >= 0:
            E[2 * t:2 * t + 2] -= np.eye(2)
        blocks.append(E)
    return blocks


def build_nodal_admittance(net_or_dyn, pf=None) -> NodalAdmittance:
    """Nodal assembly over 2x2 DQ blocks, shunt capacitors kept dynamic."""
    dyn = net_or_dyn if isinstance(net_or_dyn, DynamicNetwork) else dynamic_network(net_or_dyn, pf)
    n = dyn.n_bus
    ns = len(dyn.series)
    wb, w0 = dyn.omega_base, dyn.omega_0
    E = _incidence(dyn)
    A = np.zeros((2 * ns, 2 * ns))
    B = np.zeros((2 * ns, 2 * n))
    C = np.zeros((2 * n, 2 * ns))
    for k, (f, t, R, L, tap) in enumerate(dyn.series):
        a = wb / L
        sl = slice(2 * k, 2 * k + 2)
        A[sl, sl] = -a * (R * np.eye(2) + w0 * L * JROT)
        B[sl] = a * E[k].T
        C[:, sl] = E[k]
    labels_v = [PortLabel(b, s) for b in dyn.bus_ids for s in ("v_D", "v_Q")]
    labels_i = [PortLabel(b, s) for b in dyn.bus_ids for s in ("i_D", "i_Q")]
    series = StateSpaceModel(
        A, B, C, np.zeros((2 * n, 2 * n)), labels_v, labels_i, dyn.state_names()[:2 * ns]
    )
    static = np.zeros((2 * n, 2 * n))
    deriv = np.zeros((2 * n, 2 * n))
    for k in range(n):
        sl = slice(2 * k, 2 * k + 2)
        static[sl, sl] = dyn.G[k] * np.eye(2) + w0 * dyn.C[k] * JROT
        deriv[sl, sl] = dyn.C[k] / wb * np.eye(2)
    return NodalAdmittance(series, static, deriv, dyn.bus_ids, wb)


@dataclass(frozen=True, eq=False)
class NodalImpedance:
    model: StateSpaceModel
    admittance: NodalAdmittance

    @property
    def bus_ids(self):
        return tuple(lab.apparatus_id for lab in self.model.input_labels[::2])

    def evaluate(self, s):
        return self.model.evaluate(s)


def nodal_impedance(Y: NodalAdmittance, retained_buses=None) -> NodalImpedance:
    """State-space inverse of ``Y`` seen from the retained buses.

    Passive buses keep their dynamics (their voltage states stay in the
    model); only their injection ports are dropped, which is Kron reduction
    in operator form.
    """
    deriv = np.diag(Y.derivative)
    if np.any(deriv <= 0):
        raise NetworkError(
            "nodal admittance has no shunt capacitance at some bus; add a small "
            f"shunt_C (e.g. {DEFAULT_SHUNT_C}) to regularize"
        )
    n2 = Y.static.shape[0]
    Minv = np.diag(1.0 / deriv)
    S = Y.series
    ns = S.n_states
    # (C/wb) v' = i - static v - (Cs x + Ds v);  x' = As x + Bs v
    A = np.zeros((ns + n2, ns + n2))
    A[:ns, :ns] = S.A
    A[:ns, ns:] = S.B
    A[ns:, :ns] = -Minv @ S.C
    A[ns:, ns:] = -Minv @ (Y.static + S.D)
    B = np.vstack([np.zeros((ns, n2)), Minv])
    C = np.hstack([np.zeros((n2, ns)), np.eye(n2)])
    ins = [PortLabel(b, s) for b in Y.bus_ids for s in ("i_D", "i_Q")]
    outs = [PortLabel(b, s) for b in Y.bus_ids for s in ("v_D", "v_Q")]
    names = list(S.state_names) + [str(x) for x in outs]
    model = StateSpaceModel(A, B, C, np.zeros((n2, n2)), ins, outs, names)
    if retained_buses is not None:
        keep = [str(b) for b in retained_buses]
        missing = set(keep) - set(Y.bus_ids)
        if missing:
            raise NetworkError(f"cannot retain unknown buses {sorted(missing)}")
        model = select_ports(
            model,
            [PortLabel(b, s) for b in keep for s in ("i_D", "i_Q")],
            [PortLabel(b, s) for b in keep for s in ("v_D", "v_Q")],
        )
    return NodalImpedance(model, Y)


# --------------------------------------------------------------------------
# phasor power flow


def phasor_admittance(net: Network, pf=None, include_loads=False) -> tuple[np.ndarray, list]:
    """Textbook complex bus admittance matrix at the fundamental frequency.

    Includes line charging, taps, static shunts and the dynamic shunt
    capacitances (so the power flow equilibrium is an equilibrium of the
    dynamic network). Infinite buses are kept as ordinary nodes.
    """
    ids = net.bus_ids
    idx = {b: k for k, b in enumerate(ids)}
    n = len(ids)
    Y = np.zeros((n, n), dtype=complex)
    w0 = net.omega_0
    for br in net.branches:
        f, t = idx[br.from_bus], idx[br.to_bus]
        y = 1.0 / (br.R + 1j * w0 * br.L)
        Y[f, f] += y / br.tap ** 2
        Y[t, t] += y
        Y[f, t] -= y / br.tap
        Y[t, f] -= y / br.tap
    for b in net.buses:
        k = idx[b.id]
        c = DEFAULT_SHUNT_C if b.shunt_C is None else b.shunt_C
        if b.infinite:
            c = 0.0
        Y[k, k] += b.G_shunt + 1j * b.B_shunt + 1j * w0 * c
        for br in net.branches:
            if b.id in (br.from_bus, br.to_bus):
                Y[k, k] += 1j * br.B / 2
        if include_loads and pf is not None and (b.P_load or b.Q_load):
            Y[k, k] += _load_admittance(b, abs(pf.voltage(b.id)))
    return Y, ids


@dataclass(frozen=True, eq=False)
class PowerFlowSolution:
    bus_ids: tuple
    V: np.ndarray
    S_injection: np.ndarray
    branch_flows: dict
    mismatch: float
    iterations: int
    history: tuple = field(default=())

    def voltage(self, bus_id) -> complex:
        return complex(self.V[self.bus_ids.index(bus_id)])

    def injection(self, bus_id) -> complex:
        return complex(self.S_injection[self.bus_ids.index(bus_id)])


def solve_power_flow(net: Network, tol=1e-10, maxiter=30) -> PowerFlowSolution:
    """Newton-Raphson on the polar mismatch equations."""
    Y, ids = phasor_admittance(net)
    n = len(ids)
    kinds = [b.kind for b in net.buses]
    slack = [k for k, t in enumerate(kinds) if t == "slack"]
    if len(slack) != 1:
        raise NetworkError(f"need exactly one slack bus, found {len(slack)}")
    pv = [k for k, t in enumerate(kinds) if t == "PV"]
    pq = [k for k, t in enumerate(kinds) if t == "PQ"]
    Vm = np.array([b.V if b.kind != "PQ" else 1.0 for b in net.buses], dtype=float)
    Va = np.array([b.angle if b.kind == "slack" else 0.0 for b in net.buses], dtype=float)
    Va[:] = Va[slack[0]]
    P_spec = np.array([b.P_gen - b.P_load for b in net.buses])
    Q_spec = np.array([b.Q_gen - b.Q_load for b in net.buses])
    pvpq = pv + pq
    history = []

    def mismatch(Vm, Va):
        V = Vm * np.exp(1j * Va)
        S = V * np.conj(Y @ V)
        dP = S.real - P_spec
        dQ = S.imag - Q_spec
        return V, S, np.concatenate([dP[pvpq], dQ[pq]])

    V, S, F = mismatch(Vm, Va)
    norm = np.max(np.abs(F)) if F.size else 0.0
    history.append(norm)
    it = 0
    while norm > tol:
        if it >= maxiter:
            raise InfeasiblePowerFlowError(
                f"power flow diverged after {maxiter} iterations (mismatch {norm:.3e})", history
            )
        Ibus = Y @ V
        dV = np.diag(V)
        dS_dVa = 1j * dV @ np.conj(np.diag(Ibus) - Y @ dV)
        dS_dVm = dV @ np.conj(Y @ np.diag(V / np.abs(V))) + np.conj(np.diag(Ibus)) @ np.diag(V / np.abs(V))
        J = np.block([
            [dS_dVa[np.ix_(pvpq, pvpq)].real, dS_dVm[np.ix_(pvpq, pq)].real],
            [dS_dVa[np.ix_(pq, pvpq)].imag, dS_dVm[np.ix_(pq, pq)].imag],
        ])
        dx = np.linalg.solve(J, -F)
        Va[pvpq] += dx[:len(pvpq)]
        Vm[pq] += dx[len(pvpq):]
        V, S, F = mismatch(Vm, Va)
        norm = np.max(np.abs(F))
        history.append(norm)
        it += 1
        if not np.isfinite(norm):
            raise InfeasiblePowerFlowError("power flow produced non-finite mismatch", history)
    flows = {}
    idx = {b: k for k, b in enumerate(ids)}
    for br in net.branches:
        f, t = idx[br.from_bus], idx[br.to_bus]
        y = 1.0 / (br.R + 1j * net.omega_0 * br.L)
        i_series = (V[f] / br.tap - V[t]) * y
        i_f = i_series / br.tap + 1j * br.B / 2 * V[f]
        i_t = -i_series + 1j * br.B / 2 * V[t]
        flows[br.name] = (complex(V[f] * np.conj(i_f)), complex(V[t] * np.conj(i_t)))
    return PowerFlowSolution(tuple(ids), V, S, flows, float(norm), it, tuple(history))


def short_circuit_ratio(net: Network, bus_id) -> float:
    """``1 / |Z_thevenin|`` at the fundamental frequency, infinite buses shorted."""
    b = net.bus(bus_id)
    if b.infinite:
        return math.inf
    Y, ids = phasor_admittance(net)
    keep = [k for k, bb in enumerate(net.buses) if not bb.infinite]
    Yr = Y[np.ix_(keep, keep)]
    k = keep.index(ids.index(bus_id))
    Z = np.linalg.inv(Yr)[k, k]
    return 1.0 / abs(Z)
