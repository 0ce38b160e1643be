"""Time-domain simulation of the full nonlinear apparatus + network ODE.

:class:`CompositeSystem` integrates every apparatus in its own frame, the
frame angles, and the lumped network in the global DQ frame. The same
right-hand side, differentiated by complex step, gives the monolithic
linearization used to cross-check the port-mapped model.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from types import SimpleNamespace

import numpy as np
from scipy.linalg import expm

from . import _kernel
from .apparatus import GridFollowingInverter, SynchronousGenerator, ibr_dynamics, sg_dynamics
from .errors import PortMapError, ScanInapplicableError
from .lti import StateSpaceModel
from .network import DynamicNetwork, Network, PowerFlowSolution, dynamic_network

DIVERGENCE_LIMIT = 1e6


def _network_matrices(dyn: DynamicNetwork):
    """``x' = A x + B_inj i_inj + B_src v_src`` for the lumped network.

    State order: series currents (D, Q) per element, then bus voltages.
    Written element by element with complex phasor algebra and converted to
    real DQ blocks.
    """
    ns, nb = len(dyn.series), dyn.n_bus
    nsrc = len(dyn.source_ids)
    wb, w0 = dyn.omega_base, dyn.omega_0
    Ac = np.zeros((ns + nb, ns + nb), dtype=complex)
    Bi = np.zeros((ns + nb, nb), dtype=complex)
    Bs = np.zeros((ns + nb, nsrc), dtype=complex)
    for k, (f, t, R, L, tap) in enumerate(dyn.series):
        # (L/wb) di/dt = v_f/tap - v_t - (R + j w0 L) i
        Ac[k, k] = -(R + 1j * w0 * L) * wb / L
        Ac[k, ns + f] += wb / L / tap
        if t >= 0:
            Ac[k, ns + t] -= wb / L
        elif t <= -2:
            Bs[k, -2 - t] -= wb / L
        # bus side: current leaves f (scaled by tap), enters t
        Ac[ns + f, k] -= wb / dyn.C[f] / tap
        if t >= 0:
            Ac[ns + t, k] += wb / dyn.C[t]
    for b in range(nb):
        # (C/wb) dv/dt = i_inj - G v - j w0 C v - sum(branch)
        Ac[ns + b, ns + b] += -(dyn.G[b] + 1j * w0 * dyn.C[b]) * wb / dyn.C[b]
        Bi[ns + b, b] = wb / dyn.C[b]
    return _realify(Ac), _realify(Bi), _realify(Bs)


def _realify(M):
    """Complex matrix acting on phasors -> real matrix acting on (D, Q) pairs."""
    r, c = M.shape
    out = np.zeros((2 * r, 2 * c))
    out[0::2, 0::2] = M.real
    out[0::2, 1::2] = -M.imag
    out[1::2, 0::2] = M.imag
    out[1::2, 1::2] = M.real
    return out


def _stack_params(apps, names, col=True):
    ns = SimpleNamespace()
    for name in names:
        vals = np.array([getattr(a.params, name) for a in apps], dtype=float)
        setattr(ns, name, vals[:, None] if col else vals)
    return ns


def _ibr_stack(apps):
    ns = _stack_params(apps, ("L_f", "R_f", "C_dc", "v_dc_ref", "i_q_ref", "omega_base"))
    for prop in ("pll_gains", "current_gains", "dc_gains"):
        pairs = np.array([getattr(a.params, prop) for a in apps], dtype=float)
        setattr(ns, prop, (pairs[:, 0:1], pairs[:, 1:2]))
    return ns


class CompositeSystem:
    """Nonlinear whole-system model.

    State layout: every SG's (psi_d, psi_q, omega) state-major, then SG
    frame angles, the same for inverters, then the network states.
    ``mech`` holds the mechanical torque (SG) or dc current (IBR) inputs.
    """

    def __init__(self, network: Network, pf: PowerFlowSolution, apparatus, bus_of, ops,
                 mech=None):
        self.network = network
        self.pf = pf
        self.apparatus = list(apparatus)
        self.bus_of = dict(bus_of)
        self.ops = dict(ops)
        self.dyn = dynamic_network(network, pf)
        self.sgs = [a for a in self.apparatus if isinstance(a, SynchronousGenerator)]
        self.ibrs = [a for a in self.apparatus if isinstance(a, GridFollowingInverter)]
        self.order = self.sgs + self.ibrs
        if mech is None:
            mech = {a.apparatus_id: float(self.ops[a.apparatus_id].u0[2]) for a in self.order}
        self.mech = dict(mech)
        self._build_layout()

    # -- structure -----------------------------------------------------
    def _build_layout(self):
        nsg, nibr = len(self.sgs), len(self.ibrs)
        self.n_app = nsg + nibr
        k = 0
        self.sg_idx = np.arange(k, k + 3 * nsg).reshape(3, nsg)
        k += 3 * nsg
        self.sg_eps = np.arange(k, k + nsg)
        k += nsg
        self.ibr_idx = np.arange(k, k + 7 * nibr).reshape(7, nibr)
        k += 7 * nibr
        self.ibr_eps = np.arange(k, k + nibr)
        k += nibr
        self.net_offset = k
        self.A_net, self.B_inj, self.B_src = _network_matrices(self.dyn)
        self.n_states = k + self.A_net.shape[0]
        ns = len(self.dyn.series)
        self.bus_v_offset = self.net_offset + 2 * ns
        self.app_bus = np.array([self.dyn.bus_index(str(self.bus_of[a.apparatus_id]))
                                 for a in self.order], dtype=int)
        self.sg_par = _stack_params(self.sgs, ("J", "K_D", "R", "L", "psi_f", "omega_base"))
        self.ibr_par = _ibr_stack(self.ibrs) if self.ibrs else None
        self.v_src = np.concatenate([[v.real, v.imag] for v in self.dyn.source_voltage]) \
            if len(self.dyn.source_voltage) else np.zeros(0)
        self.mech_sg = np.array([self.mech[a.apparatus_id] for a in self.sgs])[:, None]
        self.mech_ibr = np.array([self.mech[a.apparatus_id] for a in self.ibrs])[:, None]
        self.omega_base = self.network.omega_base

    def state_names(self):
        names = [""] * self.n_states
        for j, a in enumerate(self.sgs):
            for s, nm in enumerate(a.state_names):
                names[self.sg_idx[s, j]] = f"{a.apparatus_id}.{nm}"
            names[self.sg_eps[j]] = f"{a.apparatus_id}.epsilon"
        for j, a in enumerate(self.ibrs):
            for s, nm in enumerate(a.state_names):
                names[self.ibr_idx[s, j]] = f"{a.apparatus_id}.{nm}"
            names[self.ibr_eps[j]] = f"{a.apparatus_id}.epsilon"
        for k, nm in enumerate(self.dyn.state_names()):
            names[self.net_offset + k] = nm
        return names

    def initial_state(self) -> np.ndarray:
        x = np.zeros(self.n_states)
        for j, a in enumerate(self.sgs):
            op = self.ops[a.apparatus_id]
            x[self.sg_idx[:, j]] = op.x0
            x[self.sg_eps[j]] = op.epsilon_0
        for j, a in enumerate(self.ibrs):
            op = self.ops[a.apparatus_id]
            x[self.ibr_idx[:, j]] = op.x0
            x[self.ibr_eps[j]] = op.epsilon_0
        V = {b: self.pf.voltage(b) for b in self.pf.bus_ids}
        ns = len(self.dyn.series)
        w0 = self.dyn.omega_0
        for k, (f, t, R, L, tap) in enumerate(self.dyn.series):
            vf = V[self.dyn.bus_ids[f]]
            if t >= 0:
                vt = V[self.dyn.bus_ids[t]]
            elif t == -1:
                vt = 0.0
            else:
                vt = self.dyn.source_voltage[-2 - t]
            i = (vf / tap - vt) / (R + 1j * w0 * L)
            x[self.net_offset + 2 * k: self.net_offset + 2 * k + 2] = [i.real, i.imag]
        for b, bid in enumerate(self.dyn.bus_ids):
            x[self.bus_v_offset + 2 * b: self.bus_v_offset + 2 * b + 2] = [V[bid].real, V[bid].imag]
        assert self.net_offset + 2 * ns == self.bus_v_offset
        return x

    # -- dynamics ------------------------------------------------------
    def kernel_args(self):
        sgp = np.array([[a.params.J, a.params.K_D, a.params.R, a.params.L, a.params.psi_f,
                         a.params.omega_base] for a in self.sgs], dtype=float).reshape(-1, 6)
        rows = []
        for a in self.ibrs:
            p = a.params
            rows.append([p.L_f, p.R_f, p.C_dc, p.v_dc_ref, p.i_q_ref, p.omega_base,
                         *p.pll_gains, *p.current_gains, *p.dc_gains])
        ibrp = np.array(rows, dtype=float).reshape(-1, 12)
        src = self.B_src @ self.v_src if self.v_src.size else np.zeros(self.A_net.shape[0])
        inj_gain = self.dyn.omega_base / self.dyn.C
        return (
            sgp, self.sg_idx.reshape(3, -1), self.sg_eps, self.mech_sg.ravel().copy(),
            ibrp, self.ibr_idx.reshape(7, -1), self.ibr_eps, self.mech_ibr.ravel().copy(),
            self.app_bus, np.ascontiguousarray(self.A_net), np.ascontiguousarray(inj_gain),
            src, self.net_offset, self.bus_v_offset,
        )

    def integrate(self, x0, t0, h, n_steps, v_dc_inj=None, v_ac_inj=None, w_inj=0.0):
        """Compiled RK4 over ``n_steps``; returns ``(X, completed_steps)``.

        Optional series voltage at each apparatus terminal:
        ``v_dc_inj + v_ac_inj * cos(w_inj t)``, both shaped ``(n_app, 2)``.
        """
        zero = np.zeros((self.n_app, 2))
        v_dc_inj = zero if v_dc_inj is None else np.asarray(v_dc_inj, dtype=float)
        v_ac_inj = zero if v_ac_inj is None else np.asarray(v_ac_inj, dtype=float)
        return _kernel.rk4_run(np.asarray(x0, dtype=float), float(t0), float(h), int(n_steps),
                               DIVERGENCE_LIMIT, *self.kernel_args(), v_dc_inj, v_ac_inj,
                               float(w_inj))

    def terminal_voltage(self, X, v_inj=None):
        """Global-frame terminal voltage per apparatus, shape (2, n_app, batch)."""
        vb = X[self.bus_v_offset:].reshape(-1, 2, X.shape[1])
        v = vb[self.app_bus].transpose(1, 0, 2)
        if v_inj is not None:
            v = v + v_inj
        return v

    def rhs(self, X, v_inj=None):
        """Time derivative for a batch of states, ``X`` shape (n, batch)."""
        squeeze = X.ndim == 1
        if squeeze:
            X = X[:, None]
        dX = np.zeros_like(X)
        v = self.terminal_voltage(X, v_inj)
        inj = np.zeros((self.dyn.n_bus * 2, X.shape[1]), dtype=X.dtype)
        nsg = len(self.sgs)
        wb = self.omega_base

        def to_local(eps, vD, vQ):
            c, s = np.cos(eps), np.sin(eps)
            return c * vD + s * vQ, -s * vD + c * vQ

        def to_global(eps, i_d, i_q):
            c, s = np.cos(eps), np.sin(eps)
            return c * i_d - s * i_q, s * i_d + c * i_q

        currents = []
        if nsg:
            xs = X[self.sg_idx]
            eps = X[self.sg_eps]
            v_d, v_q = to_local(eps, v[0, :nsg], v[1, :nsg])
            u = np.array([v_d, v_q, np.broadcast_to(self.mech_sg, v_d.shape)])
            f, y = sg_dynamics(self.sg_par, xs, u)
            dX[self.sg_idx] = f
            dX[self.sg_eps] = wb * (y[2] - 1.0)
            currents.append(to_global(eps, y[0], y[1]))
        if self.ibrs:
            xs = X[self.ibr_idx]
            eps = X[self.ibr_eps]
            v_d, v_q = to_local(eps, v[0, nsg:], v[1, nsg:])
            u = np.array([v_d, v_q, np.broadcast_to(self.mech_ibr, v_d.shape)])
            f, y = ibr_dynamics(self.ibr_par, xs, u)
            dX[self.ibr_idx] = f
            dX[self.ibr_eps] = wb * (y[2] - 1.0)
            currents.append(to_global(eps, y[0], y[1]))
        iD = np.concatenate([c[0] for c in currents])
        iQ = np.concatenate([c[1] for c in currents])
        for j, b in enumerate(self.app_bus):
            inj[2 * b] += iD[j]
            inj[2 * b + 1] += iQ[j]
        xn = X[self.net_offset:]
        dn = self.A_net @ xn + self.B_inj @ inj
        if self.v_src.size:
            dn = dn + (self.B_src @ self.v_src)[:, None]
        dX[self.net_offset:] = dn
        return dX[:, 0] if squeeze else dX

    def jacobian(self, x=None) -> np.ndarray:
        """Complex-step Jacobian of the right-hand side (machine precision)."""
        x = self.initial_state() if x is None else x
        n = x.size
        h = 1e-30
        X = x[:, None] + 1j * h * np.eye(n)
        return np.imag(self.rhs(X)) / h

    # -- parameter events -----------------------------------------------
    def with_param(self, path: str, value: float) -> "CompositeSystem":
        """Copy with one parameter changed; states are untouched.

        ``apparatus.<id>.<field>`` or ``branch.<name>.<field>``. Changing an
        SG's ``K_D`` shifts its torque input by ``dK_D * omega_0`` so the
        dispatched electrical power is held.
        """
        kind, _, rest = path.partition(".")
        name, _, fld = rest.rpartition(".")
        if kind == "apparatus" and name == "*":
            targets = [a.apparatus_id for a in self.apparatus if hasattr(a.params, fld)]
            if not targets:
                raise PortMapError(f"no apparatus has parameter {fld!r}")
            new = self
            for aid in targets:
                new = new.with_param(f"apparatus.{aid}.{fld}", value)
            return new
        if kind == "branches":
            kind = "branch"
        new = object.__new__(CompositeSystem)
        new.__dict__.update(self.__dict__)
        new.mech = dict(self.mech)
        if kind == "apparatus":
            apps = []
            for a in self.apparatus:
                if a.apparatus_id == name:
                    old = getattr(a.params, fld)
                    a = a.with_params(**{fld: value})
                    if isinstance(a, SynchronousGenerator) and fld == "K_D":
                        new.mech[name] = self.mech[name] + (value - old) * 1.0
                apps.append(a)
            if not any(a.apparatus_id == name for a in apps):
                raise PortMapError(f"unknown apparatus {name!r} in event path {path!r}")
            new.apparatus = apps
            new.sgs = [a for a in apps if isinstance(a, SynchronousGenerator)]
            new.ibrs = [a for a in apps if isinstance(a, GridFollowingInverter)]
            new.order = new.sgs + new.ibrs
        elif kind == "branch":
            new.network = self.network.with_branch(name, **{fld: value})
            new.dyn = dynamic_network(new.network, self.pf)
        else:
            raise PortMapError(f"unsupported event path {path!r}")
        new._build_layout()
        return new

    # -- probes ----------------------------------------------------------
    def probe(self, X, name: str, v_inj=None) -> np.ndarray:
        """Named signal for a batch of states: ``<apparatus>.<signal>`` or ``<bus>.v_D`` ..."""
        owner, _, sig = name.rpartition(".")
        names = self.state_names()
        if name in names:
            return X[names.index(name)]
        ids = [a.apparatus_id for a in self.order]
        if owner in ids:
            j = ids.index(owner)
            a = self.order[j]
            eps_idx = self.sg_eps[j] if j < len(self.sgs) else self.ibr_eps[j - len(self.sgs)]
            eps = X[eps_idx]
            v = self.terminal_voltage(X, v_inj)[:, j]
            c, s = np.cos(eps), np.sin(eps)
            v_d, v_q = c * v[0] + s * v[1], -s * v[0] + c * v[1]
            if j < len(self.sgs):
                xs = X[self.sg_idx[:, j]]
                u = np.array([v_d, v_q, np.full_like(v_d, self.mech[owner])])
                _, y = sg_dynamics(a.params, xs, u)
                out = dict(zip(("i_d", "i_q", "omega", "T_e"), y))
            else:
                xs = X[self.ibr_idx[:, j - len(self.sgs)]]
                u = np.array([v_d, v_q, np.full_like(v_d, self.mech[owner])])
                _, y = ibr_dynamics(a.params, xs, u)
                out = dict(zip(("i_d", "i_q", "omega", "v_dc"), y))
            out["v_d"], out["v_q"] = v_d, v_q
            out["v_D"], out["v_Q"] = v[0], v[1]
            out["i_D"] = c * out["i_d"] - s * out["i_q"]
            out["i_Q"] = s * out["i_d"] + c * out["i_q"]
            out["P"] = v[0] * out["i_D"] + v[1] * out["i_Q"]
            out["Q"] = v[1] * out["i_D"] - v[0] * out["i_Q"]
            out["T_m"] = np.full_like(v_d, self.mech[owner])
            if sig in out:
                return out[sig]
        if owner in self.dyn.bus_ids:
            b = self.dyn.bus_index(owner)
            vD = X[self.bus_v_offset + 2 * b]
            vQ = X[self.bus_v_offset + 2 * b + 1]
            if sig == "v_D":
                return vD
            if sig == "v_Q":
                return vQ
            if sig == "v_mag":
                return np.sqrt(vD ** 2 + vQ ** 2)
        raise PortMapError(f"unknown probe {name!r}")


# --------------------------------------------------------------------------
# monolithic linearization


def monolithic_linearization(system: CompositeSystem) -> StateSpaceModel:
    """Linearize the whole nonlinear ODE at its initial equilibrium."""
    A = system.jacobian()
    n = A.shape[0]
    return StateSpaceModel(A, np.zeros((n, 0)), np.zeros((0, n)), np.zeros((0, 0)),
                           state_names=system.state_names())


# --------------------------------------------------------------------------
# nonlinear simulation


@dataclass(frozen=True)
class SimScenario:
    end_time: float
    step: float = 50e-6
    events: tuple = ()
    probes: tuple = ()
    name: str = "scenario"
    perturbation: tuple = ()

    def __post_init__(self):
        if self.step <= 0 or self.end_time <= 0:
            raise ValueError("step and end_time must be positive")
        times = [e[0] for e in self.events]
        if times != sorted(times):
            raise ValueError("events must be time-sorted")


@dataclass(eq=False)
class SimTrace:
    time: np.ndarray
    signals: dict
    units: dict = field(default_factory=dict)
    diverged: bool = False
    diverged_at: float | None = None
    note: str = ""

    def to_csv(self, path_or_buf):
        import csv

        own = isinstance(path_or_buf, (str, bytes)) or hasattr(path_or_buf, "__fspath__")
        fh = open(path_or_buf, "w", newline="") if own else path_or_buf
        try:
            w = csv.writer(fh)
            names = list(self.signals)
            w.writerow(["time_s"] + names)
            cols = [self.signals[n] for n in names]
            for k, t in enumerate(self.time):
                w.writerow([f"{t:.9g}"] + [f"{c[k]:.12g}" for c in cols])
        finally:
            if own:
                fh.close()


def _units(name):
    sig = name.rpartition(".")[2]
    if sig in ("epsilon", "theta_pll"):
        return "rad"
    return "pu"


def simulate_nonlinear(system: CompositeSystem, scenario: SimScenario, x0=None,
                       chunk: int = 4000) -> SimTrace:
    """Fixed-step RK4 from the steady state, with parameter-step events.

    Events at time ``t_e`` are applied before the first step starting at
    or after ``t_e``. ``scenario.perturbation`` holds ``(state_name, delta)``
    offsets added to the initial state, or ``(apparatus_id.v_D, delta)``
    series-voltage steps at an apparatus terminal. A run whose states
    exceed ``DIVERGENCE_LIMIT`` (or go non-finite) is truncated and flagged.
    """
    h = scenario.step
    n_steps = int(round(scenario.end_time / h))
    x = system.initial_state() if x0 is None else np.array(x0, dtype=float)
    names = system.state_names()
    v_step = np.zeros((system.n_app, 2))
    ids = [a.apparatus_id for a in system.order]
    for sname, delta in scenario.perturbation:
        owner, _, sig = sname.rpartition(".")
        if owner in ids and sig in ("v_D", "v_Q"):
            v_step[ids.index(owner), 0 if sig == "v_D" else 1] += delta
        else:
            try:
                x[names.index(sname)] += delta
            except ValueError:
                raise PortMapError(f"unknown perturbation target {sname!r}") from None
    for p in scenario.probes:
        system.probe(x[:, None], p)  # fail early on unknown probes
    events = list(scenario.events)
    probes = list(scenario.probes)
    series = {p: [system.probe(x[:, None], p, _inj3(v_step))] for p in probes}
    sys_k = system
    k = 0
    diverged_at = None
    while k < n_steps:
        while events and events[0][0] <= k * h + 1e-12:
            _, path, value = events.pop(0)
            sys_k = sys_k.with_param(path, value)
        stop = n_steps
        if events:
            stop = min(stop, max(k + 1, int(math.ceil(events[0][0] / h - 1e-9))))
        stop = min(stop, k + chunk)
        requested = stop - k
        X, done = sys_k.integrate(x, k * h, h, requested, v_step)
        for p in probes:
            series[p].append(sys_k.probe(X[:, 1:done + 1], p, _inj3(v_step)))
        x = X[:, done]
        k += done
        if done < requested:
            diverged_at = (k + 1) * h
            break
    t = np.arange(k + 1) * h
    signals = {p: np.concatenate(v) for p, v in series.items()}
    note = f"diverged at t={diverged_at:.6g}s" if diverged_at is not None else ""
    return SimTrace(t, signals, {p: _units(p) for p in probes}, diverged_at is not None,
                    diverged_at, note)


def _inj3(v_step):
    """(n_app, 2) series voltage -> (2, n_app, 1) for :meth:`CompositeSystem.probe`."""
    if not np.any(v_step):
        return None
    return v_step.T[:, :, None]


# --------------------------------------------------------------------------
# linear simulation


def simulate_linear(model: StateSpaceModel, end_time: float, step: float, steps=(),
                    impulses=(), probes=None, x0=None) -> SimTrace:
    """Exact zero-order-hold discretization of a linear model.

    ``steps``: ``(time, input_label, value)`` piecewise-constant inputs
    (value held from ``time`` on); ``impulses``: ``(input_label, area)``
    applied at t=0 as an initial state ``B * area``.
    """
    n, m = model.n_states, model.n_inputs
    M = np.zeros((n + m, n + m))
    M[:n, :n] = model.A * step
    M[:n, n:] = model.B * step
    E = expm(M)
    Ad, Bd = E[:n, :n], E[:n, n:]
    n_steps = int(round(end_time / step))
    t = np.arange(n_steps + 1) * step
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    for label, area in impulses:
        x = x + model.B[:, model.input_index(label)] * area
    u = np.zeros(m)
    sched = sorted(((tt, model.input_index(lab), val) for tt, lab, val in steps), key=lambda e: e[0])
    out_idx = list(range(model.n_outputs)) if probes is None else [model.output_index(p) for p in probes]
    Y = np.zeros((len(out_idx), n_steps + 1))
    for k in range(n_steps + 1):
        while sched and sched[0][0] <= t[k] + 1e-12:
            _, j, val = sched.pop(0)
            u[j] = val
        Y[:, k] = (model.C[out_idx] @ x + model.D[out_idx] @ u)
        if k < n_steps:
            x = Ad @ x + Bd @ u
    names = [str(model.output_labels[j]) for j in out_idx]
    return SimTrace(t, dict(zip(names, Y)), {nm: _units(nm) for nm in names})


# --------------------------------------------------------------------------
# perturbation-injection frequency scan


def impedance_scan(system: CompositeSystem, apparatus_id: str, freqs, amplitude=1e-4,
                   step=50e-6, check_stable=True) -> np.ndarray:
    """Measured 2x2 admittance ``i_DQ / v_DQ`` at an apparatus terminal.

    A series voltage ``amplitude * cos(2 pi f t)`` is inserted between bus
    and apparatus, first on the D axis then on Q. The periodic steady state
    is found by shooting: the one-period state-transition map is built from
    perturbed nonlinear runs, and the fixed point of the forced one-period
    map gives the periodic initial state. Fundamental phasors of terminal
    voltage and current are then read by single-bin Fourier projection
    over one period. Returns shape ``(len(freqs), 2, 2)``.
    """
    ids = [a.apparatus_id for a in system.order]
    if apparatus_id not in ids:
        raise PortMapError(f"unknown apparatus {apparatus_id!r}")
    j = ids.index(apparatus_id)
    if check_stable:
        lam = np.linalg.eigvals(system.jacobian())
        lam = lam[np.abs(lam) > 1e-6]
        if lam.size and np.max(lam.real) >= 0:
            raise ScanInapplicableError(
                f"operating point is small-signal unstable (max Re = {np.max(lam.real):.3g})"
            )
    x_eq = system.initial_state()
    n = x_eq.size
    zero = np.zeros((system.n_app, 2))
    out = []
    for f in np.atleast_1d(freqs):
        period = 1.0 / float(f)
        n_steps = max(int(math.ceil(period / step)), 64)
        h = period / n_steps
        w = 2 * math.pi * float(f)
        delta = 1e-6
        Phi = np.empty((n, n))
        for q in range(n):
            xq = x_eq.copy()
            xq[q] += delta
            X, _ = system.integrate(xq, 0.0, h, n_steps, zero)
            Phi[:, q] = (X[:, -1] - x_eq) / delta
        V = np.zeros((2, 2), dtype=complex)
        I = np.zeros((2, 2), dtype=complex)
        ts = np.arange(n_steps) * h
        kern = np.exp(-1j * w * ts) * 2.0 / n_steps
        for axis in (0, 1):
            ac = zero.copy()
            ac[j, axis] = amplitude
            X, _ = system.integrate(x_eq, 0.0, h, n_steps, zero, ac, w)
            x0 = x_eq + np.linalg.solve(np.eye(n) - Phi, X[:, -1] - x_eq)
            X, _ = system.integrate(x0, 0.0, h, n_steps, zero, ac, w)
            X = X[:, :-1]
            inj = np.zeros((2, system.n_app, n_steps))
            inj[axis, j] = amplitude * np.cos(w * ts)
            sig = {nm: system.probe(X, f"{apparatus_id}.{nm}", inj)
                   for nm in ("v_D", "v_Q", "i_D", "i_Q")}
            V[:, axis] = [sig["v_D"] @ kern, sig["v_Q"] @ kern]
            I[:, axis] = [sig["i_D"] @ kern, sig["i_Q"] @ kern]
        out.append(I @ np.linalg.inv(V))
    return np.array(out)
