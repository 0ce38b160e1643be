"""Port-bipartition analytics on whole-system models.

The torque coefficient of an SG is what the rest of the grid looks like
from its rotor: ``K_T(s) = 1 / G''_Tw(s) - s J``, so that the rotor and
the grid form the loop ``w = (T_m - K_T w) / (s J)``. The dc-current
coefficient does the same for an inverter dc link with ``C`` in place of
``J``. Both are realized in state space so their own stability can be
checked before the -90 degree phase index is trusted.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import eigvals, null_space
from scipy.optimize import linear_sum_assignment

from .errors import IndexInapplicableError, MissingPortError, PortMapError
from .lti import PortLabel, StateSpaceModel, select_ports, sort_poles

SWING_BAND_HZ = (0.1, 15.0)
# poles of a coefficient closer than this to the origin are the integrating
# (synchronizing) action of the frame angle, not an instability
ORIGIN_TOL = 1e-6
# a coefficient pole counts as unstable above this real part (1/s)
UNSTABLE_TOL = 1e-7


@dataclass(frozen=True, eq=False)
class PortCoefficient:
    kind: str
    apparatus_id: str
    inertia: float
    s: np.ndarray
    values: np.ndarray
    realization: StateSpaceModel | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind not in ("torque", "dc_current", "custom"):
            raise ValueError(f"unknown coefficient kind {self.kind!r}")
        object.__setattr__(self, "s", np.atleast_1d(np.asarray(self.s, dtype=complex)))
        object.__setattr__(self, "values", np.atleast_1d(np.asarray(self.values, dtype=complex)))

    def at(self, s) -> complex:
        """Coefficient value at ``s``: from the realization if available,
        otherwise from a stored sample at that exact point."""
        if self.realization is not None:
            return complex(self.realization.evaluate(s)[0, 0])
        k = int(np.argmin(np.abs(self.s - s)))
        if abs(self.s[k] - s) > 1e-9 * max(1.0, abs(s)):
            raise PortMapError(f"no coefficient sample at s={s}")
        return complex(self.values[k])

    @property
    def poles(self) -> np.ndarray:
        if self.realization is None:
            return np.zeros(0, dtype=complex)
        return self.realization.poles

    def is_stable(self) -> bool:
        p = self.poles
        p = p[np.abs(p) > ORIGIN_TOL]
        return not np.any(p.real > UNSTABLE_TOL)


@dataclass(frozen=True)
class PhaseIndex:
    phase_deg: float
    stable_flag: bool
    K_TD: float
    value: complex


def inverse_minus_inertia(G: StateSpaceModel, inertia: float | None = None) -> StateSpaceModel:
    """State-space realization of ``1/G(s) - s M`` for a SISO ``G`` with
    relative degree one and high-frequency gain ``C B = 1/M``.

    With ``P = I - M B C`` the zero dynamics live on ``null(C)``; on an
    orthonormal basis ``Q`` of it: ``A_K = Q' P A Q``, ``B_K = M Q' P A B``,
    ``C_K = -M C A Q``, ``D_K = -M^2 C A B``. The poles of the result are
    the zeros of ``G``.
    """
    if G.n_inputs != 1 or G.n_outputs != 1:
        raise PortMapError("coefficient extraction needs a single-input single-output port")
    if np.any(G.D != 0):
        raise PortMapError("port transfer must be strictly proper (inertia at the port)")
    A, b, c = G.A, G.B, G.C
    cb = float((c @ b)[0, 0])
    if cb == 0:
        raise PortMapError("port transfer has relative degree above one; no inertia to extract")
    M = 1.0 / cb
    if inertia is not None and not math.isclose(M, inertia, rel_tol=1e-9):
        raise PortMapError(f"port high-frequency gain implies inertia {M}, expected {inertia}")
    P = np.eye(G.n_states) - M * (b @ c)
    Q = null_space(c)
    A_K = Q.T @ P @ A @ Q
    B_K = M * (Q.T @ P @ A @ b)
    C_K = -M * (c @ A @ Q)
    D_K = -M * M * (c @ A @ b)
    return StateSpaceModel(A_K, B_K, C_K, D_K, list(G.output_labels), list(G.input_labels))


def _port_model(system, aid, inp, out) -> StateSpaceModel:
    model = getattr(system, "model", system)
    return select_ports(model, [PortLabel(aid, inp)], [PortLabel(aid, out)])


def _apparatus_params(system, aid):
    apps = getattr(system, "apparatus", None)
    if not apps or aid not in apps:
        raise MissingPortError(f"no apparatus {aid!r} in the system")
    return apps[aid].local.apparatus.params


def torque_coefficient(system, sg_id: str, s_samples, inertia=None) -> PortCoefficient:
    """``K_T(s) = [G''_Tw(s)]^-1 - s J`` at the rotor port of ``sg_id``.

    ``system`` is a :class:`WholeSystemModel` (``J`` read from the SG) or a
    bare :class:`StateSpaceModel` together with ``inertia``.
    """
    J = inertia if inertia is not None else _apparatus_params(system, sg_id).J
    G = _port_model(system, sg_id, "T_m", "omega")
    return _coefficient("torque", sg_id, J, G, s_samples)


def dc_current_coefficient(system, ibr_id: str, s_samples, inertia=None) -> PortCoefficient:
    """``K_idc(s) = [G''_{i_dc v_dc}(s)]^-1 - s C`` at the dc link of ``ibr_id``."""
    C = inertia if inertia is not None else _apparatus_params(system, ibr_id).C_dc
    G = _port_model(system, ibr_id, "i_dc", "v_dc")
    return _coefficient("dc_current", ibr_id, C, G, s_samples)


def _coefficient(kind, aid, inertia, G, s_samples) -> PortCoefficient:
    s = np.atleast_1d(np.asarray(s_samples, dtype=complex))
    K = inverse_minus_inertia(G, inertia)
    vals = np.array([1.0 / G.evaluate(sk)[0, 0] - sk * inertia for sk in s])
    return PortCoefficient(kind, aid, inertia, s, vals, K)


def coefficient_from_function(kind, aid, inertia, s_samples, fun) -> PortCoefficient:
    """Sampled coefficient without a realization (no stability check possible)."""
    s = np.atleast_1d(np.asarray(s_samples, dtype=complex))
    return PortCoefficient(kind, aid, inertia, s, np.array([fun(x) for x in s]))


def phase_margin_index(coefficient: PortCoefficient, mode_freq_hz: float) -> PhaseIndex:
    """Phase of ``K`` at the mode, the ``phase > -90`` flag and ``Re K``.

    Raises :class:`IndexInapplicableError` when the coefficient itself has
    right-half-plane poles (the Nyquist argument behind the index fails).
    """
    if not coefficient.is_stable():
        p = coefficient.poles
        worst = p[np.argmax(p.real)]
        raise IndexInapplicableError(
            f"{coefficient.kind} coefficient of {coefficient.apparatus_id} is unstable "
            f"(pole {worst:.4g}); the -90 degree index does not apply"
        )
    K = coefficient.at(2j * math.pi * mode_freq_hz)
    phase = _principal_deg(K)
    return PhaseIndex(phase, bool(phase > -90.0), float(K.real), K)


def _principal_deg(z) -> float:
    """Phase in (-180, 180]."""
    ph = math.degrees(math.atan2(z.imag, z.real))
    return 180.0 if ph == -180.0 else ph


def loop_with_inertia(K: StateSpaceModel, inertia: float) -> np.ndarray:
    """State matrix of ``1/(s M)`` in feedback with ``K`` (rotor state first)."""
    n = K.n_states
    A = np.zeros((n + 1, n + 1))
    A[0, 0] = -K.D[0, 0] / inertia
    A[0, 1:] = -K.C[0] / inertia
    A[1:, 0] = K.B[:, 0]
    A[1:, 1:] = K.A
    return A


# --------------------------------------------------------------------------
# modes


def participation_factors(A: np.ndarray):
    """Eigenvalues and normalized participation factors ``|v_ki w_ik|``."""
    lam, V = np.linalg.eig(A)
    W = np.linalg.inv(V)
    P = np.abs(V * W.T)
    P /= P.sum(axis=0, keepdims=True)
    return lam, P


def mechanical_states(state_names) -> list[int]:
    """Indices of rotor / virtual-rotor states (speed, frame angle, dc link, PLL)."""
    keys = (".omega", ".epsilon", ".v_dc", ".x_dc", ".x_pll")
    return [k for k, nm in enumerate(state_names) if nm.endswith(keys)]


def swing_modes(model: StateSpaceModel, band_hz=SWING_BAND_HZ, min_share=0.5) -> np.ndarray:
    """Upper-half-plane modes in the swing band dominated by mechanical states."""
    lam, P = participation_factors(model.A)
    mech = mechanical_states(model.state_names)
    share = P[mech].sum(axis=0)
    f = np.abs(lam.imag) / (2 * math.pi)
    keep = (lam.imag > 0) & (f >= band_hz[0]) & (f <= band_hz[1]) & (share >= min_share)
    return sort_poles(lam[keep])


def dominant_swing_mode(model: StateSpaceModel, band_hz=SWING_BAND_HZ) -> complex:
    modes = swing_modes(model, band_hz)
    if modes.size == 0:
        raise PortMapError(f"no swing mode in {band_hz} Hz")
    return complex(modes[np.argmax(modes.real)])


def damping_ratio(lam) -> np.ndarray:
    lam = np.asarray(lam, dtype=complex)
    mag = np.abs(lam)
    with np.errstate(invalid="ignore", divide="ignore"):
        z = np.where(mag > 0, -lam.real / mag, 1.0)
    return z


# --------------------------------------------------------------------------
# sweeps


@dataclass
class SweepResult:
    parameter: str
    values: np.ndarray
    poles: list
    mode_ids: list
    errors: dict = field(default_factory=dict)
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        d = np.diff(v)
        if v.size > 1 and not (np.all(d > 0) or np.all(d < 0)):
            raise ValueError("sweep grid must be strictly monotone")
        self.values = v

    def track(self, mode_id) -> np.ndarray:
        """Pole of one tracked mode across the grid (NaN where missing)."""
        out = np.full(len(self.values), np.nan + 0j)
        for k, (p, ids) in enumerate(zip(self.poles, self.mode_ids)):
            if p is None:
                continue
            hit = np.flatnonzero(ids == mode_id)
            if hit.size:
                out[k] = p[hit[0]]
        return out


def _track_cost(a, b):
    """Nearest-neighbour distance, relative to the mode's frequency."""
    a = np.asarray(a)[:, None]
    b = np.asarray(b)[None, :]
    scale = 1.0 + 0.5 * (np.abs(a.imag) + np.abs(b.imag))
    return np.abs(a - b) / scale


def track_modes(pole_sets) -> list:
    """Assign persistent ids to poles across consecutive pole sets."""
    ids_all = []
    prev, prev_ids, next_id = None, None, 0
    for p in pole_sets:
        if p is None:
            ids_all.append(None)
            prev = None
            continue
        if prev is None or len(prev) != len(p):
            ids = np.arange(next_id, next_id + len(p))
            next_id += len(p)
        else:
            r, c = linear_sum_assignment(_track_cost(prev, p))
            ids = np.empty(len(p), dtype=int)
            ids[c] = prev_ids[r]
        ids_all.append(ids)
        prev, prev_ids = p, ids
    return ids_all


def pole_sweep(case, parameter: str, grid, builder=None, extra=None) -> SweepResult:
    """Rebuild operating point and whole-system model at every grid value.

    ``builder(case) -> model`` defaults to ``case.build().whole_system``.
    Failures at a grid point are recorded and the sweep continues.
    ``extra(built, value)`` may return per-point data stored in ``extras``.
    """
    grid = np.asarray(grid, dtype=float)
    poles, errors, extras = [], {}, {}
    for k, v in enumerate(grid):
        try:
            c = case.with_param(parameter, float(v))
            built = c.build()
            model = builder(built) if builder else built.whole_system.model
            poles.append(sort_poles(model.poles))
            if extra is not None:
                extras[k] = extra(built, float(v))
        except PortMapError as exc:
            poles.append(None)
            errors[k] = f"{type(exc).__name__}: {exc}"
    return SweepResult(parameter, grid, poles, track_modes(poles), errors, extras)


# --------------------------------------------------------------------------
# participation screening


@dataclass(frozen=True)
class ParticipationRow:
    apparatus_id: str
    peak_db: float
    peak_freq_hz: float
    participating: bool


@dataclass(frozen=True)
class ParticipationReport:
    mode_freq_hz: float
    rows: tuple

    @property
    def ranking(self):
        return [r.apparatus_id for r in self.rows]


def participation_screen(system, mode_freq_hz: float, apparatus_ids=None, band=0.3,
                         n_points=401) -> ParticipationReport:
    """Resonant peak of each SG's ``|G''_Tw|`` within ``+-band`` of the mode.

    An SG whose magnitude has no interior local maximum in the band is
    reported as non-participating and ranked after the others.
    """
    if apparatus_ids is None:
        apparatus_ids = [aid for aid, g in system.apparatus.items()
                         if "T_m" in [lab.signal for lab in g.model.input_labels]]
    f = np.linspace((1 - band) * mode_freq_hz, (1 + band) * mode_freq_hz, n_points)
    rows = []
    for aid in apparatus_ids:
        G = _port_model(system, aid, "T_m", "omega")
        mag = np.array([abs(G.evaluate(2j * math.pi * fk)[0, 0]) for fk in f])
        k = int(np.argmax(mag))
        interior = 0 < k < len(f) - 1
        rows.append(ParticipationRow(aid, float(20 * np.log10(mag[k])), float(f[k]), interior))
    rows.sort(key=lambda r: (not r.participating, -r.peak_db))
    return ParticipationReport(float(mode_freq_hz), tuple(rows))


# --------------------------------------------------------------------------
# Bode tables


def frequency_response_table(model: StateSpaceModel, input_label, output_label, freqs_hz):
    """Rows ``(f, magnitude_dB, phase_deg)`` with phase unwrapped along the grid."""
    sub = select_ports(model, [input_label], [output_label])
    f = np.asarray(freqs_hz, dtype=float)
    H = np.array([sub.evaluate(2j * math.pi * fk)[0, 0] for fk in f])
    return bode_rows(f, H)


def bode_rows(freqs_hz, values):
    f = np.asarray(freqs_hz, dtype=float)
    H = np.asarray(values, dtype=complex)
    ph = np.degrees(np.unwrap(np.angle(H)))
    if ph.size:
        # anchor the unwrapped curve so its first sample is a principal value
        first = _principal_deg(H[0])
        ph = ph + (first - ph[0])
    return [(float(fk), float(20 * np.log10(abs(h))), float(p)) for fk, h, p in zip(f, H, ph)]


def invariant_zeros(G: StateSpaceModel) -> np.ndarray:
    """Finite invariant zeros of a square system (generalized eigenvalues)."""
    n, m = G.n_states, G.n_inputs
    Mtx = np.block([[G.A, G.B], [G.C, G.D]])
    N = np.zeros_like(Mtx)
    N[:n, :n] = np.eye(n)
    z = eigvals(Mtx, N)
    return sort_poles(z[np.isfinite(z)])
