"""Linear state-space models with labelled ports.

Every transfer matrix in the package (apparatus port matrices, network
impedances, closed-loop whole-system models) is carried by
:class:`StateSpaceModel`. Interconnections are always built by stacking
states, so the poles of any assembled model are a single eigenvalue call.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import NamedTuple, Sequence

import numpy as np

from .errors import (
    IllPosedInterconnectionError,
    InvalidModelError,
    MissingPortError,
    NearSingularError,
)

SIGNALS = frozenset(
    {
        "v_D", "v_Q", "i_D", "i_Q",
        "v_d", "v_q", "i_d", "i_q",
        "T_m", "omega", "i_dc", "v_dc", "theta_pll",
    }
)

# relative distance (to the spectral radius) below which s counts as a pole
NEAR_POLE_RTOL = 1e-9


class PortLabel(NamedTuple):
    apparatus_id: str
    signal: str

    def __str__(self):
        return f"{self.apparatus_id}.{self.signal}"


def as_label(item) -> PortLabel:
    if isinstance(item, PortLabel):
        return item
    if isinstance(item, str):
        owner, _, signal = item.rpartition(".")
        return PortLabel(owner, signal)
    owner, signal = item
    return PortLabel(str(owner), signal)


def _labels(items, n, kind) -> tuple[PortLabel, ...]:
    if items is None:
        return tuple(PortLabel(f"{kind}{k}", "") for k in range(n))
    out = tuple(as_label(x) for x in items)
    if len(set(out)) != len(out):
        raise InvalidModelError(f"duplicate {kind} labels: {[str(x) for x in out]}")
    return out


@dataclass(frozen=True, eq=False)
class StateSpaceModel:
    """``x' = A x + B u``, ``y = C x + D u`` with labelled inputs and outputs."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    input_labels: tuple = field(default=None)
    output_labels: tuple = field(default=None)
    state_names: tuple = field(default=None)

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        n = A.shape[0] if A.size else 0
        A = A.reshape(n, n)
        B = np.asarray(self.B, dtype=float)
        C = np.asarray(self.C, dtype=float)
        D = np.atleast_2d(np.asarray(self.D, dtype=float))
        m = D.shape[1]
        p = D.shape[0]
        B = B.reshape(n, m)
        C = C.reshape(p, n)
        for name, mat in (("A", A), ("B", B), ("C", C), ("D", D)):
            if not np.all(np.isfinite(mat)):
                raise InvalidModelError(f"non-finite entries in {name}")
            mat.setflags(write=False)
        ins = _labels(self.input_labels, m, "u")
        outs = _labels(self.output_labels, p, "y")
        if len(ins) != m or len(outs) != p:
            raise InvalidModelError(
                f"label counts ({len(ins)} in, {len(outs)} out) do not match D {D.shape}"
            )
        names = tuple(self.state_names) if self.state_names is not None else tuple(
            f"x{k}" for k in range(n)
        )
        if len(names) != n:
            raise InvalidModelError("state_names length does not match A")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "D", D)
        object.__setattr__(self, "input_labels", ins)
        object.__setattr__(self, "output_labels", outs)
        object.__setattr__(self, "state_names", names)

    @property
    def n_states(self) -> int:
        return self.A.shape[0]

    @property
    def n_inputs(self) -> int:
        return self.D.shape[1]

    @property
    def n_outputs(self) -> int:
        return self.D.shape[0]

    def input_index(self, label) -> int:
        try:
            return self.input_labels.index(as_label(label))
        except ValueError:
            raise MissingPortError(f"no input port {as_label(label)}") from None

    def output_index(self, label) -> int:
        try:
            return self.output_labels.index(as_label(label))
        except ValueError:
            raise MissingPortError(f"no output port {as_label(label)}") from None

    @cached_property
    def poles(self) -> np.ndarray:
        return eigenvalues(self)

    def evaluate(self, s) -> np.ndarray:
        return evaluate(self, s).entries

    def __repr__(self):
        return (
            f"StateSpaceModel(n={self.n_states}, inputs={[str(x) for x in self.input_labels]}, "
            f"outputs={[str(x) for x in self.output_labels]})"
        )


@dataclass(frozen=True)
class ComplexMatrixAtS:
    s: complex
    entries: np.ndarray


def static_gain(K, input_labels=None, output_labels=None) -> StateSpaceModel:
    K = np.atleast_2d(np.asarray(K, dtype=float))
    return StateSpaceModel(
        np.zeros((0, 0)), np.zeros((0, K.shape[1])), np.zeros((K.shape[0], 0)), K,
        input_labels, output_labels,
    )


def eigenvalues(model: StateSpaceModel) -> np.ndarray:
    """All eigenvalues of the state matrix, conjugate pairs adjacent.

    Sorted by descending real part, then by imaginary part so each pair
    appears as (+j, -j).
    """
    if model.n_states == 0:
        return np.zeros(0, dtype=complex)
    lam = np.linalg.eigvals(model.A)
    return sort_poles(lam)


def sort_poles(lam) -> np.ndarray:
    lam = np.asarray(lam, dtype=complex)
    order = np.lexsort((-lam.imag, np.round(np.abs(lam.imag), 9), -np.round(lam.real, 9)))
    return lam[order]


def evaluate(model: StateSpaceModel, s) -> ComplexMatrixAtS:
    """``D + C (sI - A)^-1 B`` at a single complex frequency."""
    s = complex(s)
    n = model.n_states
    if n == 0:
        return ComplexMatrixAtS(s, model.D.astype(complex))
    poles = model.poles
    scale = max(1.0, float(np.max(np.abs(poles))))
    gap = np.abs(poles - s)
    k = int(np.argmin(gap))
    if gap[k] < NEAR_POLE_RTOL * scale:
        raise NearSingularError(f"s={s} lies on pole {poles[k]}", pole=poles[k])
    X = np.linalg.solve(s * np.eye(n) - model.A, model.B.astype(complex))
    return ComplexMatrixAtS(s, model.D + model.C @ X)


def frequency_response(model: StateSpaceModel, s_values) -> np.ndarray:
    """Stack of ``evaluate`` over many points, shape (len(s), p, m)."""
    return np.array([evaluate(model, s).entries for s in np.atleast_1d(s_values)])


def select_ports(model: StateSpaceModel, inputs=None, outputs=None) -> StateSpaceModel:
    """Restrict the input/output maps to the requested labels, in order."""
    ins = model.input_labels if inputs is None else [as_label(x) for x in inputs]
    outs = model.output_labels if outputs is None else [as_label(x) for x in outputs]
    ii = [model.input_index(x) for x in ins]
    oo = [model.output_index(x) for x in outs]
    return StateSpaceModel(
        model.A, model.B[:, ii], model.C[oo, :], model.D[np.ix_(oo, ii)],
        ins, outs, model.state_names,
    )


def transform_ports(model, pre, post, input_labels, output_labels) -> StateSpaceModel:
    """Wrap static maps around a model: ``u_old = pre u_new``, ``y_new = post y_old``."""
    pre = np.atleast_2d(np.asarray(pre, dtype=float))
    post = np.atleast_2d(np.asarray(post, dtype=float))
    return StateSpaceModel(
        model.A, model.B @ pre, post @ model.C, post @ model.D @ pre,
        input_labels, output_labels, model.state_names,
    )


def append(*models: StateSpaceModel) -> StateSpaceModel:
    """Block-diagonal stack: independent subsystems side by side."""
    from scipy.linalg import block_diag

    A = block_diag(*[m.A for m in models]) if models else np.zeros((0, 0))
    n = sum(m.n_states for m in models)
    mi = sum(m.n_inputs for m in models)
    po = sum(m.n_outputs for m in models)
    B = np.zeros((n, mi))
    C = np.zeros((po, n))
    D = np.zeros((po, mi))
    r = c = o = 0
    for m in models:
        B[r:r + m.n_states, c:c + m.n_inputs] = m.B
        C[o:o + m.n_outputs, r:r + m.n_states] = m.C
        D[o:o + m.n_outputs, c:c + m.n_inputs] = m.D
        r += m.n_states
        c += m.n_inputs
        o += m.n_outputs
    return StateSpaceModel(
        np.reshape(A, (n, n)), B, C, D,
        sum((m.input_labels for m in models), ()),
        sum((m.output_labels for m in models), ()),
        sum((m.state_names for m in models), ()),
    )


def close_feedback(
    plant: StateSpaceModel,
    feedback: StateSpaceModel,
    input_ports: Sequence,
    output_ports: Sequence,
    sign: float = 1.0,
) -> StateSpaceModel:
    """Close ``u_c = r + sign * F(y_c)`` around the selected plant ports.

    ``feedback`` maps the selected plant outputs (in ``output_ports`` order)
    to the selected plant inputs (in ``input_ports`` order). The external
    input ``r`` keeps the labels of the closed inputs; all plant outputs are
    kept. With ``sign=+1`` the closed-loop transfer from ``r`` to ``y_c`` is
    ``(I - P F)^-1 P``.
    """
    ic = [plant.input_index(x) for x in input_ports]
    oc = [plant.output_index(x) for x in output_ports]
    if feedback.n_inputs != len(oc) or feedback.n_outputs != len(ic):
        raise InvalidModelError(
            f"feedback is {feedback.n_outputs}x{feedback.n_inputs}, "
            f"ports need {len(ic)}x{len(oc)}"
        )
    n_p, n_f = plant.n_states, feedback.n_states
    m, p = plant.n_inputs, plant.n_outputs
    Sc = np.zeros((len(ic), m))
    Sc[np.arange(len(ic)), ic] = 1.0
    Oc = np.zeros((len(oc), p))
    Oc[np.arange(len(oc)), oc] = 1.0

    Af, Bf, Cf, Df = feedback.A, feedback.B, feedback.C, feedback.D
    Cc = Oc @ plant.C
    Dc = Oc @ plant.D
    # u = r_full + Sc^T w,  w = sign*(Cf xf + Df y_c),  y_c = Cc xp + Dc u
    # => (I - sign Df Dc Sc^T) w = sign (Cf xf + Df Cc xp + Df Dc r_full)
    loop = np.eye(len(ic)) - sign * Df @ Dc @ Sc.T
    if np.linalg.cond(loop) > 1e12:
        raise IllPosedInterconnectionError("singular algebraic loop (I - D_plant D_feedback)")
    E = np.linalg.inv(loop)
    # w = Wx [xp; xf] + Wr r
    Wx = sign * E @ np.hstack([Df @ Cc, Cf])
    Wr = sign * E @ Df @ Dc
    # u = Ux [xp; xf] + Ur r
    Ux = Sc.T @ Wx
    Ur = np.eye(m) + Sc.T @ Wr
    # y_c as function of (x, r), used to drive the feedback states
    Ycx = np.hstack([Cc, np.zeros((len(oc), n_f))]) + Dc @ Ux
    Ycr = Dc @ Ur

    A = np.zeros((n_p + n_f, n_p + n_f))
    A[:n_p, :n_p] = plant.A
    A[n_p:, n_p:] = Af
    A[:n_p, :] += plant.B @ Ux
    A[n_p:, :] += Bf @ Ycx
    B = np.vstack([plant.B @ Ur, Bf @ Ycr])
    C = np.hstack([plant.C, np.zeros((p, n_f))]) + plant.D @ Ux
    D = plant.D @ Ur
    return StateSpaceModel(
        A, B, C, D, plant.input_labels, plant.output_labels,
        plant.state_names + tuple(f"fb.{x}" for x in feedback.state_names),
    )


def match_poles(a, b) -> np.ndarray:
    """Pairwise distances after optimal one-to-one matching of two pole sets."""
    from scipy.optimize import linear_sum_assignment

    a = np.asarray(a, dtype=complex)
    b = np.asarray(b, dtype=complex)
    if a.size != b.size:
        raise ValueError(f"pole sets differ in size: {a.size} vs {b.size}")
    if a.size == 0:
        return np.zeros(0)
    cost = np.abs(a[:, None] - b[None, :])
    r, c = linear_sum_assignment(cost)
    return cost[r, c]
