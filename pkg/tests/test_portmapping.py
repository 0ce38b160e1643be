import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import oracle_pole_gap, pointwise_block_errors, rel_err

from portmap.apparatus import LocalPortMatrix, OperatingPoint, SGParams, SynchronousGenerator, linearize
from portmap.errors import StructuralError
from portmap.lti import StateSpaceModel, match_poles, static_gain
from portmap.network import BranchSpec, BusSpec, Network
from portmap.portmapping import (
    FrameRotation,
    assemble_system,
    close_grid,
    closed_blocks_at,
    global_blocks_at,
    linearized_rotation,
    map_to_global,
    rotate,
    rotation_matrix,
)
from portmap.system import ApparatusSpec, Case

angles = st.floats(-2 * np.pi, 2 * np.pi, allow_nan=False)
comps = st.floats(-10, 10, allow_nan=False)


# ---- frame rotation --------------------------------------------------------

def test_rotation_examples():
    np.testing.assert_allclose(rotate(0.0, [1.0, 0.0]), [1.0, 0.0])
    np.testing.assert_allclose(rotate(np.pi / 2, [1.0, 0.0]), [0.0, 1.0], atol=1e-15)


def test_frame_rotation_inverse():
    R = FrameRotation(0.4)
    np.testing.assert_allclose(R.matrix @ R.inverse, np.eye(2), atol=1e-15)


@given(angles, comps, comps)
def test_rotation_preserves_norm(eps, a, b):
    assert np.linalg.norm(rotate(eps, [a, b])) == pytest.approx(np.hypot(a, b), abs=1e-12)


def test_linearized_rotation_examples():
    M = linearized_rotation(0.0, (1.0, 0.0))
    np.testing.assert_allclose(M @ [0, 0, 0.01], [0.0, 0.01])
    M = linearized_rotation(0.7, (0.3, -0.2))
    du = np.array([0.1, -0.4])
    np.testing.assert_allclose(M @ [*du, 0.0], rotation_matrix(0.7) @ du)


def test_linearized_rotation_matches_finite_difference(rng):
    for _ in range(10):
        eps, u = rng.uniform(-np.pi, np.pi), rng.normal(size=2)
        h = 1e-6
        fd = np.zeros((2, 3))
        for k in range(3):
            dz = np.zeros(3)
            dz[k] = h
            fd[:, k] = (rotate(eps + dz[2], u + dz[:2]) - rotate(eps - dz[2], u - dz[:2])) / (2 * h)
        M = linearized_rotation(eps, u)
        assert rel_err(M, fd) < 1e-6


# ---- G -> G' ---------------------------------------------------------------

def _sg_local(J=6.0, P=0.5, Q=0.1, theta=0.3):
    app, op = SynchronousGenerator(SGParams(J=J), "G").steady_state(P, Q, 1.0, theta)
    return linearize(app, op)


def test_global_model_matches_pointwise_formula_at_sample_frequencies():
    local = _sg_local()
    Gp = map_to_global(local).model
    for f in (1.0, 5.0, 60.0, 120.0):
        s = 2j * np.pi * f
        assert rel_err(Gp.evaluate(s)[:2, :2], global_blocks_at(local, s)[:2, :2]) < 1e-9


@settings(max_examples=15, deadline=None)
@given(st.floats(0.0, 0.9), st.floats(-0.3, 0.3), st.floats(-np.pi, np.pi), st.integers(0, 2**31))
def test_global_blocks_identity_at_random_points(P, Q, theta, seed):
    local = _sg_local(P=P, Q=Q, theta=theta)
    Gp = map_to_global(local).model
    rng = np.random.default_rng(seed)
    for w in rng.uniform(0.5, 2000, size=20):
        s = 1j * w
        assert rel_err(Gp.evaluate(s), global_blocks_at(local, s)) < 1e-9


def test_huge_inertia_reduces_frame_mapping_to_rotation():
    local = _sg_local(J=1e9)
    T = rotation_matrix(local.op.epsilon_0)
    Gp = map_to_global(local).model
    for f in (0.5, 5.0, 60.0):
        s = 2j * np.pi * f
        ref = T @ local.model.evaluate(s)[:2, :2] @ T.T
        assert rel_err(Gp.evaluate(s)[:2, :2], ref) < 1e-4


def test_zero_operating_point_leaves_frame_angle_unobservable():
    local = _sg_local()
    op0 = OperatingPoint(local.op.x0, np.zeros(3), np.zeros(3), 0.0)
    Gp = map_to_global(LocalPortMatrix(local.model, op0, local.apparatus)).model
    np.testing.assert_array_equal(Gp.C[:, -1], 0.0)
    s = 2j * np.pi * 3.0
    np.testing.assert_allclose(Gp.evaluate(s), local.model.evaluate(s), rtol=1e-12)


def test_model_without_speed_output_is_rejected():
    local = _sg_local()
    m = local.model
    bad = StateSpaceModel(m.A, m.B, m.C[:2], m.D[:2], m.input_labels, m.output_labels[:2],
                          m.state_names)
    with pytest.raises(StructuralError):
        map_to_global(LocalPortMatrix(bad, local.op, local.apparatus))


# ---- G' -> G'' -------------------------------------------------------------

def test_zero_grid_impedance_leaves_model_unchanged():
    glob = map_to_global(_sg_local())
    closed = close_grid(glob, static_gain(np.zeros((2, 2))))
    for s in (0.3j, 2j, 50j):
        np.testing.assert_allclose(closed.model.evaluate(s), glob.model.evaluate(s), rtol=1e-12)


def test_static_toy_closure():
    Gpp = closed_blocks_at(np.eye(3), 0.5 * np.eye(2))
    np.testing.assert_allclose(Gpp[:2, :2], 2 * np.eye(2))


def test_closed_blocks_identity_for_single_sg_case(case1_built, rng):
    e1, e2 = pointwise_block_errors(case1_built, "SG1", 1j * rng.uniform(0.5, 2000, 20))
    assert e1 < 1e-9 and e2 < 1e-9


@pytest.mark.parametrize("L, P", [(0.3, 0.2), (0.9, 0.7)])
def test_closed_blocks_identity_for_other_operating_points(case1_cfg, rng, L, P):
    case = case1_cfg.case.with_param("branch.b.L", L).with_param("bus.1.P_gen", P)
    e1, e2 = pointwise_block_errors(case.build(), "SG1", 1j * rng.uniform(0.5, 2000, 20))
    assert e1 < 1e-9 and e2 < 1e-9


def test_single_apparatus_assembly_equals_close_grid(case1_built):
    glob = case1_built.global_models["SG1"]
    Z = case1_built.nodal_impedance.model
    a = assemble_system([glob], Z, {"SG1": "1"})
    b = close_grid(glob, Z)
    assert np.max(match_poles(a.poles, b.poles)) < 1e-10


def test_sg_on_line_matches_monolithic_linearization(case1_built):
    assert oracle_pole_gap(case1_built) < 1e-8


def test_three_bus_composite_matches_monolithic_linearization(composite3_built):
    assert oracle_pole_gap(composite3_built) < 1e-7


def _symmetric_case(order):
    buses = [BusSpec("inf", "slack", infinite=True),
             BusSpec("A", "PV", P_gen=0.5, shunt_C=0.01),
             BusSpec("B", "PV", P_gen=0.5, shunt_C=0.01),
             BusSpec("M", "PQ", shunt_C=0.01)]
    branches = [BranchSpec("A", "M", R=0.01, L=0.2), BranchSpec("B", "M", R=0.01, L=0.2),
                BranchSpec("M", "inf", R=0.01, L=0.3)]
    apps = {"SG_A": ApparatusSpec("SG_A", "sg", "A", {"J": 4.0}),
            "SG_B": ApparatusSpec("SG_B", "sg", "B", {"J": 4.0})}
    return Case(Network(buses, branches), [apps[k] for k in order]).build()


def test_identical_machines_give_swap_invariant_spectrum():
    ab = _symmetric_case(["SG_A", "SG_B"])
    ba = _symmetric_case(["SG_B", "SG_A"])
    assert np.max(match_poles(ab.whole_system.poles, ba.whole_system.poles)) < 1e-9
    # every swing-band mode moves the two rotors either together or in anti-phase
    A = ab.whole_system.model.A
    lam, V = np.linalg.eig(A)
    names = ab.whole_system.model.state_names
    ia, ib = names.index("SG_A.omega"), names.index("SG_B.omega")
    for k in np.flatnonzero((lam.imag > 0) & (lam.imag < 2 * np.pi * 15)):
        a, b = V[ia, k], V[ib, k]
        if max(abs(a), abs(b)) > 1e-6 * np.linalg.norm(V[:, k]):
            assert min(abs(a - b), abs(a + b)) < 1e-6 * max(abs(a), abs(b))


def test_missing_bus_is_reported(case1_built):
    glob = case1_built.global_models["SG1"]
    with pytest.raises(Exception, match="unknown bus"):
        assemble_system([glob], case1_built.nodal_impedance.model, {"SG1": "nope"})


@pytest.mark.parametrize("phi", [0.7, -2.0])
def test_global_frame_reference_does_not_change_poles(composite3_cfg, composite3_built, phi):
    slack = next(b.id for b in composite3_cfg.case.network.buses if b.kind == "slack")
    rotated = composite3_cfg.case.with_param(f"bus.{slack}.angle", phi).build()
    g0 = composite3_built.global_models["SG1"].model.evaluate(2j)
    g1 = rotated.global_models["SG1"].model.evaluate(2j)
    assert rel_err(g1, g0) > 1e-3
    assert np.max(match_poles(rotated.whole_system.poles, composite3_built.whole_system.poles)) < 1e-9


@pytest.mark.parametrize("order", [[2, 0, 1], [1, 2, 0]])
def test_apparatus_order_does_not_change_poles(composite3_cfg, composite3_built, order):
    apps = composite3_cfg.case.apparatus
    shuffled = Case(composite3_cfg.case.network, [apps[k] for k in order]).build()
    assert np.max(match_poles(shuffled.whole_system.poles, composite3_built.whole_system.poles)) < 1e-9
