import math

import numpy as np
import pytest
from oracles import rel_err

from portmap.errors import InfeasiblePowerFlowError, NetworkError
from portmap.lti import match_poles
from portmap.network import (
    BranchSpec,
    BusSpec,
    Network,
    branch_impedance_dq,
    branch_impedance_matrix,
    build_nodal_admittance,
    dynamic_network,
    nodal_impedance,
    phasor_admittance,
    short_circuit_ratio,
    solve_power_flow,
)
from portmap.portmapping import assemble_system
from portmap.simulate import simulate_linear

WB = 2 * math.pi * 60

# published IEEE 14-bus load-flow solution (magnitude pu, angle deg)
IEEE14_V = [1.060, 1.045, 1.010, 1.018, 1.020, 1.070, 1.062, 1.090, 1.056, 1.051, 1.057, 1.055,
            1.050, 1.036]
IEEE14_ANGLE = [0.0, -4.98, -12.72, -10.33, -8.78, -14.22, -13.37, -13.36, -14.94, -15.10, -14.79,
                -15.07, -15.16, -16.04]


def realify(Yc):
    """Complex n x n phasor matrix -> real 2n x 2n DQ matrix."""
    n = Yc.shape[0]
    out = np.zeros((2 * n, 2 * n))
    out[0::2, 0::2] = Yc.real
    out[0::2, 1::2] = -Yc.imag
    out[1::2, 0::2] = Yc.imag
    out[1::2, 1::2] = Yc.real
    return out


def two_bus(shunt_C=0.01, R=0.05, L=0.2, **bus2):
    buses = [BusSpec("1", "slack", shunt_C=shunt_C), BusSpec("2", "PQ", shunt_C=shunt_C, **bus2)]
    return Network(buses, [BranchSpec("1", "2", R=R, L=L)], omega_base=WB)


# ---- branch impedance ------------------------------------------------------

def test_static_branch_impedance():
    Z = branch_impedance_matrix(0.1, 0.3, 0.0)
    np.testing.assert_allclose(Z, [[0.1, -0.3], [0.3, 0.1]])


def test_lossless_branch_is_purely_dynamic_on_the_diagonal():
    Z = branch_impedance_matrix(0.0, 0.3, 2j, omega_0=1.0, omega_base=1.0)
    assert Z[0, 0] == pytest.approx(0.6j) and Z[1, 1] == pytest.approx(0.6j)


def test_realization_inverts_pointwise_impedance(rng):
    Y = branch_impedance_dq(0.1, 0.3, omega_0=1.0, omega_base=WB)
    for s in 1j * rng.uniform(1, 2000, 5):
        Z = branch_impedance_matrix(0.1, 0.3, s, 1.0, WB)
        np.testing.assert_allclose(Y.evaluate(s) @ Z, np.eye(2), atol=1e-12)


def test_voltage_step_current_matches_closed_form():
    R, L, v = 0.05, 0.2, 0.1
    Y = branch_impedance_dq(R, L, omega_0=1.0, omega_base=WB, label="br")
    tr = simulate_linear(Y, end_time=0.05, step=1e-4, steps=[(0.0, "br.v_D", v)])
    z = R + 1j * L
    ref = v / z * (1 - np.exp(-z * WB / L * tr.time))
    got = tr.signals["br.i_D"] + 1j * tr.signals["br.i_Q"]
    assert np.max(np.abs(got - ref)) < 1e-6 * np.max(np.abs(ref))


# ---- nodal admittance -------------------------------------------------------

def _shunt_part(net, s):
    dyn = dynamic_network(net)
    out = np.zeros((2 * dyn.n_bus, 2 * dyn.n_bus), dtype=complex)
    for k in range(dyn.n_bus):
        out[2 * k:2 * k + 2, 2 * k:2 * k + 2] = (
            dyn.G[k] * np.eye(2) + dyn.C[k] * (s / WB * np.eye(2) + np.array([[0, -1], [1, 0]]))
        )
    return out


def test_single_branch_nodal_rule(rng):
    net = two_bus()
    Y = build_nodal_admittance(net)
    for s in 1j * rng.uniform(1, 500, 3):
        y = np.linalg.inv(branch_impedance_matrix(0.05, 0.2, s, 1.0, WB))
        ref = np.block([[y, -y], [-y, y]])
        np.testing.assert_allclose(Y.evaluate(s) - _shunt_part(net, s), ref, atol=1e-12)


def test_shunt_changes_only_its_own_block():
    net = two_bus()
    s = 3j
    Y0 = build_nodal_admittance(net).evaluate(s)
    Y1 = build_nodal_admittance(net.with_bus("2", G_shunt=0.4)).evaluate(s)
    diff = Y1 - Y0
    np.testing.assert_allclose(diff[2:, 2:], 0.4 * np.eye(2), atol=1e-14)
    diff[2:, 2:] = 0
    assert np.all(diff == 0)


def test_phasor_admittance_agrees_at_fundamental(case3_cfg):
    built = case3_cfg.case.build()
    net, pf = built.network, built.power_flow
    Yc, ids = phasor_admittance(net, pf, include_loads=True)
    Y = build_nodal_admittance(net, pf)
    assert list(Y.bus_ids) == list(ids)
    assert rel_err(Y.evaluate(0.0), realify(Yc)) < 1e-9


def test_nodal_admittance_is_reciprocal_and_passive(case3_cfg, rng):
    built = case3_cfg.case.build()
    Y = build_nodal_admittance(built.network, built.power_flow)
    n = len(Y.bus_ids)
    for w in rng.uniform(0.1, 3000, 10):
        M = Y.evaluate(1j * w)
        for i in range(n):
            for j in range(i):
                np.testing.assert_allclose(Y.block(1j * w, i, j), Y.block(1j * w, j, i), atol=1e-12)
        for _ in range(5):
            x = rng.normal(size=2 * n) + 1j * rng.normal(size=2 * n)
            assert np.real(np.conj(x) @ M @ x) >= -1e-12 * np.linalg.norm(M) * (x.conj() @ x).real


def test_nodal_admittance_needs_shunt_capacitance():
    with pytest.raises(NetworkError, match="shunt"):
        build_nodal_admittance(two_bus(shunt_C=0.0))


# ---- nodal impedance / Kron reduction --------------------------------------

def test_impedance_inverts_admittance(rng):
    Y = build_nodal_admittance(two_bus())
    Z = nodal_impedance(Y)
    for s in rng.normal(size=10) + 1j * rng.uniform(1, 1000, 10):
        np.testing.assert_allclose(Z.evaluate(s) @ Y.evaluate(s), np.eye(4), atol=1e-8)


def test_radial_chain_end_sees_series_sum():
    buses = [BusSpec("src", "slack", infinite=True)] + [
        BusSpec(str(k), "PQ", shunt_C=1e-9) for k in (1, 2, 3)
    ]
    branches = [BranchSpec("src", "1", R=0.01, L=0.1), BranchSpec("1", "2", R=0.02, L=0.2),
                BranchSpec("2", "3", R=0.03, L=0.3)]
    net = Network(buses, branches, omega_base=WB)
    Z = nodal_impedance(build_nodal_admittance(net), ["3"])
    s = 2j
    ref = branch_impedance_matrix(0.06, 0.6, s, 1.0, WB)
    assert rel_err(Z.evaluate(s), ref) < 1e-6


def test_kron_reduction_matches_pointwise_inverse(case3_cfg, rng):
    built = case3_cfg.case.build()
    Y = built.nodal_admittance
    keep = [a.bus for a in case3_cfg.case.connected]
    assert len(keep) == 5
    Z = nodal_impedance(Y, keep)
    idx = np.concatenate([[2 * Y.bus_ids.index(b), 2 * Y.bus_ids.index(b) + 1] for b in keep])
    for w in rng.uniform(1, 3000, 20):
        s = 1j * w
        Zr = np.linalg.inv(Y.evaluate(s))[np.ix_(idx, idx)]
        assert np.linalg.norm(Z.evaluate(s) @ np.linalg.inv(Zr) - np.eye(10)) < 1e-7


def test_kron_reduction_leaves_whole_system_poles_unchanged(composite3_built):
    b = composite3_built
    full = nodal_impedance(b.nodal_admittance)
    apps = [b.global_models[a.id] for a in b.case.connected]
    ws = assemble_system(apps, full.model, b.bus_of)
    assert np.max(match_poles(ws.poles, b.whole_system.poles)) < 1e-7


def test_unknown_retained_bus_is_rejected():
    with pytest.raises(NetworkError):
        nodal_impedance(build_nodal_admittance(two_bus()), ["9"])


# ---- power flow ------------------------------------------------------------

def test_unloaded_two_bus_is_flat():
    pf = solve_power_flow(two_bus(shunt_C=0.0))
    np.testing.assert_allclose(pf.V, [1.0, 1.0], atol=1e-12)


def test_two_bus_load_matches_gauss_seidel():
    net = two_bus(shunt_C=0.0, R=0.0, L=0.1, P_load=0.5)
    pf = solve_power_flow(net)
    y = 1 / 0.1j
    V1, V2 = 1.0 + 0j, 1.0 + 0j
    for _ in range(500):
        V2 = (np.conj(-0.5 / V2) + y * V1) / y
    assert abs(pf.voltage("2") - V2) < 1e-8
    assert pf.mismatch < 1e-10


def test_ieee14_matches_published_solution():
    from portmap.config import load_case

    net = load_case("ieee14_powerflow").case.network
    pf = solve_power_flow(net)
    assert pf.mismatch < 1e-8
    np.testing.assert_allclose(np.abs(pf.V), IEEE14_V, atol=0.01)
    np.testing.assert_allclose(np.degrees(np.angle(pf.V)), IEEE14_ANGLE, atol=0.1)


def test_infeasible_power_flow_reports_history():
    with pytest.raises(InfeasiblePowerFlowError) as err:
        solve_power_flow(two_bus(R=0.0, L=0.5, P_load=5.0))
    assert len(err.value.history) > 1


def test_network_topology_errors():
    with pytest.raises(NetworkError):
        Network([BusSpec("1", "slack")], [BranchSpec("1", "2")])
    with pytest.raises(NetworkError):
        BranchSpec("1", "1")
    with pytest.raises(NetworkError):
        BusSpec("1", "PQ", infinite=True)


# ---- short-circuit ratio ---------------------------------------------------

def _scr_net(L):
    return Network([BusSpec("inf", "slack", infinite=True), BusSpec("1", "PQ", shunt_C=0.0)],
                   [BranchSpec("1", "inf", R=0.0, L=L)])


def test_short_circuit_ratio():
    assert short_circuit_ratio(_scr_net(0.369), "1") == pytest.approx(1 / 0.369)
    assert short_circuit_ratio(_scr_net(0.369), "1") == pytest.approx(2.71, abs=0.01)
    assert short_circuit_ratio(_scr_net(0.738), "1") == pytest.approx(
        short_circuit_ratio(_scr_net(0.369), "1") / 2)
    assert short_circuit_ratio(_scr_net(0.369), "inf") == math.inf
