import csv
import math
from dataclasses import replace

import pytest

from portmap.cli import main, parse_freq, parse_sweep
from portmap.config import load_case
from portmap.errors import ConfigError


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def run(tmp_path, *args):
    return main([*args, "--out", str(tmp_path)])


def write_case(tmp_path, name, **params):
    cfg = load_case(name)
    case = cfg.case
    for path, value in params.items():
        case = case.with_param(path.replace("__", "."), value)
    path = tmp_path / f"{name}_mod.yaml"
    replace(cfg, case=case).dump(path)
    return str(path)


# ---- argument parsing ------------------------------------------------------

def test_sweep_and_frequency_syntax():
    param, grid = parse_sweep("branch.b.R=0:0.3:4")
    assert param == "branch.b.R" and list(grid) == pytest.approx([0, 0.1, 0.2, 0.3])
    assert list(parse_freq("1:100:3,log")) == pytest.approx([1, 10, 100])
    with pytest.raises(ConfigError):
        parse_sweep("branch.b.R=0:0.3")
    with pytest.raises(ConfigError):
        parse_sweep("branch.b.R=0.3:0.3:4")


# ---- exit codes -----------------------------------------------------------

def test_success_exit_code(tmp_path):
    assert run(tmp_path, "poles", "--config", "case1_sg_infinite_bus") == 0


def test_config_error_exit_code(tmp_path, capsys):
    assert run(tmp_path, "poles", "--config", str(tmp_path / "missing.yaml")) == 2
    bad = tmp_path / "bad.yaml"
    bad.write_text(load_case("case1_sg_infinite_bus").dump().replace("to: inf", "to: nowhere"))
    assert run(tmp_path, "poles", "--config", str(bad)) == 2
    assert "nowhere" in capsys.readouterr().err
    assert run(tmp_path, "poles", "--config", "case1_sg_infinite_bus",
               "--sweep", "branch.zz.R=0:1:3") == 2


def test_numerical_failure_exit_code(tmp_path, capsys):
    path = write_case(tmp_path, "case1_sg_infinite_bus", **{"branch__b__L": 3.0})
    assert run(tmp_path, "poles", "--config", path) == 3
    assert "power-flow" in capsys.readouterr().err


def test_index_inapplicable_exit_code(tmp_path, capsys):
    path = write_case(tmp_path, "case2_ibr_weak_grid", **{"branch__grid__L": 1.0})
    assert run(tmp_path, "coeff", "--config", path, "--freq", "1:100:20,log") == 4
    assert "does not apply" in capsys.readouterr().err
    assert len(read_csv(tmp_path / "coeff_IBR1.csv")) == 20


# ---- outputs -----------------------------------------------------------------

def test_pole_rows_match_state_count(tmp_path):
    assert run(tmp_path, "poles", "--config", "composite3_bus") == 0
    rows = read_csv(tmp_path / "poles.csv")
    assert len(rows) == load_case("composite3_bus").case.build().whole_system.model.n_states
    assert {r["sweep_value"] for r in rows} == {"0"}
    assert list(rows[0]) == ["sweep_value", "re_per_s", "im_per_s", "freq_hz", "damping_ratio",
                             "tracked_mode_id"]


def test_named_sweep_rows(tmp_path):
    assert run(tmp_path, "poles", "--config", "case1_sg_infinite_bus", "--sweep", "R_b", "--svg") == 0
    rows = read_csv(tmp_path / "poles.csv")
    n = load_case("case1_sg_infinite_bus").case.build().whole_system.model.n_states
    assert len(rows) == 13 * n
    assert (tmp_path / "poles.svg").exists() and (tmp_path / "poles_swing.svg").exists()


def test_outputs_are_byte_identical_across_runs(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        assert main(["poles", "--config", "case1_sg_infinite_bus", "--sweep", "branch.b.R=0:0.3:4",
                     "--out", str(d), "--svg"]) == 0
        assert main(["coeff", "--config", "case1_sg_infinite_bus", "--out", str(d), "--svg"]) == 0
    for f in sorted(p.name for p in a.iterdir()):
        assert (a / f).read_bytes() == (b / f).read_bytes(), f


def test_torque_coefficient_csv_and_verdict(tmp_path, capsys):
    path = write_case(tmp_path, "case1_sg_infinite_bus", **{"branch__b__R": 0.3})
    assert run(tmp_path, "coeff", "--config", path, "--freq", "0.1:100:10,log") == 0
    assert "below -90 deg" in capsys.readouterr().out
    rows = read_csv(tmp_path / "coeff_SG1.csv")
    assert len(rows) == 10
    assert {r["flag_above_minus90"] for r in rows} == {"true", "false"}
    for r in rows:
        mag = 20 * math.log10(math.hypot(float(r["re_K"]), float(r["im_K"])))
        assert float(r["mag_db"]) == pytest.approx(mag, abs=1e-9)
        principal = math.degrees(math.atan2(float(r["im_K"]), float(r["re_K"])))
        assert (r["flag_above_minus90"] == "true") == (principal > -90)


def test_isolated_rotor_coefficient_is_the_damping(tmp_path):
    assert run(tmp_path, "coeff", "--config", "isolated_rotor", "--freq", "0.1:10:5,log") == 0
    kd = load_case("isolated_rotor").case.get_param("apparatus.SG1.K_D")
    for r in read_csv(tmp_path / "coeff_SG1.csv"):
        assert float(r["re_K"]) == pytest.approx(kd, rel=1e-9)
        assert abs(float(r["im_K"])) < 1e-9


def test_participation_rows(tmp_path, capsys):
    assert run(tmp_path, "participation", "--config", "composite3_bus") == 0
    cfg = load_case("composite3_bus")
    rows = read_csv(tmp_path / "participation.csv")
    assert len(rows) == sum(a.kind == "sg" for a in cfg.case.connected)
    assert [int(r["rank"]) for r in rows] == list(range(1, len(rows) + 1))


def test_simulate_rows(tmp_path):
    assert run(tmp_path, "simulate", "--config", "case1_sg_infinite_bus", "--scenario", "steady",
               "--svg") == 0
    sc = load_case("case1_sg_infinite_bus").scenarios["steady"]
    rows = read_csv(tmp_path / "trace_steady.csv")
    assert len(rows) == round(sc.end_time / sc.step) + 1
    assert list(rows[0]) == ["time_s", *sc.probes]


def test_unknown_scenario_is_a_config_error(tmp_path):
    assert run(tmp_path, "simulate", "--config", "case1_sg_infinite_bus", "--scenario", "x") == 2


def test_powerflow_csv(tmp_path):
    assert run(tmp_path, "powerflow", "--config", "ieee14_powerflow") == 0
    rows = read_csv(tmp_path / "powerflow.csv")
    assert len(rows) == 14
    assert float(rows[0]["v_mag_pu"]) == pytest.approx(1.06)


def test_check_command(tmp_path, capsys):
    assert run(tmp_path, "check", "--config", "composite3_bus") == 0
    assert capsys.readouterr().out.startswith("PASS composite3_bus")
    rows = read_csv(tmp_path / "check.csv")
    assert rows[0]["pass"] == "true"


def test_case1_poles_include_flux_pair_near_60_hz(tmp_path):
    assert run(tmp_path, "poles", "--config", "case1_sg_infinite_bus") == 0
    freqs = [float(r["freq_hz"]) for r in read_csv(tmp_path / "poles.csv")]
    assert any(40 < f < 80 for f in freqs) and any(-80 < f < -40 for f in freqs)


def test_lossless_line_verdict_is_stable(tmp_path, capsys):
    assert run(tmp_path, "coeff", "--config", "case1_sg_infinite_bus") == 0
    assert "above -90 deg" in capsys.readouterr().out


def test_no_event_scenario_gives_flat_traces(tmp_path):
    assert run(tmp_path, "simulate", "--config", "case1_sg_infinite_bus", "--scenario", "steady") == 0
    rows = read_csv(tmp_path / "trace_steady.csv")
    for probe in ("SG1.omega", "SG1.P", "1.v_mag"):
        vals = [float(r[probe]) for r in rows]
        assert max(vals) - min(vals) < 1e-8


def test_slow_ibr_controls_make_sg2_dominant(tmp_path, capsys):
    path = write_case(tmp_path, "case3_ieee14_composite", **{"apparatus__*__f_bw_pf": 5.0})
    assert run(tmp_path, "participation", "--config", path) == 0
    rows = read_csv(tmp_path / "participation.csv")
    assert rows[0]["apparatus_id"] == "SG2"
    assert 6 < float(rows[0]["mode_freq_hz"]) < 13


def test_single_generator_ranking_is_trivial(tmp_path):
    assert run(tmp_path, "participation", "--config", "case1_sg_infinite_bus") == 0
    rows = read_csv(tmp_path / "participation.csv")
    assert [r["apparatus_id"] for r in rows] == ["SG1"]
