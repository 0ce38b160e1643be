"""Command-line front end.

Commands write CSV tables (and optional SVG charts) into ``--out``:

* ``poles``: whole-system poles, optionally over a parameter sweep
* ``coeff``: torque / dc-current coefficient over a frequency grid
* ``simulate``: nonlinear time-domain scenario
* ``participation``: SG resonant-peak screening at the dominant swing mode
* ``powerflow``: bus voltages and injections
* ``check``: port-mapped vs monolithic eigenvalue comparison

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 phase index inapplicable (coefficient unstable).
"""
from __future__ import annotations

import argparse
import csv
import io
import math
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import svg
from .analysis import (
    damping_ratio,
    dc_current_coefficient,
    dominant_swing_mode,
    frequency_response_table,
    participation_screen,
    phase_margin_index,
    pole_sweep,
    torque_coefficient,
)
from .config import BUNDLED, CaseConfig, SweepSpec, parse_config
from .errors import ConfigError, IndexInapplicableError, PortMapError
from .lti import PortLabel, match_poles, sort_poles
from .simulate import SimScenario, simulate_nonlinear

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_INDEX = 0, 2, 3, 4
ORACLE_TOL = 1e-7


class StageError(PortMapError):
    """A numerical failure attributed to one stage of the build pipeline."""

    def __init__(self, stage, exc):
        super().__init__(f"{stage} stage failed: {type(exc).__name__}: {exc}")
        self.stage = stage


def _num(v) -> str:
    """Stable text form of a number for CSV output."""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, str):
        return v
    v = float(v)
    if v == 0:
        return "0"
    return f"{v:.12g}"


def _write_atomic(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_num(v) for v in r])
    return buf.getvalue()


def parse_sweep(text: str) -> tuple[str, np.ndarray]:
    """``param=start:stop:n`` -> (param, grid)."""
    param, eq, rng = text.partition("=")
    parts = rng.split(":")
    if not eq or len(parts) != 3:
        raise ConfigError(f"--sweep expects <param>=<start>:<stop>:<n>, got {text!r}")
    try:
        start, stop, n = float(parts[0]), float(parts[1]), int(parts[2])
    except ValueError:
        raise ConfigError(f"--sweep has a non-numeric range in {text!r}") from None
    if n < 1 or (n > 1 and start == stop):
        raise ConfigError("--sweep grid must have n >= 1 and be strictly monotone")
    return param.strip(), np.linspace(start, stop, n)


def parse_freq(text: str) -> np.ndarray:
    """``start:stop:n[,log|lin]`` -> frequency grid in Hz."""
    rng, _, spacing = text.partition(",")
    spacing = spacing or "log"
    parts = rng.split(":")
    if len(parts) != 3 or spacing not in ("log", "lin"):
        raise ConfigError(f"--freq expects <start>:<stop>:<n>,log|lin, got {text!r}")
    try:
        start, stop, n = float(parts[0]), float(parts[1]), int(parts[2])
    except ValueError:
        raise ConfigError(f"--freq has a non-numeric range in {text!r}") from None
    if n < 1 or start <= 0 or stop <= 0:
        raise ConfigError("--freq needs positive frequencies and n >= 1")
    return SweepSpec("freq", start, stop, n, spacing).grid()


def staged_build(case):
    """Build and force each pipeline stage so failures name their stage."""
    built = case.build()
    stages = (
        ("power-flow", lambda: built.power_flow if built.case.connected else None),
        ("steady-state", lambda: built.operating_points if built.case.connected else None),
        ("assembly", lambda: built.analysis_model),
    )
    for name, fn in stages:
        try:
            fn()
        except (PortMapError, np.linalg.LinAlgError, ValueError) as exc:
            raise StageError(name, exc) from exc
    return built


# --------------------------------------------------------------------------
# commands


def cmd_poles(cfg: CaseConfig, out: Path, sweep=None, want_svg=False) -> int:
    if sweep is None:
        built = staged_build(cfg.case)
        p = sort_poles(built.poles())
        rows = [(0.0, lam.real, lam.imag, lam.imag / (2 * math.pi), z, k)
                for k, (lam, z) in enumerate(zip(p, damping_ratio(p)))]
        pole_sets, values = [p], [0.0]
        status = EXIT_OK
    else:
        param, grid = sweep
        try:
            cfg.case.get_param(param)
        except (PortMapError, AttributeError) as exc:
            raise ConfigError(f"sweep parameter '{param}' does not resolve: {exc}") from exc
        res = pole_sweep(cfg.case, param, grid)
        rows = []
        for v, p, ids in zip(res.values, res.poles, res.mode_ids):
            if p is None:
                continue
            for lam, z, i in zip(p, damping_ratio(p), ids):
                rows.append((v, lam.real, lam.imag, lam.imag / (2 * math.pi), z, i))
        for k, msg in sorted(res.errors.items()):
            print(f"sweep point {param}={res.values[k]:g}: {msg}", file=sys.stderr)
        pole_sets = [p for p in res.poles if p is not None]
        values = [v for v, p in zip(res.values, res.poles) if p is not None]
        status = EXIT_OK if pole_sets else EXIT_NUMERICAL
    header = ["sweep_value", "re_per_s", "im_per_s", "freq_hz", "damping_ratio", "tracked_mode_id"]
    _write_atomic(out / "poles.csv", _csv_text(header, rows))
    if want_svg and pole_sets:
        groups = [(p.real, p.imag / (2 * math.pi), f"{v:g}") for v, p in zip(values, pole_sets)]
        _write_atomic(out / "poles.svg", svg.scatter_plot(
            groups, f"{cfg.name}: pole locus", "Re (1/s)", "Im (Hz)", vline=0.0))
        lo, hi = cfg.swing_band()
        zoom = []
        for v, p in zip(values, pole_sets):
            f = p.imag / (2 * math.pi)
            keep = (f >= lo) & (f <= hi)
            zoom.append((p.real[keep], f[keep], f"{v:g}"))
        _write_atomic(out / "poles_swing.svg", svg.scatter_plot(
            zoom, f"{cfg.name}: swing band", "Re (1/s)", "Im (Hz)", vline=0.0))
    print(f"wrote {out / 'poles.csv'} ({len(rows)} rows)")
    return status


def _coefficient_for(built, aid, s):
    spec = built.case.apparatus_spec(aid)
    model = built.analysis_model
    inertia = built.inertia(aid)
    if spec.kind == "sg":
        return torque_coefficient(model, aid, s, inertia=inertia)
    return dc_current_coefficient(model, aid, s, inertia=inertia)


def _mode_of_interest(built, kind, band):
    """Dominant swing mode for rotor ports; rightmost oscillatory mode otherwise."""
    model = built.analysis_model
    if kind == "sg":
        try:
            return dominant_swing_mode(model, band)
        except PortMapError:
            return None
    p = model.poles
    p = p[(p.imag > 2 * math.pi * 1.0)]
    return complex(p[np.argmax(p.real)]) if p.size else None


def cmd_coefficient(cfg: CaseConfig, out: Path, port=None, freqs=None, want_svg=False,
                    mode_freq=None) -> int:
    aid = port or cfg.analysis.get("coefficient_port")
    if aid is None:
        raise ConfigError("no coefficient port: pass --port or set analysis.coefficient_port")
    try:
        spec = cfg.case.apparatus_spec(aid)
    except PortMapError as exc:
        raise ConfigError(str(exc)) from exc
    if freqs is None:
        g = cfg.analysis.get("frequencies", {"start": 0.1, "stop": 100.0, "n": 200})
        freqs = SweepSpec("freq", g["start"], g["stop"], g["n"], g.get("spacing", "log")).grid()
    built = staged_build(cfg.case)
    s = 2j * math.pi * np.asarray(freqs, dtype=float)
    coef = _coefficient_for(built, aid, s)
    K = coef.values
    mag = 20 * np.log10(np.abs(K))
    principal = np.degrees(np.angle(K))
    phase = np.degrees(np.unwrap(np.angle(K)))
    phase = phase + (principal[0] - phase[0]) if phase.size else phase
    rows = [(f, k.real, k.imag, m, ph, pp > -90.0)
            for f, k, m, ph, pp in zip(freqs, K, mag, phase, principal)]
    header = ["freq_hz", "re_K", "im_K", "mag_db", "phase_deg", "flag_above_minus90"]
    name = f"coeff_{aid}.csv"
    _write_atomic(out / name, _csv_text(header, rows))
    if want_svg:
        label = "K_T" if spec.kind == "sg" else "K_idc"
        _write_atomic(out / f"coeff_{aid}_mag.svg", svg.line_plot(
            [(freqs, mag, label)], f"{aid}: |{label}|", "frequency (Hz)", "magnitude (dB)",
            logx=True))
        _write_atomic(out / f"coeff_{aid}_phase.svg", svg.line_plot(
            [(freqs, phase, label)], f"{aid}: phase of {label}", "frequency (Hz)",
            "phase (deg)", logx=True, hlines=(-90.0,)))
    print(f"wrote {out / name} ({len(rows)} rows)")

    if mode_freq is None:
        lam = _mode_of_interest(built, spec.kind, cfg.swing_band())
        if lam is None:
            return EXIT_OK
        mode_freq = lam.imag / (2 * math.pi)
        print(f"mode of interest: {lam.real:.6g} {lam.imag:+.6g}j (1/s), {mode_freq:.4f} Hz")
    try:
        idx = phase_margin_index(coef, mode_freq)
    except IndexInapplicableError as exc:
        print(f"index inapplicable: {exc}", file=sys.stderr)
        return EXIT_INDEX
    verdict = "above -90 deg (stable)" if idx.stable_flag else "below -90 deg (unstable)"
    print(f"phase at {mode_freq:.4f} Hz: {idx.phase_deg:.3f} deg, {verdict}; "
          f"Re K = {idx.K_TD:.6g}")
    return EXIT_OK


def cmd_simulate(cfg: CaseConfig, out: Path, scenario=None, want_svg=False) -> int:
    if not cfg.scenarios:
        raise ConfigError(f"case {cfg.name} defines no scenarios")
    name = scenario or next(iter(cfg.scenarios))
    if name not in cfg.scenarios:
        raise ConfigError(f"unknown scenario {name!r}; available: {', '.join(cfg.scenarios)}")
    sc: SimScenario = cfg.scenarios[name]
    built = staged_build(cfg.case)
    try:
        system = built.composite
        trace = simulate_nonlinear(system, sc)
    except (ValueError, KeyError) as exc:
        raise ConfigError(f"scenario {name}: {exc}") from exc
    buf = io.StringIO()
    trace.to_csv(buf)
    fname = f"trace_{name}.csv"
    _write_atomic(out / fname, buf.getvalue())
    if want_svg:
        for p, y in trace.signals.items():
            safe = p.replace("/", "_")
            _write_atomic(out / f"trace_{name}_{safe}.svg", svg.line_plot(
                [(trace.time, y, p)], f"{cfg.name}: {p}", "time (s)", trace.units.get(p, "pu")))
    print(f"wrote {out / fname} ({trace.time.size} rows)")
    if trace.diverged:
        print(f"note: run {trace.note}; trace truncated", file=sys.stderr)
    return EXIT_OK


def cmd_participation(cfg: CaseConfig, out: Path, mode_freq=None, band=None, want_svg=False) -> int:
    built = staged_build(cfg.case)
    ws = built.whole_system if built.case.connected else None
    sg_ids = [a.id for a in cfg.case.connected if a.kind == "sg"]
    if ws is None or not sg_ids:
        raise ConfigError(f"case {cfg.name} has no networked SG to screen")
    if mode_freq is None:
        lam = dominant_swing_mode(ws.model, band or cfg.swing_band())
        mode_freq = lam.imag / (2 * math.pi)
        print(f"dominant swing mode: {lam.real:.6g} {lam.imag:+.6g}j (1/s), {mode_freq:.4f} Hz")
    rep = participation_screen(ws, mode_freq, sg_ids, cfg.analysis.get("participation_band", 0.3))
    rows = [(rep.mode_freq_hz, k + 1, r.apparatus_id, r.peak_db, r.peak_freq_hz, r.participating)
            for k, r in enumerate(rep.rows)]
    header = ["mode_freq_hz", "rank", "apparatus_id", "peak_db", "peak_freq_hz", "participating"]
    _write_atomic(out / "participation.csv", _csv_text(header, rows))
    if want_svg:
        f = np.linspace(0.7 * mode_freq, 1.3 * mode_freq, 201)
        series = []
        for aid in sg_ids:
            tab = frequency_response_table(ws.model, PortLabel(aid, "T_m"),
                                           PortLabel(aid, "omega"), f)
            series.append(([r[0] for r in tab], [r[1] for r in tab], aid))
        _write_atomic(out / "participation.svg", svg.line_plot(
            series, f"{cfg.name}: |G''_Tw| near {mode_freq:.2f} Hz", "frequency (Hz)",
            "magnitude (dB)"))
    print(f"wrote {out / 'participation.csv'}; ranking: {', '.join(rep.ranking)}")
    return EXIT_OK


def cmd_powerflow(cfg: CaseConfig, out: Path) -> int:
    built = cfg.case.build()
    try:
        pf = built.power_flow
    except PortMapError as exc:
        raise StageError("power-flow", exc) from exc
    kinds = {b.id: b.kind for b in cfg.case.network.buses}
    rows = []
    for bid in pf.bus_ids:
        V = pf.voltage(bid)
        S = pf.injection(bid)
        rows.append((bid, kinds[bid], abs(V), math.degrees(np.angle(V)), S.real, S.imag))
    header = ["bus_id", "type", "v_mag_pu", "v_angle_deg", "p_inj_pu", "q_inj_pu"]
    _write_atomic(out / "powerflow.csv", _csv_text(header, rows))
    print(f"wrote {out / 'powerflow.csv'}; converged in {pf.iterations} iterations, "
          f"mismatch {pf.mismatch:.3g} pu")
    return EXIT_OK


def oracle_gap(case) -> tuple[float, int]:
    """Largest eigenvalue distance between the port-mapped and monolithic models."""
    built = staged_build(case)
    if not built.case.connected:
        return 0.0, built.analysis_model.n_states
    p1 = built.whole_system.model.poles
    p2 = built.monolithic().poles
    return float(np.max(match_poles(p1, p2), initial=0.0)), p1.size


def cmd_check(cfgs, out: Path) -> int:
    rows, worst = [], 0.0
    for cfg in cfgs:
        gap, n = oracle_gap(cfg.case)
        ok = gap < ORACLE_TOL
        worst = max(worst, gap)
        rows.append((cfg.name, n, gap, ok))
        print(f"{'PASS' if ok else 'FAIL'} {cfg.name}: {n} poles, max |dlambda| = {gap:.3g}")
    _write_atomic(out / "check.csv", _csv_text(["case", "n_poles", "max_abs_dlambda", "pass"], rows))
    return EXIT_OK if worst < ORACLE_TOL else EXIT_NUMERICAL


# --------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="portmap", description=__doc__.split("\n")[0])
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        p.add_argument("--config", required=config_required,
                       help=f"case file path or bundled name ({', '.join(BUNDLED)})")
        p.add_argument("--out", default=None, help="output directory (default: config output_dir)")
        p.add_argument("--svg", action="store_true", help="also write SVG charts")

    p = sub.add_parser("poles", help="whole-system poles, optionally swept")
    common(p)
    p.add_argument("--sweep", help="<param>=<start>:<stop>:<n> or the name of a config sweep")
    p = sub.add_parser("coeff", help="torque or dc-current coefficient")
    common(p)
    p.add_argument("--port", help="apparatus id (default: analysis.coefficient_port)")
    p.add_argument("--freq", help="<start>:<stop>:<n>,log|lin in Hz")
    p.add_argument("--mode-freq", type=float, help="mode frequency (Hz) for the phase index")
    p = sub.add_parser("simulate", help="nonlinear time-domain scenario")
    common(p)
    p.add_argument("--scenario", help="scenario name (default: first in config)")
    p = sub.add_parser("participation", help="SG resonant-peak participation screening")
    common(p)
    p.add_argument("--mode-freq", type=float, help="mode frequency (Hz); default dominant swing mode")
    p.add_argument("--freq", help="<lo>:<hi>:<n> band (Hz) in which to look for the swing mode")
    p = sub.add_parser("powerflow", help="power-flow solution")
    common(p)
    p = sub.add_parser("check", help="port-mapped vs monolithic eigenvalues")
    common(p, config_required=False)
    return ap


def _resolve_sweep(cfg, text):
    if text is None:
        return None
    if text in cfg.sweeps:
        s = cfg.sweeps[text]
        return s.parameter, s.grid()
    return parse_sweep(text)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "check" and args.config is None:
            cfgs = [parse_config(n) for n in BUNDLED]
            out = Path(args.out or "out/check")
            return cmd_check(cfgs, out)
        cfg = parse_config(args.config)
        out = Path(args.out or cfg.output_dir)
        if args.command == "poles":
            return cmd_poles(cfg, out, _resolve_sweep(cfg, args.sweep), args.svg)
        if args.command == "coeff":
            freqs = parse_freq(args.freq) if args.freq else None
            return cmd_coefficient(cfg, out, args.port, freqs, args.svg, args.mode_freq)
        if args.command == "simulate":
            return cmd_simulate(cfg, out, args.scenario, args.svg)
        if args.command == "participation":
            band = None
            if args.freq:
                lo, hi, _ = args.freq.partition(",")[0].split(":")
                band = (float(lo), float(hi))
            return cmd_participation(cfg, out, args.mode_freq, band, args.svg)
        if args.command == "powerflow":
            return cmd_powerflow(cfg, out)
        return cmd_check([cfg], out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except IndexInapplicableError as exc:
        print(f"index inapplicable: {exc}", file=sys.stderr)
        return EXIT_INDEX
    except (PortMapError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
