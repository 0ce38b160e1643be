"""Case configuration files: YAML documents validated against a JSON schema.

A configuration describes the network (buses and branches), the apparatus
placed on buses, optional parameter sweeps, simulation scenarios and
analysis settings. :func:`parse_config` validates the document, resolves
every cross reference and returns a :class:`CaseConfig`; :meth:`CaseConfig.dump`
writes the resolved document with all defaults made explicit.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, fields
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np
import yaml

from .apparatus import IBRParams, SGParams
from .errors import ConfigError, PortMapError
from .network import DEFAULT_SHUNT_C, BranchSpec, BusSpec, Network
from .simulate import SimScenario
from .system import ApparatusSpec, Case

BUNDLED = (
    "case1_sg_infinite_bus",
    "case2_ibr_weak_grid",
    "case3_ieee14_composite",
    "composite3_bus",
    "ieee14_powerflow",
    "isolated_rotor",
)

_BUS_KEYS = {"type": "kind"}
_BRANCH_KEYS = {"from": "from_bus", "to": "to_bus"}
_PARAM_FIELDS = {
    "sg": [f.name for f in fields(SGParams) if f.name != "omega_base"],
    "ibr": [f.name for f in fields(IBRParams) if f.name != "omega_base"],
}


def schema() -> dict:
    """The published JSON schema of case files."""
    text = resources.files("portmap").joinpath("cases/case_schema.json").read_text()
    return json.loads(text)


def bundled_path(name: str) -> Path:
    if name not in BUNDLED:
        raise ConfigError(f"unknown bundled case {name!r}; available: {', '.join(BUNDLED)}")
    return Path(str(resources.files("portmap").joinpath(f"cases/{name}.yaml")))


@dataclass(frozen=True)
class SweepSpec:
    parameter: str
    start: float
    stop: float
    n: int
    spacing: str = "lin"

    def grid(self) -> np.ndarray:
        if self.spacing == "log":
            return np.geomspace(self.start, self.stop, self.n)
        return np.linspace(self.start, self.stop, self.n)


@dataclass(frozen=True)
class CaseConfig:
    name: str
    base_frequency: float
    case: Case
    sweeps: dict = field(default_factory=dict)
    scenarios: dict = field(default_factory=dict)
    analysis: dict = field(default_factory=dict)
    output_dir: str = "out"
    description: str = ""
    source: str | None = None

    def to_dict(self) -> dict:
        """Resolved document: every default explicit, ids as strings."""
        net = self.case.network
        buses = []
        for b in net.buses:
            buses.append({
                "id": b.id, "type": b.kind, "V": b.V, "angle": b.angle,
                "P_gen": b.P_gen, "Q_gen": b.Q_gen, "P_load": b.P_load, "Q_load": b.Q_load,
                "G_shunt": b.G_shunt, "B_shunt": b.B_shunt,
                "shunt_C": DEFAULT_SHUNT_C if b.shunt_C is None else b.shunt_C,
                "infinite": b.infinite,
            })
        branches = [{"id": br.name, "from": br.from_bus, "to": br.to_bus, "R": br.R, "L": br.L,
                     "B": br.B, "tap": br.tap} for br in net.branches]
        apparatus = []
        for a in self.case.apparatus:
            params = a.make(self.case.omega_base).params
            entry = {"id": a.id, "type": a.kind}
            if a.bus is not None:
                entry["bus"] = a.bus
            entry["params"] = {k: getattr(params, k) for k in _PARAM_FIELDS[a.kind]}
            apparatus.append(entry)
        doc = {
            "name": self.name,
            "description": self.description,
            "base_frequency": self.base_frequency,
            "output_dir": self.output_dir,
            "buses": buses,
            "branches": branches,
            "apparatus": apparatus,
            "sweeps": {k: {"parameter": s.parameter, "start": s.start, "stop": s.stop, "n": s.n,
                           "spacing": s.spacing} for k, s in self.sweeps.items()},
            "scenarios": {k: _scenario_dict(s) for k, s in self.scenarios.items()},
            "analysis": dict(self.analysis),
        }
        return _plain(doc)

    def dump(self, path=None) -> str:
        text = yaml.safe_dump(self.to_dict(), sort_keys=False, default_flow_style=None)
        if path is not None:
            Path(path).write_text(text)
        return text

    def swing_band(self):
        return tuple(self.analysis.get("swing_band_hz", (0.1, 15.0)))


def _scenario_dict(s: SimScenario) -> dict:
    return {
        "end_time": s.end_time,
        "step": s.step,
        "probes": list(s.probes),
        "events": [{"time": t, "parameter": p, "value": v} for t, p, v in s.events],
        "perturbation": [{"target": t, "delta": d} for t, d in s.perturbation],
    }


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    return obj


# --------------------------------------------------------------------------
# parsing


def _line_of(node, path) -> int | None:
    """1-based source line of the node at ``path`` (best effort)."""
    line = None if node is None else node.start_mark.line + 1
    for key in path:
        if isinstance(node, yaml.MappingNode):
            nxt = None
            for k, v in node.value:
                if k.value == str(key):
                    nxt = v
                    line = k.start_mark.line + 1
                    break
            node = nxt
        elif isinstance(node, yaml.SequenceNode) and isinstance(key, int) and key < len(node.value):
            node = node.value[key]
            line = node.start_mark.line + 1
        else:
            break
        if node is None:
            break
    return line


def _fmt_path(path) -> str:
    out = ""
    for p in path:
        out += f"[{p}]" if isinstance(p, int) else (f".{p}" if out else str(p))
    return out


def parse_config(path_or_text, *, text: bool = False) -> CaseConfig:
    """Load, validate and resolve a case configuration.

    ``path_or_text`` is a file path, or YAML source when ``text=True``.
    Raises :class:`ConfigError` with key path and line number on failure.
    """
    if text:
        src, source = path_or_text, None
    else:
        p = Path(path_or_text)
        if not p.exists() and p.suffix == "" and len(p.parts) == 1:
            p = bundled_path(str(path_or_text))
        try:
            src = p.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from exc
        source = str(p)
    try:
        root = yaml.compose(src)
        doc = yaml.safe_load(src)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError(f"YAML syntax error: {getattr(exc, 'problem', exc)}",
                          line=None if mark is None else mark.line + 1) from exc
    if not isinstance(doc, dict):
        raise ConfigError("config must be a mapping at top level", line=1)

    validator = jsonschema.Draft7Validator(schema())
    err = jsonschema.exceptions.best_match(validator.iter_errors(doc))
    if err is not None:
        path = list(err.absolute_path)
        if err.validator == "additionalProperties" and isinstance(err.instance, dict):
            allowed = set(err.schema.get("properties", {}))
            extra = sorted(k for k in err.instance if k not in allowed)
            if extra:
                path.append(extra[0])
        raise ConfigError(f"schema violation: {err.message}", _fmt_path(path) or "<root>",
                          _line_of(root, path))
    return _resolve(doc, root, source)


def _ref_error(msg, root, path):
    return ConfigError(msg, _fmt_path(path), _line_of(root, path))


def _resolve(doc, root, source) -> CaseConfig:
    buses = []
    for k, b in enumerate(doc["buses"]):
        kw = {_BUS_KEYS.get(key, key): val for key, val in b.items()}
        kw["id"] = str(kw["id"])
        try:
            buses.append(BusSpec(**kw))
        except PortMapError as exc:
            raise _ref_error(str(exc), root, ["buses", k]) from exc
    bus_ids = [b.id for b in buses]
    if len(set(bus_ids)) != len(bus_ids):
        raise ConfigError("duplicate bus ids", "buses", _line_of(root, ["buses"]))

    branches = []
    for k, br in enumerate(doc.get("branches", [])):
        kw = {_BRANCH_KEYS.get(key, key): val for key, val in br.items()}
        kw["from_bus"], kw["to_bus"] = str(kw["from_bus"]), str(kw["to_bus"])
        if "id" in kw:
            kw["id"] = str(kw["id"])
        name = kw.get("id") or f"{kw['from_bus']}-{kw['to_bus']}"
        for end in ("from", "to"):
            target = kw[f"{end}_bus"]
            if target not in bus_ids:
                raise _ref_error(f"branch '{name}' field '{end}' references bus '{target}', "
                                 "which is not defined", root, ["branches", k, end])
        try:
            spec = BranchSpec(**kw)
        except PortMapError as exc:
            raise _ref_error(str(exc), root, ["branches", k]) from exc
        branches.append(spec)
    names = [b.name for b in branches]
    if len(set(names)) != len(names):
        raise ConfigError("duplicate branch ids", "branches", _line_of(root, ["branches"]))

    base_f = float(doc["base_frequency"])
    network = Network(buses, branches, omega_base=2 * math.pi * base_f)

    apparatus = []
    for k, a in enumerate(doc.get("apparatus", [])):
        bus = None if a.get("bus") is None else str(a["bus"])
        if bus is not None and bus not in bus_ids:
            raise _ref_error(f"apparatus '{a['id']}' references bus '{bus}', which is not defined",
                             root, ["apparatus", k, "bus"])
        apparatus.append(ApparatusSpec(a["id"], a["type"], bus, a.get("params") or {}))
    try:
        case = Case(network, apparatus, doc["name"], base_f)
        for a in apparatus:
            a.make(case.omega_base)
    except (PortMapError, ValueError) as exc:
        raise ConfigError(str(exc), "apparatus", _line_of(root, ["apparatus"])) from exc

    def check_path(param, where):
        try:
            case.get_param(param)
        except (PortMapError, AttributeError) as exc:
            raise _ref_error(f"{_fmt_path(where)} refers to parameter '{param}', which does not "
                             f"resolve ({exc})", root, where) from exc

    sweeps = {}
    for key, s in (doc.get("sweeps") or {}).items():
        check_path(s["parameter"], ["sweeps", key, "parameter"])
        spec = SweepSpec(s["parameter"], float(s["start"]), float(s["stop"]), int(s["n"]),
                         s.get("spacing", "lin"))
        if spec.n > 1 and spec.start == spec.stop:
            raise _ref_error("sweep grid must be strictly monotone", root, ["sweeps", key])
        sweeps[key] = spec

    known_prefixes = {a.id for a in apparatus} | set(bus_ids)
    state_prefix_ok = known_prefixes | {"net"}
    scenarios = {}
    for key, s in (doc.get("scenarios") or {}).items():
        events = []
        for j, e in enumerate(s.get("events", [])):
            check_path(e["parameter"], ["scenarios", key, "events", j, "parameter"])
            events.append((float(e["time"]), e["parameter"], float(e["value"])))
        times = [e[0] for e in events]
        if times != sorted(times):
            raise _ref_error("events must be time-sorted", root, ["scenarios", key, "events"])
        for j, probe in enumerate(s.get("probes", [])):
            if probe.partition(".")[0] not in known_prefixes:
                raise _ref_error(f"probe '{probe}' does not name a bus or apparatus", root,
                                 ["scenarios", key, "probes", j])
        pert = []
        for j, p in enumerate(s.get("perturbation", [])):
            if p["target"].partition(".")[0] not in state_prefix_ok:
                raise _ref_error(f"perturbation target '{p['target']}' is unknown", root,
                                 ["scenarios", key, "perturbation", j, "target"])
            pert.append((p["target"], float(p["delta"])))
        scenarios[key] = SimScenario(float(s["end_time"]), float(s.get("step", 50e-6)),
                                     tuple(events), tuple(s.get("probes", [])), key, tuple(pert))

    analysis = dict(doc.get("analysis") or {})
    port = analysis.get("coefficient_port")
    if port is not None and port not in {a.id for a in apparatus}:
        raise _ref_error(f"analysis.coefficient_port references apparatus '{port}', which is not "
                         "defined", root, ["analysis", "coefficient_port"])
    return CaseConfig(doc["name"], base_f, case, sweeps, scenarios, analysis,
                      doc.get("output_dir", "out"), doc.get("description", ""), source)


def load_case(name_or_path) -> CaseConfig:
    """Parse a bundled case by name or a config file by path."""
    return parse_config(name_or_path)
