"""From a case description to operating points and whole-system models.

A :class:`Case` is a network plus apparatus placed on buses. Building it
solves the power flow, calibrates each apparatus to its bus injection,
linearizes, maps every port matrix to the global frame and closes the
stack against the Kron-reduced nodal impedance of the network.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np

from .apparatus import (
    GridFollowingInverter,
    IBRParams,
    SGParams,
    SynchronousGenerator,
    isolated_rotor,
    linearize,
)
from .errors import NetworkError, PortMapError
from .lti import StateSpaceModel, append
from .network import (
    Network,
    build_nodal_admittance,
    nodal_impedance,
    solve_power_flow,
)
from .portmapping import WholeSystemModel, assemble_system, map_to_global

PARAM_CLASSES = {"sg": SGParams, "ibr": IBRParams}


@dataclass(frozen=True)
class ApparatusSpec:
    id: str
    kind: str
    bus: str | None
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in PARAM_CLASSES:
            raise PortMapError(f"apparatus {self.id}: unknown kind {self.kind!r}")
        if self.bus is None and self.kind != "sg":
            raise PortMapError(f"apparatus {self.id}: only an SG rotor may be left unconnected")
        object.__setattr__(self, "params", dict(self.params))

    def make(self, omega_base: float):
        params = PARAM_CLASSES[self.kind](**{**self.params, "omega_base": omega_base})
        cls = SynchronousGenerator if self.kind == "sg" else GridFollowingInverter
        return cls(params, self.id)


@dataclass(frozen=True)
class Case:
    network: Network
    apparatus: tuple
    name: str = "case"
    base_frequency: float = 60.0

    def __post_init__(self):
        object.__setattr__(self, "apparatus", tuple(self.apparatus))
        ids = [a.id for a in self.apparatus]
        if len(set(ids)) != len(ids):
            raise PortMapError("duplicate apparatus ids")
        buses = [a.bus for a in self.connected]
        if len(set(buses)) != len(buses):
            raise NetworkError("at most one apparatus per bus is supported")
        known = set(self.network.bus_ids)
        for a in self.connected:
            if a.bus not in known:
                raise NetworkError(f"apparatus {a.id} references unknown bus {a.bus!r}")
            if self.network.bus(a.bus).infinite:
                raise NetworkError(f"apparatus {a.id} sits on infinite bus {a.bus!r}")

    @property
    def omega_base(self):
        return 2 * math.pi * self.base_frequency

    @property
    def connected(self) -> tuple:
        """Apparatus attached to a bus."""
        return tuple(a for a in self.apparatus if a.bus is not None)

    @property
    def rotors(self) -> tuple:
        """SGs without a bus: bare rotors with only their mechanical port."""
        return tuple(a for a in self.apparatus if a.bus is None)

    def apparatus_spec(self, aid) -> ApparatusSpec:
        for a in self.apparatus:
            if a.id == aid:
                return a
        raise PortMapError(f"unknown apparatus {aid!r}")

    def with_param(self, path: str, value) -> "Case":
        """Copy with ``apparatus.<id>.<field>``, ``branch.<name>.<field>`` or
        ``bus.<id>.<field>`` replaced. ``apparatus.*.<field>`` sets the
        field on every apparatus that has it."""
        kind, _, rest = path.partition(".")
        name, _, fld = rest.rpartition(".")
        if not name or not fld:
            raise PortMapError(f"malformed parameter path {path!r}")
        if kind == "apparatus" and name == "*":
            targets = [a.id for a in self.apparatus if fld in PARAM_CLASSES[a.kind].__dataclass_fields__]
            if not targets or fld == "omega_base":
                raise PortMapError(f"no apparatus has parameter {fld!r}")
            case = self
            for aid in targets:
                case = case.with_param(f"apparatus.{aid}.{fld}", value)
            return case
        if kind == "apparatus":
            spec = self.apparatus_spec(name)
            cls = PARAM_CLASSES[spec.kind]
            if fld not in cls.__dataclass_fields__ or fld == "omega_base":
                raise PortMapError(f"{spec.kind} has no parameter {fld!r}")
            new = replace(spec, params={**spec.params, fld: value})
            return replace(self, apparatus=tuple(new if a.id == name else a for a in self.apparatus))
        if kind in ("branch", "branches"):
            br = self.network.branch(name)
            if fld not in br.__dataclass_fields__:
                raise PortMapError(f"branch has no field {fld!r}")
            return replace(self, network=self.network.with_branch(name, **{fld: value}))
        if kind in ("bus", "buses"):
            b = self.network.bus(name)
            if fld not in b.__dataclass_fields__:
                raise PortMapError(f"bus has no field {fld!r}")
            return replace(self, network=self.network.with_bus(name, **{fld: value}))
        raise PortMapError(f"unsupported parameter path {path!r}")

    def get_param(self, path: str):
        kind, _, rest = path.partition(".")
        name, _, fld = rest.rpartition(".")
        if kind == "apparatus" and name == "*":
            vals = [self.get_param(f"apparatus.{a.id}.{fld}") for a in self.apparatus
                    if fld in PARAM_CLASSES[a.kind].__dataclass_fields__]
            if not vals or fld == "omega_base":
                raise PortMapError(f"no apparatus has parameter {fld!r}")
            return vals[0]
        if kind == "apparatus":
            spec = self.apparatus_spec(name)
            return getattr(spec.make(self.omega_base).params, fld)
        if kind in ("branch", "branches"):
            return getattr(self.network.branch(name), fld)
        if kind in ("bus", "buses"):
            return getattr(self.network.bus(name), fld)
        raise PortMapError(f"unsupported parameter path {path!r}")

    def build(self) -> "BuiltCase":
        return BuiltCase(self)


class BuiltCase:
    """Lazily evaluated analysis products of a case."""

    def __init__(self, case: Case):
        self.case = case
        self.network = replace(case.network, omega_base=case.omega_base)

    @cached_property
    def power_flow(self):
        return solve_power_flow(self.network)

    @cached_property
    def _calibrated(self):
        pf = self.power_flow
        apps, ops = {}, {}
        for spec in self.case.connected:
            bus = self.network.bus(spec.bus)
            V = pf.voltage(spec.bus)
            S = pf.injection(spec.bus) + complex(bus.P_load, bus.Q_load)
            app = spec.make(self.case.omega_base)
            app, op = app.steady_state(S.real, S.imag, abs(V), float(np.angle(V)))
            apps[spec.id], ops[spec.id] = app, op
        return apps, ops

    @property
    def apparatus(self) -> dict:
        return self._calibrated[0]

    @property
    def operating_points(self) -> dict:
        return self._calibrated[1]

    @property
    def bus_of(self) -> dict:
        return {a.id: a.bus for a in self.case.connected}

    @cached_property
    def local_models(self) -> dict:
        return {aid: linearize(app, self.operating_points[aid]) for aid, app in self.apparatus.items()}

    @cached_property
    def global_models(self) -> dict:
        return {aid: map_to_global(loc) for aid, loc in self.local_models.items()}

    @cached_property
    def nodal_admittance(self):
        return build_nodal_admittance(self.network, self.power_flow)

    @cached_property
    def nodal_impedance(self):
        retained = [a.bus for a in self.case.connected]
        return nodal_impedance(self.nodal_admittance, retained)

    @cached_property
    def whole_system(self) -> WholeSystemModel:
        return assemble_system(
            [self.global_models[a.id] for a in self.case.connected],
            self.nodal_impedance.model,
            self.bus_of,
        )

    @cached_property
    def composite(self):
        from .simulate import CompositeSystem

        apps = [self.apparatus[a.id] for a in self.case.connected]
        return CompositeSystem(self.network, self.power_flow, apps, self.bus_of,
                               self.operating_points)

    def monolithic(self) -> StateSpaceModel:
        from .simulate import monolithic_linearization

        return monolithic_linearization(self.composite)

    @cached_property
    def analysis_model(self) -> StateSpaceModel:
        """Whole-system model with any unconnected rotors appended."""
        parts = [self.whole_system.model] if self.case.connected else []
        for spec in self.case.rotors:
            parts.append(isolated_rotor(spec.make(self.case.omega_base).params, spec.id))
        return append(*parts)

    def inertia(self, aid: str) -> float:
        """``J`` of an SG or ``C_dc`` of an IBR."""
        params = self.case.apparatus_spec(aid).make(self.case.omega_base).params
        return params.J if isinstance(params, SGParams) else params.C_dc

    def poles(self) -> np.ndarray:
        return self.analysis_model.poles
