"""Port-mapping small-signal analysis of mixed SG/IBR power grids."""
from .apparatus import (
    GridFollowingInverter,
    IBRParams,
    OperatingPoint,
    SGParams,
    SynchronousGenerator,
    linearize,
    solve_steady_state,
)
from .analysis import (
    dc_current_coefficient,
    participation_screen,
    phase_margin_index,
    pole_sweep,
    torque_coefficient,
)
from .config import CaseConfig, load_case, parse_config
from .errors import PortMapError
from .lti import PortLabel, StateSpaceModel, close_feedback, eigenvalues, evaluate, select_ports
from .network import BranchSpec, BusSpec, Network, solve_power_flow
from .portmapping import assemble_system, close_grid, map_to_global
from .simulate import SimScenario, impedance_scan, simulate_linear, simulate_nonlinear
from .system import ApparatusSpec, Case

__all__ = [
    "ApparatusSpec",
    "BranchSpec",
    "BusSpec",
    "Case",
    "CaseConfig",
    "GridFollowingInverter",
    "IBRParams",
    "Network",
    "OperatingPoint",
    "PortLabel",
    "PortMapError",
    "SGParams",
    "SimScenario",
    "StateSpaceModel",
    "SynchronousGenerator",
    "assemble_system",
    "close_feedback",
    "close_grid",
    "dc_current_coefficient",
    "eigenvalues",
    "evaluate",
    "impedance_scan",
    "linearize",
    "load_case",
    "map_to_global",
    "parse_config",
    "participation_screen",
    "phase_margin_index",
    "pole_sweep",
    "select_ports",
    "simulate_linear",
    "simulate_nonlinear",
    "solve_power_flow",
    "solve_steady_state",
    "torque_coefficient",
]

__version__ = "0.1.0"
