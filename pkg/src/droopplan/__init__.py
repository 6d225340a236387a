"""Droop controller placement planning for radial distribution networks.

A planning toolkit that decides where to install voltage-droop
controllers on renewable generators: mixed-integer second-order-cone
optimization with an augmented conservative relaxation, plus an
independent nonlinear power-flow verifier.
"""

from .builder import ConicProgram, CostParams, PlanningSolution, build_program
from .bnb import enumerate_placements, solve_misocp
from .droop import DroopCurve, InverterSpec, LinearDroopParams, linearize, make_control
from .network import Bus, Line, RadialNetwork, build_network, load_network, sweep_order
from .profiles import ProfileSet, load_profiles
from .scenarios import Scenario, ScenarioSet, kmeans, reduce_scenarios
from .socp import ConeProblem, SolveResult, check_residuals, solve
from .verifier import (
    OperatingPoint,
    VerificationReport,
    solve_droop_fixed_point,
    sweep_power_flow,
    verify_limits,
)

__version__ = "0.1.0"
__all__ = [
    "Bus",
    "ConeProblem",
    "ConicProgram",
    "CostParams",
    "DroopCurve",
    "InverterSpec",
    "Line",
    "LinearDroopParams",
    "OperatingPoint",
    "PlanningSolution",
    "ProfileSet",
    "RadialNetwork",
    "Scenario",
    "ScenarioSet",
    "SolveResult",
    "VerificationReport",
    "build_network",
    "build_program",
    "check_residuals",
    "enumerate_placements",
    "kmeans",
    "linearize",
    "load_network",
    "load_profiles",
    "make_control",
    "reduce_scenarios",
    "solve",
    "solve_droop_fixed_point",
    "solve_misocp",
    "sweep_order",
    "sweep_power_flow",
    "verify_limits",
]
