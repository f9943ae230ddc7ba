"""Temperature-only nudging for a 3D viscous planetary geostrophic ocean model."""

__version__ = "0.1.0"

from .field import DomainSpec, PhysParams  # noqa: E402
from .diagnostic import DiagnosticSolver, SolverSettings, solve_velocity  # noqa: E402
from .observe import InterpolantSpec, Interpolant, build_modal_basis, measure_c0  # noqa: E402
from .stepper import ForcingSpec, PGModel, StepperSettings  # noqa: E402
from .assimilate import (TwinConfig, fit_decay_rate, run_twin,  # noqa: E402
                         theorem_constants)

__all__ = [
    "DomainSpec", "PhysParams", "DiagnosticSolver", "SolverSettings", "solve_velocity",
    "InterpolantSpec", "Interpolant", "build_modal_basis", "measure_c0",
    "ForcingSpec", "PGModel", "StepperSettings",
    "TwinConfig", "fit_decay_rate", "run_twin", "theorem_constants",
]
