"""Calibrate generalised diffusions from perpetual optimal-stopping values."""

from .conventions import DEFAULT_TOLERANCES, Tolerances
from .diffusion import Atom, Eigenfunction, SpeedMeasure, eigen_from_density, eigen_from_string, speed_from_eigen
from .errors import StopcalError, ValidationError
from .forward import ForwardSolution, solve_forward
from .inverse import InverseReport, check_existence, diagnose_uniqueness, recover_measure, solve_inverse
from .payoffs import PayoffFamily, builtin
from .uconvex import GridFunction, u_dual

__all__ = [
    "Atom", "DEFAULT_TOLERANCES", "Eigenfunction", "ForwardSolution", "GridFunction", "InverseReport",
    "PayoffFamily", "SpeedMeasure", "StopcalError", "Tolerances", "ValidationError", "builtin",
    "check_existence", "diagnose_uniqueness", "eigen_from_density", "eigen_from_string", "recover_measure",
    "solve_forward", "solve_inverse", "speed_from_eigen", "u_dual",
]
__version__ = "0.1.0"
