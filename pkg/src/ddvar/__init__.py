"""Space-time domain-decomposed 4D-Var on the shallow water equations.

Submodules
----------
spacetime     grids, subdomains, restriction and reconstruction
swe           shallow water model with tangent-linear and adjoint
covariance    background-error covariance factors
observations  observation sets and synthetic observation generation
assimilation  global and local 4D-Var cost functions
solver        Gauss-Newton with matrix-free conjugate gradients
orchestrator  the decomposed exchange loop and the undecomposed baseline
perfmodel     scalability and memory models
config        TOML configuration
cli           command-line entry point
"""

from .assimilation import AssimilationSetup, build_local_problem, global_problem
from .errors import (ConfigurationError, DdvarError, DimensionError, NumericalError,
                     ProtocolError, StepSizeError)
from .orchestrator import AnalysisReport, DdRunConfig, run_dd, run_global
from .solver import GnConfig, gauss_newton
from .spacetime import SpaceTimeGrid, build_decomposition, reconstruct, restrict
from .swe import SweParams, propagate

__version__ = "0.1.0"

__all__ = [
    "AnalysisReport", "AssimilationSetup", "ConfigurationError", "DdRunConfig", "DdvarError",
    "DimensionError", "GnConfig", "NumericalError", "ProtocolError", "SpaceTimeGrid",
    "StepSizeError", "SweParams", "build_decomposition", "build_local_problem",
    "gauss_newton", "global_problem", "propagate", "reconstruct", "restrict", "run_dd",
    "run_global",
]
