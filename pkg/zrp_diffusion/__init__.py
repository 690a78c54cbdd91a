"""Condensing zero-range process and the absorbed diffusion on the simplex it converges to."""
from .chain import ChainModel, RateMatrix, build_chain, random_chain
from .diffusion import (DiffusionControls, FaceCache, absorption_bound, face_dynamics,
                        simulate_diffusion, simulate_diffusion_ensemble)
from .errors import ContractViolation, NumericalError, ValidationError, ZrpDiffusionError
from .harness import ComparisonReport, compare_laws
from .superharmonic import SupharmSpec, find_lambda, verify_supharmonic
from .trace import TraceModel, trace_rates
from .zrp import default_rates, initial_configuration, simulate_zrp, simulate_zrp_ensemble

__version__ = "0.1.0"

__all__ = [
    "ChainModel",
    "ComparisonReport",
    "ContractViolation",
    "DiffusionControls",
    "FaceCache",
    "NumericalError",
    "RateMatrix",
    "SupharmSpec",
    "TraceModel",
    "ValidationError",
    "ZrpDiffusionError",
    "absorption_bound",
    "build_chain",
    "compare_laws",
    "default_rates",
    "face_dynamics",
    "find_lambda",
    "initial_configuration",
    "random_chain",
    "simulate_diffusion",
    "simulate_diffusion_ensemble",
    "simulate_zrp",
    "simulate_zrp_ensemble",
    "trace_rates",
    "verify_supharmonic",
]
