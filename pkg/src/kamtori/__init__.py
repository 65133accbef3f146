"""KAM tori of symplectic integrators: generating-function maps, the KAM iteration,
Diophantine sieves and drift checks against the exact flow."""

__version__ = "0.1.0"

from .errors import (AliasError, DegenerateError, DomainError, FitError, InconsistentGradient,
                     KamError, NonConvergence, ParamError, ScheduleBlowup, SkippedNotAdmissible,
                     SmallDivisorViolation, ZeroWavevector)
from .models import HamiltonianModel, builtin_models, eval_perturbation, frequency, get_model

__all__ = [
    "__version__",
    "AliasError", "DegenerateError", "DomainError", "FitError", "InconsistentGradient", "KamError",
    "NonConvergence", "ParamError", "ScheduleBlowup", "SkippedNotAdmissible", "SmallDivisorViolation",
    "ZeroWavevector", "HamiltonianModel", "builtin_models", "eval_perturbation", "frequency", "get_model",
]
