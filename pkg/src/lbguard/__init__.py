"""Guarded load balancing for size-based scheduling across k servers."""
from .guardrail import GuardrailConfig, GuardrailState, ClassGuardrailState, rank_of, rank_width
from .policy import PolicySpec
from .server import Discipline, ServerQueue
from .simcore import SimConfig, RunStats, run_experiment, run_trial
from .sizedist import (Bimodal, BoundedPareto, Deterministic, Exponential,
                       Hyperexponential, from_config)

__all__ = [
    "GuardrailConfig", "GuardrailState", "ClassGuardrailState", "rank_of", "rank_width",
    "PolicySpec", "Discipline", "ServerQueue", "SimConfig", "RunStats", "run_experiment",
    "run_trial", "Bimodal", "BoundedPareto", "Deterministic", "Exponential",
    "Hyperexponential", "from_config",
]
