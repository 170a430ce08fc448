"""Bouncy particle samplers (BPS, generalized BPS, subsampled GBPS) and their diagnostics."""
from .core import (
    ContractViolation,
    DegenerateGradient,
    PhaseState,
    Skeleton,
    decompose,
    event_rate,
    gbps_kernel,
    reflect,
)
from .samplers import MHConfig, RunConfig, run, run_bps, run_gbps, run_gbps_subsampled, run_mh
from .targets import GaussianMixture2D, IsotropicGaussian, LogisticModel

__all__ = [
    "ContractViolation", "DegenerateGradient", "PhaseState", "Skeleton", "decompose",
    "event_rate", "gbps_kernel", "reflect", "MHConfig", "RunConfig", "run", "run_bps",
    "run_gbps", "run_gbps_subsampled", "run_mh", "GaussianMixture2D", "IsotropicGaussian",
    "LogisticModel",
]
__version__ = "0.1.0"
