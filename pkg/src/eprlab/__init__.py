"""Simulation laboratory for EPRB polarization-correlation experiments."""
from .core import (
    ChshResult,
    CountsQuad,
    Estimate,
    OrientationSet,
    SingleChannelRates,
    SPrimeResult,
    chsh_s,
    correlation_from_counts,
    s_prime_from_rates,
    significance,
)
from .qm import ApparatusModel, PolarizerSpec, chsh_qm, correlation_qm, find_extrema, s_prime_qm

__all__ = [
    "ApparatusModel", "ChshResult", "CountsQuad", "Estimate", "OrientationSet", "PolarizerSpec",
    "SPrimeResult", "SingleChannelRates", "chsh_qm", "chsh_s", "correlation_from_counts",
    "correlation_qm", "find_extrema", "s_prime_from_rates", "s_prime_qm", "significance",
]
__version__ = "0.1.0"
