"""Decoy-state BB84 over fiber: event simulation and finite-size key-rate analysis."""
from .analysis import (
    AnalysisResult,
    SecurityBounds,
    SecurityReport,
    analyze,
    binary_entropy,
    final_key,
    key_rate,
    qber_upper_bound,
    single_photon_fraction,
    single_photon_qber,
    solve_single_photon,
    vacuum_bounds,
)
from .channel import ChannelModel, calibrate_channel, class_probabilities, simulate_aggregate
from .params import (
    Basis,
    IntensityClass,
    Polarization,
    ProtocolParams,
    Tally,
    multi_photon_tail,
    poisson_pmf,
    validate_params,
)

__version__ = "0.1.0"

__all__ = [
    "AnalysisResult", "Basis", "ChannelModel", "IntensityClass", "Polarization", "ProtocolParams",
    "SecurityBounds", "SecurityReport", "Tally", "analyze", "binary_entropy", "calibrate_channel",
    "class_probabilities", "final_key", "key_rate", "multi_photon_tail", "poisson_pmf",
    "qber_upper_bound", "simulate_aggregate", "single_photon_fraction", "single_photon_qber",
    "solve_single_photon", "validate_params", "vacuum_bounds",
]
