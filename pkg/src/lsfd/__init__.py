"""Uplink Massive MIMO with two-layer decoding: local combining followed by
large-scale fading decoding (LSFD), with joint power/LSFD optimization."""

from ._backend import BACKEND
from .scenario import NetworkConfig, Scenario, generate_scenario
from .spectral_efficiency import (
    ClosedFormCoefficients,
    ExpectationSet,
    SeReport,
    closed_form_coefficients,
    estimate_expectations,
)

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "NetworkConfig",
    "Scenario",
    "generate_scenario",
    "ClosedFormCoefficients",
    "ExpectationSet",
    "SeReport",
    "closed_form_coefficients",
    "estimate_expectations",
]
