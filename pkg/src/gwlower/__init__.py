"""Exact finite-horizon computations for supercritical multi-type Galton-Watson processes."""

from .errors import GWError
from .model import EXACT, FLOAT, ProcessSpec, classify_regime, spectral_data, validate_spec

__version__ = "0.1.0"

__all__ = ["EXACT", "FLOAT", "GWError", "ProcessSpec", "classify_regime", "spectral_data", "validate_spec"]
