"""Pathwise stability of Young differential equations driven by fractional Brownian motion."""

from __future__ import annotations

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    ConfigurationError,
    DomainError,
    HoelderflowError,
    HypothesisError,
    RegularityError,
    StabilityError,
    ValidationError,
)
from .paths import FbmConfig, SampledPath, fbm_sample, wiener_shift  # noqa: E402

__all__ = [
    "__version__",
    "ConfigurationError",
    "DomainError",
    "HoelderflowError",
    "HypothesisError",
    "RegularityError",
    "StabilityError",
    "ValidationError",
    "FbmConfig",
    "SampledPath",
    "fbm_sample",
    "wiener_shift",
]
