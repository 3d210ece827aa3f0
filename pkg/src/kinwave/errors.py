"""Exception types shared across the package."""

from __future__ import annotations

__all__ = ["ConfigError", "StabilityError", "FitError", "SamplingError"]


class ConfigError(ValueError):
    """A configuration or precondition violation detected before any work runs."""


class StabilityError(RuntimeError):
    """Time integration left the stable regime (blow-up, NaN, bad step size)."""


class FitError(RuntimeError):
    """A regression had too few usable points to produce an estimate."""


class SamplingError(RuntimeError):
    """A Monte Carlo sampler degenerated (e.g. vanishing acceptance rate)."""
