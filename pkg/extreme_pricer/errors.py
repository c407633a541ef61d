"""Exception types shared by the calculators and the command line.

Every error carries the process exit code the CLI should return, so the
front end can map failures without inspecting messages.
"""

from __future__ import annotations

from typing import Any, Dict, Optional


class ExtremePricerError(Exception):
    """Base class for all errors raised by the package."""

    exit_code = 1


class ConfigError(ExtremePricerError):
    """Invalid configuration, missing input path or wrong usage of an API."""

    exit_code = 2


class ShapeError(ConfigError):
    """Site, margin or contract counts do not line up."""


class DataError(ExtremePricerError):
    """Malformed or unusable input data."""

    exit_code = 3

    def __init__(self, message: str, line: Optional[int] = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class DomainError(ExtremePricerError, ValueError):
    """Argument outside the mathematical domain of a function."""

    exit_code = 4


class NumericalError(ExtremePricerError):
    """A numerical routine broke down (factorization, singular matrix)."""

    exit_code = 4


class FitError(ExtremePricerError):
    """An estimation routine failed or did not converge.

    ``best`` holds the best parameter point the optimizer reached and
    ``diagnostics`` any extra information worth reporting.
    """

    exit_code = 4

    def __init__(
        self,
        message: str,
        best: Optional[Any] = None,
        diagnostics: Optional[Dict[str, Any]] = None,
    ):
        super().__init__(message)
        self.best = best
        self.diagnostics = dict(diagnostics or {})


class DegenerateShareError(ExtremePricerError):
    """Two contracts with zero expected loss make the covariance share undefined."""

    exit_code = 4


__all__ = [
    "ExtremePricerError",
    "ConfigError",
    "ShapeError",
    "DataError",
    "DomainError",
    "NumericalError",
    "FitError",
    "DegenerateShareError",
]
