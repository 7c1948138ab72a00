from __future__ import annotations

from typing import Optional, Text


class EbscException(Exception):
    """Base exception for all errors raised by the package.

    Attributes:
        message: Human readable description of the problem.
        exit_code: Process exit code used by the command line front end.
    """

    exit_code: int = 3

    def __init__(self, message: Text, exit_code: Optional[int] = None) -> None:
        super().__init__(message)
        self.message = message
        if exit_code is not None:
            self.exit_code = exit_code

    def __str__(self) -> Text:
        return self.message


class DataValidationError(EbscException, ValueError):
    """Observations violate a precondition (non-finite values, too short, ...)."""


class DataParseError(EbscException):
    """Input file could not be parsed."""

    exit_code = 2


class BasisConstructionError(EbscException):
    """The Demmler-Reinsch basis cannot be built for the requested (n, q)."""


class NotPositiveDefiniteError(EbscException):
    """A correlation or scale matrix is not positive (semi-)definite."""


class SpectralConstructionError(EbscException):
    """Too many non-positive spectral values before truncation."""


class QuadratureError(EbscException):
    """Adaptive quadrature failed to converge."""


class ScenarioError(EbscException):
    """Invalid noise or simulation scenario specification."""

    exit_code = 2


class ArtifactError(EbscException):
    """A previously written artifact is malformed."""

    exit_code = 2
