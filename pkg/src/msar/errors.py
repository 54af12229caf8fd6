"""Error types shared across the package.

Three failure categories are distinguished so that callers (and the CLI)
can map them to stable machine-readable codes:

* ``StructuralError`` -- malformed input: wrong lengths, empty series,
  impossible lag requests.
* ``DomainError`` -- structurally valid input outside the admissible
  parameter region (invalid probabilities, unstable spectral radius,
  degenerate series).
* ``NumericalError`` -- the computation itself broke down: singular
  linear systems, non-finite values produced mid-recursion.
"""

from __future__ import annotations


class MsarError(Exception):
    """Base class for all package errors."""

    code = "error"

    def __init__(self, message: str, context: dict | None = None):
        super().__init__(message)
        self.context = context or {}


class StructuralError(MsarError):
    """Input has the wrong shape, length or is empty."""

    code = "structural_error"


class DomainError(MsarError):
    """Input values lie outside the admissible domain."""

    code = "domain_error"


class NumericalError(MsarError):
    """A numerical computation failed (singularity, overflow, non-finite)."""

    code = "numerical_error"
