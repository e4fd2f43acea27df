"""Toolkit exception hierarchy.

``InputError`` covers malformed or inconsistent inputs (CLI exit code 1);
``ComputationError`` covers degenerate or failed computations on valid
inputs (CLI exit code 2).
"""

from __future__ import annotations


class SpiderevalError(Exception):
    """Base class for all toolkit errors."""

    def __init__(self, message: str, *, field: str | None = None):
        super().__init__(message)
        self.field = field


class InputError(SpiderevalError):
    """Invalid, malformed, or missing input data."""


class ComputationError(SpiderevalError):
    """A computation failed or is undefined for the given (valid) input."""
