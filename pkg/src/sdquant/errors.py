"""Exception types shared across the package."""

from __future__ import annotations


class FormatError(ValueError):
    """A container file is malformed (bad magic, truncation, bad payload)."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class NumericError(ArithmeticError):
    """A numerical step failed (factorization, infeasible allocation, ...)."""
