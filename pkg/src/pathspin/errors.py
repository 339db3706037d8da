"""Exception types shared across the package.

The CLI maps each class onto its own exit status, so keep the hierarchy flat.
"""


class ApparatusSyntaxError(ValueError):
    """Malformed apparatus text. Carries the 1-based line and column."""

    def __init__(self, message, line, column=1):
        super().__init__(f"line {line}, column {column}: {message}")
        self.line = line
        self.column = column


class ApparatusValidationError(ValueError):
    """Well-formed apparatus text that violates a physical invariant."""


class InvariantError(RuntimeError):
    """A numerical invariant failed (e.g. a correlation outside [-1, 1])."""
