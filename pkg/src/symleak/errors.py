"""Exception types shared across the package."""

from __future__ import annotations


class SymleakError(Exception):
    """Base class for all errors raised by this package."""


class ParseError(SymleakError):
    """Source program is syntactically or semantically malformed."""

    def __init__(self, message: str, line: int | None = None, col: int | None = None):
        self.line = line
        self.col = col
        if line is not None:
            message = f"line {line}: {message}" if col is None else f"line {line}, col {col}: {message}"
        super().__init__(message)


class UnrollError(SymleakError):
    """A loop cannot be unrolled within the configured bound."""


class AdversaryError(SymleakError):
    """Adversary synthesis was requested for an unsuitable program."""


class ReplayError(SymleakError):
    """A concrete schedule does not match the program's behaviour."""


class BruteForceCapError(SymleakError):
    """Exhaustive enumeration would exceed the configured cap."""


class ConstraintWindowError(SymleakError):
    """A symbolic trace is too long for the set-associative encoding window."""


class EnumerativeCapError(SymleakError):
    """A query's free variables span too many bits to enumerate."""


class SolverProcessError(SymleakError):
    """An external solver process failed or produced unusable output."""
