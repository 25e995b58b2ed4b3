"""
Error types shared by the counting services.

The command layer maps each of these to a process exit code.
"""


class ProblemParseError(ValueError):
    """Malformed problem text; carries the 1-based line and column."""

    def __init__(self, message: str, line: int = 0, column: int = 0):
        self.line = line
        self.column = column
        location = f"line {line}, column {column}: " if line else ""
        super().__init__(f"{location}{message}")


class FragmentError(ValueError):
    """Input is well-formed but outside the supported FO2/C2 fragment."""


class DecompositionError(ValueError):
    """A supplied tree decomposition does not fit the Gaifman graph."""


class OracleCapError(ValueError):
    """Ground enumeration would exceed the configured free-atom cap."""


class UnassignedAtomError(LookupError):
    """A ground atom needed for evaluation has no truth value."""


class InvariantError(RuntimeError):
    """An internal consistency check failed."""


class ZeroPartitionError(ValueError):
    """The normalizing count of a probability query is zero."""
