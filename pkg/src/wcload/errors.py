"""Exception types shared across the package."""


class ValidationError(Exception):
    """Bad input: malformed file, broken mesh invariant, or invalid config."""


class ParseError(ValidationError):
    """File could not be parsed at all (format-level failure)."""


class SolverError(Exception):
    """Numerical failure inside the FEM solve or the design optimizer."""
