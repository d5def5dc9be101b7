"""Typed errors shared across the toolkit."""


class InputError(ValueError):
    """Bad argument: unknown letter, parameter out of range, malformed file."""


class ResourceCapError(RuntimeError):
    """A configured size cap (sphere index, support size, matrix dim) was exceeded."""


class PrecisionError(ValueError):
    """A boundary quantity was requested at a depth that cannot resolve it."""


class DivergenceError(ArithmeticError):
    """A series needed as a finite number diverges at the requested parameters."""


class DegenerateInputError(ValueError):
    """The input leaves nothing to measure (empty shadow, all cells below mass floor)."""


class OracleValidationError(InputError):
    """A table oracle failed one of its prechecks."""
