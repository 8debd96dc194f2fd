"""Exception types. The CLI maps each family to its own exit code."""


class FemcamError(Exception):
    """Base class for all package errors."""


class InputError(FemcamError, ValueError):
    """Bad file, malformed header, or argument outside its valid range."""


class MeshError(InputError):
    """Mesh violates a structural precondition (e.g. not watertight)."""


class NumericalError(FemcamError, ArithmeticError):
    """A numerical procedure failed (divergence, singular system)."""
