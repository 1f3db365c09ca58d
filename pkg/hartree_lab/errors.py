from typing import Optional, Tuple


class HartreeLabError(Exception):
    """Base class for every error raised by the lab."""


class SizingError(HartreeLabError):
    """Raised when a grid cannot be built from the requested sizes."""
    def __init__(self, message, half_width=None, points_per_dim=None):
        super().__init__(message)
        self.half_width = half_width
        self.points_per_dim = points_per_dim


class DegenerateFieldError(HartreeLabError):
    """Raised when an operation needs a nonzero field and gets (numerically) zero."""
    def __init__(self, message, mass: Optional[float] = None):
        super().__init__(message)
        self.mass = mass


class CollapseError(HartreeLabError):
    """Raised when the constrained flow runs away instead of converging.

    Carries the family and constraint mass so that callers can report the
    suspected supercritical mass.
    """
    def __init__(self, message, family: str, mass: float, iteration: int, reason: str):
        super().__init__(message)
        self.family = family
        self.mass = mass
        self.iteration = iteration
        self.reason = reason


class WindowError(HartreeLabError):
    """Raised when a decay-fit window is invalid or holds nonpositive profile values."""
    def __init__(self, message, window: Optional[Tuple[float, float]] = None):
        super().__init__(message)
        self.window = window


class DegenerateDifferenceError(HartreeLabError):
    """Raised when two states are identical to round-off and have no difference mode."""
    def __init__(self, message, sup_distance: float):
        super().__init__(message)
        self.sup_distance = sup_distance


class QuadratureError(HartreeLabError):
    """Raised when the Green's-function quadrature misses its error target."""
    def __init__(self, message, radius: float, abserr: float):
        super().__init__(message)
        self.radius = radius
        self.abserr = abserr


class ConfigError(HartreeLabError):
    """Raised for invalid run configurations (bad keys, values or environment)."""


class StateFileError(HartreeLabError):
    """Raised when a snapshot or its sidecar is missing or unreadable."""
    def __init__(self, message, path: str):
        super().__init__(message)
        self.path = path
