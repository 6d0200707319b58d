"""Exception types shared across the package."""


class TodaError(Exception):
    """Base class for all package errors."""


class NumericError(TodaError):
    """Non-finite data or overflow encountered in a numerical kernel."""


class GaugeViolationError(TodaError):
    """Input violates a gauge precondition (e.g. nonzero mean on the torus)."""


class SolverFailureError(TodaError):
    """A linear or nonlinear solve failed outright."""


class StagnationError(SolverFailureError):
    """Gradient flow step size underflowed; carries the best iterate."""

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


class LinearizationSingularError(SolverFailureError):
    """Newton linearization is (numerically) singular on the gauge slice."""


class DivergenceError(TodaError):
    """Radial ODE escaped to infinity in finite s; carries the escape point."""

    def __init__(self, message, escape_s=None):
        super().__init__(message)
        self.escape_s = escape_s


class FitUnstableError(TodaError):
    """Tail window too short/unresolved for an exponent fit."""


class InvalidFamilyError(TodaError):
    """Minimax bubble family violates the center-of-mass corridor."""


class HolonomyAccuracyError(TodaError):
    """Loop transport defects exceed tolerance; more steps needed."""


class ValidationError(TodaError):
    """Bad configuration or command-line input (CLI exit code 2)."""
