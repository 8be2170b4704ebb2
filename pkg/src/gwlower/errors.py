"""Exception hierarchy shared by every module."""

from __future__ import annotations


class GWError(Exception):
    """Base class for all library errors."""


class SpecStructureError(GWError, ValueError):
    """Malformed offspring law (negative probability, zero-vector atom, bad shape)."""


class ValidationFailed(GWError):
    """A process spec failed one of the fail-closed model checks."""

    def __init__(self, report):
        self.report = report
        failed = ", ".join(f.name for f in report.findings if not f.passed)
        super().__init__(f"spec validation failed: {failed}")


class DomainError(GWError, ValueError):
    pass


class IndexRangeError(GWError, IndexError):
    pass


class NumericError(GWError, ArithmeticError):
    def __init__(self, message: str, residual: float | None = None):
        self.residual = residual
        if residual is not None:
            message = f"{message} (residual={residual:.3e})"
        super().__init__(message)


class ModelError(GWError):
    pass


class RegimeError(GWError):
    pass


class TruncationError(GWError):
    def __init__(self, message: str, escaped_mass: float, dist=None):
        self.escaped_mass = escaped_mass
        self.dist = dist
        super().__init__(f"{message} (escaped mass {float(escaped_mass):.3e})")


class DegenerateOutputError(GWError):
    pass


class ResourceError(GWError):
    def __init__(self, message: str, reached: int | None = None):
        self.reached = reached
        super().__init__(message)


class ConvergenceError(GWError):
    def __init__(self, message: str, gap: float | None = None, curves=None):
        self.gap = gap
        self.curves = curves
        super().__init__(message)


class InfeasibleError(GWError):
    pass


class UnavailableError(GWError):
    pass
