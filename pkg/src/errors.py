"""
Exception hierarchy for capsym.

Every numerical module raises a subclass of :class:`CapsymError`; the CLI maps
these to exit code 2. Errors with extra fields define ``__reduce__`` so they
cross the worker pool intact.
"""

from typing import Optional


class CapsymError(Exception):
    """Base class for all capsym errors."""


class GaugeError(CapsymError):
    """Invalid gauge parameters or evaluation outside the gauge's domain."""


class DomainError(CapsymError):
    """Invalid domain, grid, set or field."""


class DriftTooLargeError(DomainError):
    """The drift field violates sup|grad h| < 1."""

    def __init__(self, sup_grad: float):
        self.sup_grad = sup_grad
        super().__init__(f"sup|grad h| = {sup_grad:.6g} must be < 1 for a positive gauge")

    def __reduce__(self):
        return type(self), (self.sup_grad,)


class FluxCompatibilityError(CapsymError):
    """All-Neumann data whose total flux does not vanish."""

    def __init__(self, defect: float):
        self.defect = defect
        super().__init__(f"incompatible Neumann data: total flux defect {defect:.6g}")

    def __reduce__(self):
        return type(self), (self.defect,)


class SolverError(CapsymError):
    """An iterative solver did not converge."""

    def __init__(self, message: str, iterations: int = 0, residual: Optional[float] = None):
        self.message = message
        self.iterations = iterations
        self.residual = residual
        detail = f" after {iterations} iterations"
        if residual is not None:
            detail += f" (residual {residual:.3e})"
        super().__init__(message + detail)

    def __reduce__(self):
        return type(self), (self.message, self.iterations, self.residual)


class ResolutionError(CapsymError):
    """The grid cannot resolve the requested concentration scale."""

    def __init__(self, k: int, limit: float):
        self.k = k
        self.limit = limit
        super().__init__(
            f"resolution error: k={k} exceeds the grid limit {limit:.6g}; refine the grid"
        )

    def __reduce__(self):
        return type(self), (self.k, self.limit)


class MoserEnergyError(CapsymError):
    """The Moser functional was given a field with energy above 1."""

    def __init__(self, excess: float):
        self.excess = excess
        super().__init__(f"energy constraint violated: integral exceeds 1 by {excess:.3e}")

    def __reduce__(self):
        return type(self), (self.excess,)


class ConfigError(CapsymError):
    """Configuration parse or validation failure."""

    def __init__(self, message: str, line: Optional[int] = None, key: Optional[str] = None):
        self.message = message
        self.line = line
        self.key = key
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(prefix + message)

    def __reduce__(self):
        return type(self), (self.message, self.line, self.key)
