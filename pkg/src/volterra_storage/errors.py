"""Exception hierarchy.

Numerical failures derive from :class:`SolverError`; bad inputs and
configuration problems derive from :class:`ValueError` so callers can
separate the two (the CLI maps them to different exit codes).
"""

from __future__ import annotations


class SolverError(RuntimeError):
    """A numerical routine could not produce a result."""


class SingularKernelError(SolverError):
    def __init__(self, node: int, value: float, threshold: float):
        super().__init__(
            f"diagonal kernel value {value:.3e} at node {node} is below "
            f"the singularity threshold {threshold:.3e}"
        )
        self.node = node
        self.value = value
        self.threshold = threshold


class NonConvergenceError(SolverError):
    """Raised by the nonlinear node solver; ``partial`` holds the nodes solved so far."""

    def __init__(self, node: int, iterations: int, partial):
        super().__init__(f"node {node}: no convergence after {iterations} iterations")
        self.node = node
        self.iterations = iterations
        self.partial = partial


class KernelEvaluationError(SolverError):
    def __init__(self, t: float, tau: float):
        super().__init__(f"non-finite kernel value at t={t!r}, tau={tau!r}")
        self.t = t
        self.tau = tau


class BracketError(SolverError):
    def __init__(self, alpha_lo: float, alpha_hi: float, res_lo: float, res_hi: float, target: float):
        super().__init__(
            f"discrepancy target {target:.3e} not bracketed: residual({alpha_lo:.3e})={res_lo:.3e}, "
            f"residual({alpha_hi:.3e})={res_hi:.3e}"
        )
        self.alpha_lo = alpha_lo
        self.alpha_hi = alpha_hi
        self.res_lo = res_lo
        self.res_hi = res_hi
        self.target = target


class GridMismatchError(ValueError):
    pass


class UnitMismatchError(ValueError):
    pass


class HypothesisViolation(ValueError):
    pass


class ConfigurationError(ValueError):
    pass


class ConstraintError(ValueError):
    pass


class IngestError(ValueError):
    pass
