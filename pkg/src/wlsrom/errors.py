"""Exception hierarchy shared by all solver modules."""


class WlsError(Exception):
    """Base class for errors raised by wlsrom."""


class ContractViolation(WlsError, ValueError):
    """Input does not satisfy a precondition (shape, sign, ordering)."""


class ConfigError(ContractViolation):
    """Invalid run configuration."""


class NumericalFailure(WlsError, ArithmeticError):
    """Non-finite values or a numerical kernel that did not converge."""


class PhysicalStateError(NumericalFailure):
    """A state with non-positive density or pressure was encountered."""

    def __init__(self, message, cell=None):
        super().__init__(message)
        self.cell = cell


class SingularSystemError(NumericalFailure):
    """Normal matrix is singular or numerically rank deficient."""


class NonConvergenceError(NumericalFailure):
    """An iterative solver exhausted its iteration budget."""

    def __init__(self, message, trace=None, gradient_norm=None):
        super().__init__(message)
        self.trace = list(trace) if trace is not None else []
        self.gradient_norm = gradient_norm


class StepFailure(NonConvergenceError):
    """A single time step (Newton or Gauss-Newton) failed."""

    def __init__(self, message, step=None, residual_norm=None, trace=None):
        super().__init__(message, trace=trace, gradient_norm=residual_norm)
        self.step = step
        self.residual_norm = residual_norm
