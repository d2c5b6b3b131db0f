"""Gauss-Newton with a backtracking line search on ``||r(x)||^2``."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractViolation, NonConvergenceError, NumericalFailure, StepFailure
from .linalg import BlockLowerBanded, solve_normal_equations

# relative slack that lets the line search accept steps lost in rounding
_ROUNDING = 64 * np.finfo(float).eps


@dataclass(frozen=True)
class GaussNewtonConfig:
    tol: float = 1e-4
    max_iters: int = 50
    max_halvings: int = 20

    def __post_init__(self):
        if not self.tol > 0 or self.max_iters < 1 or self.max_halvings < 0:
            raise ContractViolation("invalid Gauss-Newton configuration")


@dataclass
class GaussNewtonResult:
    x: np.ndarray
    objective: float
    iterations: int
    gradient_norm: float
    converged: bool
    alphas: list = field(default_factory=list)
    trace: list = field(default_factory=list)


def _gradient(J, r):
    return J.rmatvec(r) if isinstance(J, BlockLowerBanded) else J.T @ r


def gauss_newton(residual, jacobian, x0, config=None):
    """Minimize ``r(x)^T r(x)``; stops when ``||J^T r|| <= config.tol``.

    ``iterations`` counts accepted updates.  Raises NonConvergenceError when
    the iteration budget runs out and StepFailure when the line search
    cannot find a non-increasing step.
    """
    config = config or GaussNewtonConfig()
    x = np.array(x0, dtype=float)
    r = residual(x)
    obj = float(r @ r)
    alphas, trace = [], []
    for it in range(config.max_iters + 1):
        J = jacobian(x)
        gnorm = float(np.linalg.norm(_gradient(J, r)))
        trace.append((it, obj, gnorm))
        if gnorm <= config.tol:
            return GaussNewtonResult(x, obj, it, gnorm, True, alphas, trace)
        if it == config.max_iters:
            break
        delta = solve_normal_equations(J, r)
        alpha = 1.0
        for _ in range(config.max_halvings + 1):
            trial = x + alpha * delta
            try:
                rt = residual(trial)
                ot = float(rt @ rt)
            except NumericalFailure:
                ot = np.inf
            if ot <= obj + _ROUNDING * obj:
                break
            alpha *= 0.5
        else:
            raise StepFailure(f"line search failed after {config.max_halvings} halvings",
                              residual_norm=gnorm, trace=trace)
        x, r, obj = trial, rt, ot
        alphas.append(alpha)
    raise NonConvergenceError(
        f"Gauss-Newton did not reach tol {config.tol:g} in {config.max_iters} iterations "
        f"(gradient norm {gnorm:.3e})", trace=trace, gradient_norm=gnorm)
