"""Baseline reduced-order models: Galerkin projection and LSPG."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg as sla

from .basis import SpatialBasis, WeightingMatrix
from .core_ode import OdeModel, Trajectory, march
from .errors import ContractViolation, NonConvergenceError, NumericalFailure, StepFailure
from .gauss_newton import GaussNewtonConfig, gauss_newton


class ReducedOperators:
    """Basis, weighting and the mass matrix ``M = V^T A V`` (Cholesky cached)."""

    def __init__(self, basis, weighting=None):
        self.basis = basis
        self.weighting = weighting or WeightingMatrix.identity(basis.N)
        if self.weighting.dim != basis.N:
            raise ContractViolation("weighting and basis dimensions differ")
        self.PsiV = np.asarray(self.weighting.apply(basis.V), dtype=float)
        self.M = self.PsiV.T @ self.PsiV
        try:
            self._chol = sla.cho_factor(self.M)
        except np.linalg.LinAlgError as exc:
            raise ContractViolation("mass matrix is not positive definite; "
                                    "sampling has too few rows for the basis") from exc

    @property
    def K(self):
        return self.basis.K

    @property
    def N(self):
        return self.basis.N

    @property
    def V(self):
        return self.basis.V

    @property
    def x_ref(self):
        return self.basis.x_ref

    def solve_mass(self, b):
        return sla.cho_solve(self._chol, b)

    def project(self, v):
        """``V^T A v``."""
        return self.PsiV.T @ self.weighting.apply(v)

    def complement(self, v):
        """``(I - V M^{-1} V^T A) v``."""
        return v - self.V @ self.solve_mass(self.project(v))

    def to_full(self, xhat):
        return self.basis.to_full(xhat)

    def initial_coords(self, x0):
        return self.basis.to_reduced(x0)


@dataclass
class RomRun:
    """Outcome of a reduced-model run.

    ``trajectory`` holds reduced coordinates for every completed instance;
    ``failure`` is the exception that stopped the run, if any.
    """

    trajectory: Trajectory
    ops: Optional[ReducedOperators] = None
    failure: Optional[Exception] = None
    diagnostics: list = field(default_factory=list)

    @property
    def completed(self):
        return self.failure is None

    def full_states(self):
        if self.ops is None:
            return self.trajectory.states
        return self.ops.to_full(self.trajectory.states)

    def full_trajectory(self):
        return Trajectory(self.trajectory.times, self.full_states())


def galerkin_rhs(ops, model, xhat, t=0.0):
    """``M^{-1} V^T A f(V xhat + x_ref, t)``."""
    return ops.solve_mass(ops.project(model.f(ops.to_full(xhat), t)))


def galerkin_model(ops, model):
    """The Galerkin ROM as an :class:`OdeModel` of dimension K."""

    def jac(xhat, t):
        y = ops.to_full(xhat)
        JV = model.jac_times(y, t, ops.V)
        return ops.solve_mass(ops.PsiV.T @ ops.weighting.apply(JV))

    return OdeModel(ops.K, lambda xhat, t: galerkin_rhs(ops, model, xhat, t),
                    jacobian=jac, autonomous=model.autonomous, name=f"galerkin-{model.name}")


def run_galerkin(ops, model, scheme, grid, x0, newton_tol=None, max_newton_iters=20):
    """Integrate the Galerkin ROM from the projection of ``x0``.

    A failing step ends the run; the completed part and the failure are returned.
    """
    grid = np.asarray(grid, dtype=float)
    red = galerkin_model(ops, model)
    states, failure = march(red, scheme, grid, ops.initial_coords(x0),
                            newton_tol=newton_tol, max_newton_iters=max_newton_iters)
    traj = Trajectory(grid[: len(states)], states)
    return RomRun(traj, ops, failure)


def lspg_step(ops, model, scheme, history, times, dt, gn_config=None, guess=None):
    """One LSPG step: minimize ``||Psi r(V xhat + x_ref)||^2`` over the new state.

    ``history`` lists the previous reduced states newest first
    (``xhat^{i-1}, xhat^{i-2}, ...``) and ``times`` the stamps
    ``t^i, t^{i-1}, ...``.  Multistep schemes without enough history fall back
    to forward Euler.  Returns ``(xhat^i, GaussNewtonResult)``.
    """
    sch = scheme.for_history(len(history))
    k = sch.k
    if len(times) < k + 1:
        raise ContractViolation("need a time stamp for every history state")
    t_new = times[0]
    prev = [ops.to_full(h) for h in history[:k]]
    c = np.zeros(ops.N)
    for j in range(1, k + 1):
        c += (sch.alphas[j] / dt) * prev[j - 1]
        if sch.betas[j] != 0.0:
            c -= sch.betas[j] * model.f(prev[j - 1], times[j])
    a0, b0 = sch.alphas[0], sch.betas[0]
    Psi = ops.weighting

    def residual(xhat):
        y = ops.to_full(xhat)
        r = (a0 / dt) * y + c
        if b0 != 0.0:
            r = r - b0 * model.f(y, t_new)
        return Psi.apply(r)

    def jacobian(xhat):
        if b0 == 0.0:
            return (a0 / dt) * ops.PsiV
        JV = model.jac_times(ops.to_full(xhat), t_new, ops.V)
        return (a0 / dt) * ops.PsiV - b0 * Psi.apply(JV)

    x0 = np.array(history[0] if guess is None else guess, dtype=float)
    try:
        res = gauss_newton(residual, jacobian, x0, gn_config)
    except NonConvergenceError as exc:
        raise StepFailure(f"LSPG step at t={t_new:g} failed: {exc}",
                          residual_norm=exc.gradient_norm, trace=exc.trace) from exc
    return res.x, res


def run_lspg(ops, model, scheme, grid, x0, gn_config=None):
    """Sequential LSPG over ``grid`` with warm-started Gauss-Newton."""
    grid = np.asarray(grid, dtype=float)
    states = [ops.initial_coords(x0)]
    diags = []
    failure = None
    for i in range(1, grid.size):
        k = scheme.k
        hist = states[::-1][:k]
        ts = grid[max(0, i - k): i + 1][::-1]
        try:
            x, res = lspg_step(ops, model, scheme, hist, ts, grid[i] - grid[i - 1], gn_config)
        except (StepFailure, NumericalFailure) as exc:
            if isinstance(exc, StepFailure) and exc.step is None:
                exc.step = i
            failure = exc
            break
        states.append(x)
        diags.append({"step": i, "iterations": res.iterations, "objective": res.objective,
                      "gradient_norm": res.gradient_norm, "converged": res.converged})
    traj = Trajectory(grid[: len(states)], np.array(states))
    return RomRun(traj, ops, failure, diags)
