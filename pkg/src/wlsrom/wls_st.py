"""Windowed least-squares with space-time trial subspaces.

On window n the state is ``x(t) = Pi(t) y + xbar_ref`` with constant
coordinates y (length K_ST) and Pi vanishing at the window start, so the
initial condition holds for any y.  Two algebraic objectives are offered:

* direct: the LMS-discretized window objective shared with the S-reduction
  direct method;
* indirect: quadrature of the time-continuous residual using the
  piecewise-linear time derivative of Pi.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .basis import WeightingMatrix
from .core_ode import CRANK_NICOLSON, Trajectory, _is_uniform
from .errors import ContractViolation, NumericalFailure, SingularSystemError
from .gauss_newton import GaussNewtonConfig, gauss_newton
from .rom_classic import RomRun
from .wls_s import theta_index


@dataclass(frozen=True)
class StConfig:
    method: str = "direct"             # or "indirect"
    scheme: object = CRANK_NICOLSON
    weighting: Optional[WeightingMatrix] = None
    gn_config: GaussNewtonConfig = field(default_factory=GaussNewtonConfig)
    quadrature: str = "midpoint"       # or "nodes" (left-interval slopes)

    def __post_init__(self):
        if self.method not in ("direct", "indirect"):
            raise ContractViolation(f"unknown space-time method {self.method!r}")
        if self.quadrature not in ("midpoint", "nodes"):
            raise ContractViolation(f"unknown quadrature {self.quadrature!r}")


def _weighting_rank(weighting, N):
    return N if weighting.rows is None else weighting.rows.size


class StWindowProblem:
    """One space-time window.

    ``samples`` are the Pi samples on the window sub-grid ``grid``;
    ``history`` lists earlier full states (newest first, excluding the
    window start) for multistep lookback.
    """

    def __init__(self, model, grid, samples, x_ref, weighting=None, scheme=CRANK_NICOLSON,
                 weights=None, quad_points=None, quad_weights=None, quadrature="midpoint",
                 history=(), history_times=(), n=1, start_index=0):
        self.model = model
        self.n = n
        self.grid = np.asarray(grid, dtype=float)
        self.samples = np.asarray(samples, dtype=float)
        self.dts = np.diff(self.grid)
        self.N_t = self.dts.size
        if self.samples.shape[0] != self.grid.size:
            raise ContractViolation("one Pi sample per sub-grid instance is required")
        if np.any(self.samples[0] != 0.0):
            raise ContractViolation("Pi must vanish at the window start")
        self.K = self.samples.shape[2]
        self.x_ref = np.asarray(x_ref, dtype=float)
        self.weighting = weighting or WeightingMatrix.identity(model.dim)
        self.scheme = scheme
        self.weights = self.dts.copy() if weights is None else np.asarray(weights, dtype=float)
        if scheme.k > 1 and not _is_uniform(self.dts):
            raise ContractViolation(f"{scheme.name} requires uniform steps")
        self.start_index = int(start_index)
        self.schemes = [scheme.for_history(self.start_index + i) for i in range(1, self.N_t + 1)]
        self.k = max(s.k for s in self.schemes)
        self.history = [self.x_ref] + [np.asarray(h, dtype=float) for h in history]
        self.history_times = [self.grid[0]] + list(history_times)
        need = min(self.k, self.start_index + 1)
        if len(self.history) < need:
            raise ContractViolation(f"window needs {need} history states")
        self.history = self.history[:need]
        self.history_vel = [model.f(h, t) for h, t in zip(self.history, self.history_times)]
        # quadrature for the indirect objective
        if quad_points is None:
            if quadrature == "midpoint":
                quad_points = 0.5 * (self.grid[1:] + self.grid[:-1])
            else:
                quad_points = self.grid[1:]
            quad_weights = self.dts.copy()
        self.quad_points = np.asarray(quad_points, dtype=float)
        self.quad_weights = np.asarray(quad_weights, dtype=float)
        if self.quad_points.shape != self.quad_weights.shape:
            raise ContractViolation("one quadrature weight per point is required")
        # interval index (left-interval slope at nodes) and interpolation weight
        idx = np.clip(np.searchsorted(self.grid, self.quad_points, side="left"), 1, self.N_t)
        self._q_idx = idx
        self._q_w = (self.quad_points - self.grid[idx - 1]) / self.dts[idx - 1]
        self.Pi_q = (1.0 - self._q_w)[:, None, None] * self.samples[idx - 1] + \
            self._q_w[:, None, None] * self.samples[idx]
        self.dPi_q = (self.samples[idx] - self.samples[idx - 1]) / self.dts[idx - 1][:, None, None]

    @classmethod
    def for_window(cls, model, st_basis, n, x_ref, config, global_states=(), partition=None):
        grid, samples = st_basis.window(n)
        hist, htimes = [], []
        start = 0
        if partition is not None:
            start = partition.offset(n)
            gg = partition.global_grid
            for j in range(1, config.scheme.k):
                if start - j < 0:
                    break
                w, idx = theta_index(n, -j, partition)
                g = partition.offset(w) + idx
                hist.append(global_states[g])
                htimes.append(gg[g])
        return cls(model, grid, samples, x_ref, config.weighting, config.scheme,
                   quadrature=config.quadrature, history=hist, history_times=htimes,
                   n=n, start_index=start)

    def states(self, coords):
        """Full states at tau^{n,0..N_t}."""
        return self.samples @ np.asarray(coords, dtype=float) + self.x_ref

    # -- direct (LMS) objective ---------------------------------------------
    def _state(self, Y, m):
        return Y[m] if m >= 0 else self.history[-m]

    def direct_residual(self, coords):
        Y = self.states(coords)
        F = [None] + [self.model.f(Y[i], self.grid[i]) for i in range(1, self.N_t + 1)]
        F[0] = self.history_vel[0]
        out = []
        for i in range(1, self.N_t + 1):
            sch, dt = self.schemes[i - 1], self.dts[i - 1]
            r = np.zeros(self.model.dim)
            for j in range(sch.k + 1):
                m = i - j
                if sch.alphas[j] != 0.0:
                    r += (sch.alphas[j] / dt) * self._state(Y, m)
                if sch.betas[j] != 0.0:
                    r -= sch.betas[j] * (F[m] if m >= 0 else self.history_vel[-m])
            out.append(np.sqrt(self.weights[i - 1] / 2.0) * self.weighting.apply(r))
        return np.concatenate(out)

    def direct_jacobian(self, coords):
        Y = self.states(coords)
        JPi = {}
        rows = []
        for i in range(1, self.N_t + 1):
            sch, dt = self.schemes[i - 1], self.dts[i - 1]
            B = np.zeros((self.weighting.n_rows, self.K))
            for j in range(sch.k + 1):
                m = i - j
                if m < 1:
                    continue   # Pi vanishes at the start; older states are fixed data
                B += (sch.alphas[j] / dt) * self.weighting.apply(self.samples[m])
                if sch.betas[j] != 0.0:
                    if m not in JPi:
                        JPi[m] = self.weighting.apply(
                            self.model.jac_times(Y[m], self.grid[m], self.samples[m]))
                    B -= sch.betas[j] * JPi[m]
            rows.append(np.sqrt(self.weights[i - 1] / 2.0) * B)
        return np.vstack(rows)

    # -- indirect (quadrature) objective ------------------------------------
    def continuous_residuals(self, coords):
        """Unweighted ``Pi_dot y - f(Pi y + xbar_ref)`` at each quadrature point."""
        y = np.asarray(coords, dtype=float)
        X = self.Pi_q @ y + self.x_ref
        return np.array([self.dPi_q[q] @ y - self.model.f(X[q], t)
                         for q, t in enumerate(self.quad_points)])

    def indirect_residual(self, coords):
        R = self.continuous_residuals(coords)
        W = self.weighting.apply_to_rows(R)
        return (np.sqrt(self.quad_weights / 2.0)[:, None] * W).ravel()

    def indirect_sensitivities(self, coords):
        """``Pi_dot - J Pi`` at each quadrature point, shape (Q, N, K_ST)."""
        y = np.asarray(coords, dtype=float)
        X = self.Pi_q @ y + self.x_ref
        return np.array([self.dPi_q[q] - self.model.jac_times(X[q], t, self.Pi_q[q])
                         for q, t in enumerate(self.quad_points)])

    def indirect_jacobian(self, coords):
        S = self.indirect_sensitivities(coords)
        S = np.swapaxes(self.weighting.apply_to_rows(np.swapaxes(S, 1, 2)), 1, 2)
        return (np.sqrt(self.quad_weights / 2.0)[:, None, None] * S).reshape(-1, self.K)


def _solve(problem, residual, jacobian, initial_guess, gn_config):
    x0 = np.zeros(problem.K) if initial_guess is None else np.asarray(initial_guess, dtype=float)
    if x0.shape != (problem.K,):
        raise ContractViolation("initial guess has the wrong length")
    return gauss_newton(residual, jacobian, x0, gn_config)


def solve_st_direct(problem, initial_guess=None, gn_config=None):
    """Gauss-Newton on the LMS window objective over the K_ST coordinates."""
    rank = _weighting_rank(problem.weighting, problem.model.dim)
    if rank * problem.N_t < problem.K:
        raise SingularSystemError(f"rank(Psi) * N_t = {rank * problem.N_t} < K_ST = {problem.K}")
    return _solve(problem, problem.direct_residual, problem.direct_jacobian,
                  initial_guess, gn_config)


def solve_st_indirect(problem, initial_guess=None, gn_config=None):
    """Gauss-Newton on the quadrature of the time-continuous residual."""
    rank = _weighting_rank(problem.weighting, problem.model.dim)
    need = int(np.ceil(problem.K / rank))
    if problem.quad_points.size < need:
        raise SingularSystemError(f"need at least {need} quadrature points")
    return _solve(problem, problem.indirect_residual, problem.indirect_jacobian,
                  initial_guess, gn_config)


def st_stationarity_residual(problem, coords):
    """Quadrature of ``(Pi_dot - J Pi)^T A (Pi_dot y - f)`` over the window.

    This is the gradient of ``sum_q (zeta_q / 2) ||Psi r_q||^2``.
    """
    R = problem.weighting.apply_to_rows(problem.continuous_residuals(coords))
    S = problem.indirect_sensitivities(coords)
    S = np.swapaxes(problem.weighting.apply_to_rows(np.swapaxes(S, 1, 2)), 1, 2)
    return np.einsum("q,qnk,qn->k", problem.quad_weights, S, R)


def run_wls_st(model, partition, st_basis, x0, config=None):
    """Sequential space-time WLS; returns a full-state trajectory.

    Each window's reference state is the previous window's reconstructed end
    state (x0 for the first window).
    """
    config = config or StConfig()
    if st_basis.n_windows != partition.n_windows or any(
            not np.array_equal(a, b) for a, b in zip(st_basis.grids, partition.grids)):
        raise ContractViolation("space-time basis and partition do not match")
    solve = solve_st_direct if config.method == "direct" else solve_st_indirect
    gg = partition.global_grid
    full = [np.asarray(x0, dtype=float)]
    diags, failure = [], None
    for n in range(1, partition.n_windows + 1):
        try:
            prob = StWindowProblem.for_window(model, st_basis, n, full[-1], config, full, partition)
            res = solve(prob, None, config.gn_config)
        except NumericalFailure as exc:
            failure = exc
            diags.append({"window": n, "converged": False, "error": str(exc)})
            break
        full.extend(prob.states(res.x)[1:])
        diags.append({"window": n, "iterations": res.iterations, "objective": res.objective,
                      "converged": res.converged, "coords": res.x})
    traj = Trajectory(gg[: len(full)], np.array(full))
    return RomRun(traj, None, failure, diags)
