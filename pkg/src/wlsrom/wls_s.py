"""Windowed least-squares (WLS) with a fixed spatial basis.

Over window n with sub-grid tau^{n,0..N} the reduced trajectory minimizes

    J_D = sum_i (omega_i / 2) || Psi r_i ||^2

where r_i is the LMS residual of the full-order model evaluated at
``V xhat_i + x_ref``.  Two solution paths are provided:

* direct: Gauss-Newton on the stacked window residual (block lower banded
  Jacobian, banded normal equations);
* indirect: a forward-backward sweep (FBSM) on the state/costate system.
  The forward problem is the Galerkin ROM forced by a control, the backward
  problem is the discrete adjoint of J_D, so both paths share the same
  stationary points.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core_ode import Trajectory, WindowPartition, _is_uniform
from .errors import (ContractViolation, NonConvergenceError, NumericalFailure,
                     StepFailure)
from .gauss_newton import GaussNewtonConfig, gauss_newton
from .linalg import BlockLowerBanded
from .rom_classic import RomRun

# relative slack for objective comparisons lost in rounding
_ROUNDING = 64 * np.finfo(float).eps


def theta_index(n, i, partition):
    """Resolve relative index i of window n to a (window, index) pair.

    Non-positive indices in windows n >= 2 are mapped into the previous
    window; (1, 0) is the initial condition.
    """
    if n < 1 or n > partition.n_windows:
        raise ContractViolation(f"window {n} does not exist")
    while not (i > 0 or (n == 1 and i == 0)):
        if n == 1:
            raise ContractViolation(f"lookback before t=0 (window 1, index {i})")
        n -= 1
        i += partition.n_steps(n)
    if i > partition.n_steps(n):
        raise ContractViolation(f"index {i} beyond the end of window {n}")
    return n, i


@dataclass
class WindowSolution:
    n: int
    times: np.ndarray
    coords: np.ndarray            # (N_t + 1, K), row 0 is the initial state
    objective: float
    iterations: int
    converged: bool
    costate: Optional[np.ndarray] = None
    gradient_norm: Optional[float] = None
    trace: list = field(default_factory=list)


class WlsWindowProblem:
    """Data of one window: sub-grid, weights, operators, scheme and history.

    ``history`` lists full states newest first starting with the window's
    initial state ``V xhat0 + x_ref`` followed by earlier states resolved
    through :func:`theta_index`; ``start_index`` is the global index of
    tau^{n,0} and decides when multistep schemes need a startup step.
    """

    def __init__(self, model, ops, scheme, grid, weights, xhat0, history=(),
                 history_times=(), n=1, start_index=0):
        self.model = model
        self.ops = ops
        self.scheme = scheme
        self.n = n
        self.grid = np.asarray(grid, dtype=float)
        self.dts = np.diff(self.grid)
        self.weights = np.asarray(weights, dtype=float)
        self.N_t = self.dts.size
        if self.N_t < 1 or np.any(self.dts <= 0):
            raise ContractViolation("window sub-grid must be increasing with at least one step")
        if self.weights.shape != (self.N_t,) or np.any(self.weights <= 0):
            raise ContractViolation("one positive weight per step is required")
        if scheme.k > 1 and not _is_uniform(self.dts):
            raise ContractViolation(f"{scheme.name} requires uniform steps")
        self.xhat0 = np.asarray(xhat0, dtype=float)
        if self.xhat0.shape != (ops.K,):
            raise ContractViolation("initial reduced state has the wrong length")
        self.start_index = int(start_index)
        self.schemes = [scheme.for_history(self.start_index + i) for i in range(1, self.N_t + 1)]
        self.k = max(s.k for s in self.schemes)
        hist = [ops.to_full(self.xhat0)] + [np.asarray(h, dtype=float) for h in history]
        htimes = [self.grid[0]] + list(history_times)
        need = min(self.k, self.start_index + 1)
        if len(hist) < need:
            raise ContractViolation(f"window needs {need} history states, got {len(hist)}")
        self.history = hist[:need]
        self.history_times = htimes[:need]
        self.history_vel = [model.f(h, t) for h, t in zip(self.history, self.history_times)]
        self.scale = np.sqrt(self.weights / 2.0)
        self._cache_key = None
        self._cache = None

    @classmethod
    def for_window(cls, model, ops, scheme, partition, n, xhat0, global_states=()):
        """Problem for window n; ``global_states`` holds full states of all
        earlier instances (global indexing) for cross-window lookback."""
        grid = partition.grid(n)
        start = partition.offset(n)
        hist, htimes = [], []
        gg = None
        for j in range(1, scheme.k):
            if start - j < 0:
                break
            w, idx = theta_index(n, -j, partition)
            g = partition.offset(w) + idx
            hist.append(global_states[g])
            if gg is None:
                gg = partition.global_grid
            htimes.append(gg[g])
        return cls(model, ops, scheme, grid, partition.window_weights(n), xhat0,
                   hist, htimes, n=n, start_index=start)

    @property
    def K(self):
        return self.ops.K

    @property
    def n_rows(self):
        return self.ops.weighting.n_rows

    # -- evaluation ---------------------------------------------------------
    def _evaluate(self, coords):
        coords = np.asarray(coords, dtype=float)
        key = coords.tobytes()
        if key == self._cache_key:
            return self._cache
        X = coords.reshape(self.N_t, self.K)
        Y = self.ops.to_full(X)
        F = np.array([self.model.f(Y[i], self.grid[i + 1]) for i in range(self.N_t)])
        self._cache_key, self._cache = key, (X, Y, F)
        return X, Y, F

    def _state(self, Y, m):
        return Y[m - 1] if m >= 1 else self.history[-m]

    def _vel(self, F, m):
        return F[m - 1] if m >= 1 else self.history_vel[-m]

    def full_residuals(self, coords):
        """Unweighted LMS residuals r_i (rows i = 1..N_t) in full space."""
        _, Y, F = self._evaluate(coords)
        R = np.zeros_like(Y)
        for i in range(1, self.N_t + 1):
            sch, dt = self.schemes[i - 1], self.dts[i - 1]
            for j in range(sch.k + 1):
                if sch.alphas[j] != 0.0:
                    R[i - 1] += (sch.alphas[j] / dt) * self._state(Y, i - j)
                if sch.betas[j] != 0.0:
                    R[i - 1] -= sch.betas[j] * self._vel(F, i - j)
        return R

    def jv_blocks(self, coords):
        """``(df/dy) V`` at every window instance, shape (N_t, N, K)."""
        _, Y, F = self._evaluate(coords)
        return np.array([self.model.jac_times(Y[m], self.grid[m + 1], self.ops.V, fy=F[m])
                         for m in range(self.N_t)])


def wls_window_residual(problem, coords):
    """Stacked ``sqrt(omega_i/2) Psi r_i`` for i = 1..N_t."""
    R = problem.full_residuals(coords)
    W = problem.ops.weighting.apply_to_rows(R)
    return (problem.scale[:, None] * W).ravel()


def window_objective(problem, coords):
    r = wls_window_residual(problem, coords)
    return float(r @ r)


def wls_window_jacobian(problem, coords):
    """Block lower banded Jacobian of :func:`wls_window_residual`."""
    P, ops = problem, problem.ops
    implicit_cols = set()
    for i, sch in enumerate(P.schemes, start=1):
        for j in range(sch.k + 1):
            if sch.betas[j] != 0.0 and i - j >= 1:
                implicit_cols.add(i - j)
    JV = {}
    if implicit_cols:
        _, Y, F = P._evaluate(coords)
        for m in sorted(implicit_cols):
            JV[m] = ops.weighting.apply(
                P.model.jac_times(Y[m - 1], P.grid[m], ops.V, fy=F[m - 1]))
    blocks = np.zeros((P.k + 1, P.N_t, P.n_rows, P.K))
    for i, sch in enumerate(P.schemes, start=1):
        dt, s = P.dts[i - 1], P.scale[i - 1]
        for j in range(sch.k + 1):
            m = i - j
            if m < 1:
                continue
            B = (sch.alphas[j] / dt) * ops.PsiV
            if sch.betas[j] != 0.0:
                B = B - sch.betas[j] * JV[m]
            blocks[j, i - 1] = s * B
    return BlockLowerBanded(blocks)


def _replicated_guess(problem):
    return np.tile(problem.xhat0, problem.N_t)


def solve_window_direct(problem, initial_guess=None, gn_config=None):
    """Gauss-Newton on the window residual; the default guess repeats xhat0."""
    x0 = _replicated_guess(problem) if initial_guess is None else \
        np.asarray(initial_guess, dtype=float).ravel()
    if x0.size != problem.N_t * problem.K:
        raise ContractViolation("initial guess has the wrong length")
    if problem.n_rows < problem.K:
        raise ContractViolation("weighting samples fewer rows than the basis dimension")
    res = gauss_newton(lambda c: wls_window_residual(problem, c),
                       lambda c: wls_window_jacobian(problem, c), x0, gn_config)
    coords = np.vstack([problem.xhat0, res.x.reshape(problem.N_t, problem.K)])
    return WindowSolution(problem.n, problem.grid.copy(), coords, res.objective,
                          res.iterations, res.converged, gradient_norm=res.gradient_norm,
                          trace=res.trace)


def _run_windows(model, partition, ops, scheme, x0, solve):
    """Shared window loop for the direct and indirect solvers."""
    gg = partition.global_grid
    xhat = [ops.initial_coords(x0)]
    full = [ops.to_full(xhat[0])]
    diags, failure = [], None
    for n in range(1, partition.n_windows + 1):
        # the new window starts from the projection of the previous end state
        xhat0 = ops.initial_coords(full[-1])
        try:
            prob = WlsWindowProblem.for_window(model, ops, scheme, partition, n, xhat0, full)
            sol = solve(prob)
        except NumericalFailure as exc:
            failure = exc
            diags.append({"window": n, "converged": False, "error": str(exc)})
            break
        xhat.extend(sol.coords[1:])
        full.extend(ops.to_full(sol.coords[1:]))
        diags.append({"window": n, "iterations": sol.iterations, "objective": sol.objective,
                      "converged": sol.converged, "solution": sol})
    traj = Trajectory(gg[: len(xhat)], np.array(xhat))
    return RomRun(traj, ops, failure, diags)


def run_wls_direct(model, partition, ops, scheme, x0, gn_config=None):
    """Solve every window in order with Gauss-Newton."""
    return _run_windows(model, partition, ops, scheme, x0,
                        lambda prob: solve_window_direct(prob, None, gn_config))


# ---------------------------------------------------------------------------
# continuous state/costate right-hand sides
# ---------------------------------------------------------------------------

def forward_rhs(ops, model, xhat, lambda_hat, t=0.0):
    """Costate-forced Galerkin rate ``M^{-1} V^T A f + lambda``."""
    f = model.f(ops.to_full(xhat), t)
    return ops.solve_mass(ops.project(f)) + np.asarray(lambda_hat, dtype=float)


def adjoint_rhs(ops, model, xhat, xhat_dot, lambda_hat, t=0.0):
    """Costate rate from the Euler-Lagrange equations.

    ``M^{-1} [ -V^T J^T A V lambda - V^T J^T A (I - P)(V xhat_dot - f) ]``
    with ``P = V M^{-1} V^T A``.
    """
    y = ops.to_full(xhat)
    f = model.f(y, t)
    PJV = ops.weighting.apply(model.jac_times(y, t, ops.V, fy=f))
    r = ops.V @ np.asarray(xhat_dot, dtype=float) - f
    q = ops.weighting.apply(ops.complement(r))
    rhs = -PJV.T @ (ops.PsiV @ np.asarray(lambda_hat, dtype=float)) - PJV.T @ q
    return ops.solve_mass(rhs)


# ---------------------------------------------------------------------------
# forward-backward sweep
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FbsmConfig:
    """FBSM controls.

    ``rho`` is the fraction of the new costate blended into the control at
    each sweep; it grows by ``psi1`` after an accepted sweep and shrinks by
    ``psi2`` after a rejected one.
    """

    eps: float = 1e-6
    rho: float = 0.5
    psi1: float = 1.1
    psi2: float = 2.0
    max_sweeps: int = 500
    newton_tol: float = 1e-10
    max_newton_iters: int = 20
    min_rho: float = 1e-12

    def __post_init__(self):
        if not (0 < self.rho <= 1 and self.psi1 >= 1 and self.psi2 >= 1 and self.eps > 0):
            raise ContractViolation("invalid FBSM configuration")


def fbsm_forward(problem, controls, guess=None, config=None):
    """Forward sweep: the controlled Galerkin ROM discretized with the window scheme.

    Step i solves ``V^T A r_i(xhat_i) = M u_i`` where ``u_i = controls[i-1]``.
    Returns stacked coordinates (N_t * K).
    """
    cfg = config or FbsmConfig()
    P, ops = problem, problem.ops
    X = np.zeros((P.N_t, P.K))
    Y = np.zeros((P.N_t, ops.N))
    F = np.zeros((P.N_t, ops.N))
    prev = P.xhat0
    for i in range(1, P.N_t + 1):
        sch, dt, t = P.schemes[i - 1], P.dts[i - 1], P.grid[i]
        c = np.zeros(ops.N)
        for j in range(1, sch.k + 1):
            if sch.alphas[j] != 0.0:
                c += (sch.alphas[j] / dt) * P._state(Y, i - j)
            if sch.betas[j] != 0.0:
                c -= sch.betas[j] * P._vel(F, i - j)
        a0, b0 = sch.alphas[0], sch.betas[0]
        target = ops.M @ controls[i - 1]
        x = np.array(prev if guess is None else guess[i - 1], dtype=float)
        if b0 == 0.0:
            x = ops.solve_mass(target - ops.project(c) - (a0 / dt) * ops.project(ops.x_ref)) * (dt / a0)
            y = ops.to_full(x)
            fy = P.model.f(y, t)
        else:
            y = ops.to_full(x)
            fy = P.model.f(y, t)
            for it in range(cfg.max_newton_iters + 1):
                g = ops.project((a0 / dt) * y + c - b0 * fy) - target
                if np.linalg.norm(g) <= cfg.newton_tol:
                    break
                if it == cfg.max_newton_iters:
                    raise StepFailure(f"forward sweep Newton failed at step {i}",
                                      step=i, residual_norm=float(np.linalg.norm(g)))
                PJV = ops.weighting.apply(P.model.jac_times(y, t, ops.V, fy=fy))
                Jm = (a0 / dt) * ops.M - b0 * (ops.PsiV.T @ PJV)
                x = x - np.linalg.solve(Jm, g)
                y = ops.to_full(x)
                fy = P.model.f(y, t)
        X[i - 1], Y[i - 1], F[i - 1] = x, y, fy
        prev = x
    return X.ravel()


def fbsm_backward(problem, coords):
    """Backward sweep: discrete costates lambda_1..lambda_N of J_D at ``coords``.

    The recursion is the stationarity condition of J_D with respect to each
    xhat_m after splitting ``A r = A V lambda + A (I - P) r``; it runs from
    m = N_t down to 1 with lambda_{N_t + j} = 0.  Returns an (N_t, K) array.
    """
    P, ops = problem, problem.ops
    R = P.full_residuals(coords)
    Q = ops.weighting.apply_to_rows(np.array([ops.complement(r) for r in R]))
    JV = ops.weighting.apply_to_rows(np.swapaxes(P.jv_blocks(coords), 1, 2))
    JV = np.swapaxes(JV, 1, 2)   # (N_t, n_rows, K): Psi J_m V
    lam = np.zeros((P.N_t + P.k + 1, P.K))
    for m in range(P.N_t, 0, -1):
        G = JV[m - 1].T @ ops.PsiV          # V^T J_m^T A V
        lhs = None
        rhs = np.zeros(P.K)
        for j in range(P.k + 1):
            i = m + j
            if i > P.N_t:
                break
            sch = P.schemes[i - 1]
            if j > sch.k:
                continue
            w, dt = P.weights[i - 1], P.dts[i - 1]
            a, b = sch.alphas[j], sch.betas[j]
            if b != 0.0:
                rhs += w * b * (JV[m - 1].T @ Q[i - 1])
            op = (a / dt) * ops.M - b * G
            if j == 0:
                lhs = w * op
            else:
                rhs -= w * (op @ lam[i])
        lam[m] = np.linalg.solve(lhs, rhs)
    return lam[1: P.N_t + 1].copy()


def _trapz_distance(times, A, B):
    d = np.linalg.norm(A - B, axis=1)
    return float(np.sum(0.5 * (d[1:] + d[:-1]) * np.diff(times)))


def solve_window_fbsm(problem, x_guess=None, costate_guess=None, config=None):
    """Forward-backward sweep with adaptive relaxation.

    The returned costate has N_t + 1 node samples: sample i - 1 is the
    costate that forces step i and the final sample is the terminal value,
    which is exactly zero.
    """
    cfg = config or FbsmConfig()
    P = problem
    U = np.zeros((P.N_t, P.K)) if costate_guess is None else \
        np.asarray(costate_guess, dtype=float).reshape(P.N_t, P.K)
    guess = None if x_guess is None else np.asarray(x_guess, dtype=float).reshape(P.N_t, P.K)
    X = fbsm_forward(P, U, guess, cfg)
    obj = window_objective(P, X)
    lam = fbsm_backward(P, X)
    rho = cfg.rho
    trace = [(0, obj, rho, True, np.nan)]
    nodes = lambda c: np.vstack([P.xhat0, c.reshape(P.N_t, P.K)])
    for sweep in range(1, cfg.max_sweeps + 1):
        U_trial = (1.0 - rho) * U + rho * lam
        try:
            X_trial = fbsm_forward(P, U_trial, X.reshape(P.N_t, P.K), cfg)
            obj_trial = window_objective(P, X_trial)
        except NumericalFailure:
            obj_trial = np.inf
        if obj_trial <= obj + _ROUNDING * obj:
            diff = _trapz_distance(P.grid, nodes(X_trial), nodes(X))
            U, X, obj = U_trial, X_trial, obj_trial
            lam = fbsm_backward(P, X)
            trace.append((sweep, obj, rho, True, diff))
            rho = min(rho * cfg.psi1, 1.0)
            if diff <= cfg.eps:
                costate = np.vstack([lam, np.zeros((1, P.K))])
                return WindowSolution(P.n, P.grid.copy(), nodes(X), obj, sweep, True,
                                      costate=costate, trace=trace)
        else:
            # reject: keep the last accepted state and control
            trace.append((sweep, obj_trial, rho, False, np.nan))
            rho /= cfg.psi2
            if rho < cfg.min_rho:
                break
    raise NonConvergenceError(f"FBSM did not converge in {len(trace) - 1} sweeps "
                              f"(window {P.n})", trace=trace)


def run_wls_indirect(model, partition, ops, scheme, x0, fbsm_config=None):
    """Solve every window in order with the forward-backward sweep."""
    return _run_windows(model, partition, ops, scheme, x0,
                        lambda prob: solve_window_fbsm(prob, None, None, fbsm_config))


# ---------------------------------------------------------------------------
# optimal-control view
# ---------------------------------------------------------------------------

def _controlled_rate(ops, f, u_control):
    return ops.solve_mass(ops.project(f)) + ops.solve_mass(u_control)


def hamiltonian_value(ops, model, xhat, lambda_oc, u_control, t=0.0):
    """``H = lambda^T xhat_dot + 0.5 ||V xhat_dot - f||_A^2`` with the controlled rate."""
    f = model.f(ops.to_full(xhat), t)
    rate = _controlled_rate(ops, f, np.asarray(u_control, dtype=float))
    res = ops.weighting.apply(ops.V @ rate - f)
    return float(np.asarray(lambda_oc) @ rate + 0.5 * res @ res)


def hamiltonian_control_gradient(ops, model, xhat, lambda_oc, u_control, t=0.0):
    """``dH/du = M^{-1} lambda + M^{-1} V^T A (V xhat_dot - f)``, unsimplified."""
    f = model.f(ops.to_full(xhat), t)
    rate = _controlled_rate(ops, f, np.asarray(u_control, dtype=float))
    return ops.solve_mass(np.asarray(lambda_oc, dtype=float)) + \
        ops.solve_mass(ops.project(ops.V @ rate - f))


def pmp_variables(ops, costate):
    """Optimal-control costate and control ``(-M lambda, M lambda)`` per sample."""
    lam = np.atleast_2d(costate)
    return -lam @ ops.M.T, lam @ ops.M.T
