"""Error and residual metrics for full-state trajectories."""
from __future__ import annotations

import numpy as np

from .basis import WeightingMatrix
from .core_ode import Trajectory, lms_residual
from .errors import ContractViolation


def space_time_error(rom_traj, ref_traj, common_grid=None, interpolate=True, normalized=False):
    """``sqrt(sum_i dt_i ||x_rom(t_i) - x_ref(t_i)||^2)`` over ``i >= 1``.

    ``common_grid`` defaults to the ROM grid; ``dt_i = t_i - t_{i-1}``.
    With ``normalized`` the result is divided by the same quadrature of
    ``||x_ref||``.
    """
    grid = rom_traj.times if common_grid is None else np.asarray(common_grid, dtype=float)
    if grid.size < 2:
        raise ContractViolation("need at least two grid instances")
    if rom_traj.dim != ref_traj.dim:
        raise ContractViolation("trajectories have different state dimensions")
    X = rom_traj.sample(grid, interpolate)
    R = ref_traj.sample(grid, interpolate)
    w = np.diff(grid)
    err = float(np.sqrt(np.sum(w * np.sum((X[1:] - R[1:]) ** 2, axis=1))))
    if normalized:
        ref = float(np.sqrt(np.sum(w * np.sum(R[1:] ** 2, axis=1))))
        if ref == 0.0:
            raise ContractViolation("reference trajectory has zero norm")
        err /= ref
    return err


def trajectory_objective(model, scheme, traj, weighting=None):
    """Discrete objective ``sum_i (dt_i / 2) ||Psi r_i||^2`` of a full-state trajectory.

    Multistep schemes fall back to forward Euler while history is short, as
    in the solvers.
    """
    weighting = weighting or WeightingMatrix.identity(traj.dim)
    t, X = traj.times, traj.states
    F = [model.f(x, ti) for x, ti in zip(X, t)]
    total = 0.0
    for i in range(1, t.size):
        sch = scheme.for_history(i)
        dt = t[i] - t[i - 1]
        idx = [i - j for j in range(sch.k + 1)]
        r = lms_residual(sch, model, [X[m] for m in idx], [t[m] for m in idx], dt,
                         velocities=[F[m] for m in idx])
        r = weighting.apply(r)
        total += 0.5 * dt * float(r @ r)
    return total


def continuous_objective(model, traj, quad_grid=None, weighting=None):
    """``int 0.5 ||Psi (x_dot - f(x))||^2 dt`` of the piecewise-linear interpolant.

    The integral uses the midpoint rule on ``quad_grid`` (default: the
    trajectory grid), which must contain the trajectory grid so that the
    interpolant is linear on every quadrature interval.  Using one fine grid
    for trajectories computed with different time steps gives comparable
    values.
    """
    weighting = weighting or WeightingMatrix.identity(traj.dim)
    grid = traj.times if quad_grid is None else np.asarray(quad_grid, dtype=float)
    tol = 1e-9 * max(1.0, float(np.max(np.abs(grid))))
    if grid[0] < traj.times[0] - tol or grid[-1] > traj.times[-1] + tol:
        raise ContractViolation("quadrature grid extends past the trajectory")
    pos = np.searchsorted(grid, traj.times - tol)
    if np.any(pos >= grid.size) or np.any(np.abs(grid[np.minimum(pos, grid.size - 1)] - traj.times) > tol):
        raise ContractViolation("quadrature grid must contain the trajectory grid")
    mids = 0.5 * (grid[1:] + grid[:-1])
    h = np.diff(grid)
    t, X = traj.times, traj.states
    k = np.clip(np.searchsorted(t, mids) - 1, 0, t.size - 2)
    slope = (X[1:] - X[:-1]) / np.diff(t)[:, None]
    w = (mids - t[k]) / (t[k + 1] - t[k])
    Y = (1.0 - w)[:, None] * X[k] + w[:, None] * X[k + 1]
    total = 0.0
    for q, tq in enumerate(mids):
        r = weighting.apply(slope[k[q]] - model.f(Y[q], tq))
        total += 0.5 * h[q] * float(r @ r)
    return total


def project_trajectory(ops, traj):
    """Orthogonal projection of a full-state trajectory onto the affine trial space."""
    return Trajectory(traj.times, ops.to_full(ops.basis.to_reduced(traj.states)))
