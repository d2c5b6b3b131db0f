"""ODE models, linear multistep schemes, time grids and FOM integration.

The full-order model is the system ``dx/dt = f(x, t)``.  A linear multistep
(LMS) scheme with coefficients ``alpha_j, beta_j`` (j = 0..k) defines the
time-discrete residual

    r^i = (1/dt) sum_j alpha_j y^{i-j} - sum_j beta_j f(y^{i-j}, t^{i-j})

which is used both to advance the FOM and as the residual minimized by the
LSPG and windowed least-squares reduced models.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ContractViolation, NumericalFailure, StepFailure


# ---------------------------------------------------------------------------
# models
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class OdeModel:
    """A system ``dy/dt = velocity(y, t)`` of dimension ``dim``.

    ``jacobian(y, t)`` is optional and may return a dense array or a scipy
    sparse matrix.  When it is missing, forward differences are used.
    ``jac_matmat(y, t, V)`` optionally computes ``J V`` without forming J.
    """

    dim: int
    velocity: Callable[[np.ndarray, float], np.ndarray]
    jacobian: Optional[Callable[[np.ndarray, float], object]] = None
    jac_matmat: Optional[Callable] = None
    autonomous: bool = True
    name: str = "ode"

    def __post_init__(self):
        if int(self.dim) <= 0:
            raise ContractViolation(f"model dimension must be positive, got {self.dim}")

    def f(self, y, t=0.0):
        y = _as_state(y, self.dim)
        out = np.asarray(self.velocity(y, t), dtype=float)
        if out.shape != (self.dim,):
            raise ContractViolation(
                f"velocity returned shape {out.shape}, expected ({self.dim},)")
        if not np.all(np.isfinite(out)):
            raise NumericalFailure(f"non-finite velocity at t={t}")
        return out

    def jac(self, y, t=0.0, fy=None):
        """Jacobian as a dense array or sparse matrix."""
        y = _as_state(y, self.dim)
        if self.jacobian is not None:
            J = self.jacobian(y, t)
            return J if sp.issparse(J) else np.asarray(J, dtype=float)
        return fd_jacobian(self, y, t, fy=fy)

    def jac_times(self, y, t, V, fy=None):
        """Product ``(df/dy) V`` for a dense N x K block ``V``."""
        V = np.asarray(V, dtype=float)
        if self.jac_matmat is not None:
            return np.asarray(self.jac_matmat(_as_state(y, self.dim), t, V), dtype=float)
        if self.jacobian is not None:
            J = self.jacobian(_as_state(y, self.dim), t)
            return np.asarray(J @ V, dtype=float)
        if fy is None:
            fy = self.f(y, t)
        cols = [fd_jvp(self, y, t, V[:, j], fy=fy) for j in range(V.shape[1])]
        return np.column_stack(cols) if cols else np.zeros((self.dim, 0))


def _as_state(y, dim):
    y = np.asarray(y, dtype=float)
    if y.shape != (dim,):
        raise ContractViolation(f"state has shape {y.shape}, expected ({dim},)")
    return y


def default_fd_eps(y):
    return 1e-6 * (1.0 + np.linalg.norm(y))


def fd_jvp(model, y, t, v, eps=None, fy=None):
    """Forward-difference Jacobian-vector product ``(f(y + eps v) - f(y)) / eps``."""
    y = _as_state(y, model.dim)
    v = _as_state(v, model.dim)
    if eps is None:
        eps = default_fd_eps(y)
    if not eps > 0:
        raise ContractViolation("eps must be positive")
    if not np.any(v):
        return np.zeros(model.dim)
    if fy is None:
        fy = model.f(y, t)
    out = (model.f(y + eps * v, t) - fy) / eps
    if not np.all(np.isfinite(out)):
        raise NumericalFailure("non-finite finite-difference product")
    return out


def fd_jacobian(model, y, t, fy=None, eps=None):
    """Dense forward-difference Jacobian, one velocity evaluation per column."""
    n = model.dim
    if fy is None:
        fy = model.f(y, t)
    I = np.eye(n)
    return np.column_stack([fd_jvp(model, y, t, I[:, j], eps=eps, fy=fy) for j in range(n)])


def ode_residual(model, y, ydot, t):
    """Time-continuous residual ``ydot - f(y, t)``."""
    ydot = _as_state(ydot, model.dim)
    return ydot - model.f(y, t)


# ---------------------------------------------------------------------------
# schemes
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LmsScheme:
    name: str
    alphas: tuple
    betas: tuple

    def __post_init__(self):
        if len(self.alphas) != len(self.betas) or len(self.alphas) < 2:
            raise ContractViolation("alphas and betas must have equal length k+1 >= 2")
        if abs(sum(self.alphas)) > 1e-14:
            raise ContractViolation(f"{self.name}: coefficients are not consistent")

    @property
    def k(self):
        return len(self.alphas) - 1

    @property
    def implicit(self):
        return self.betas[0] != 0.0

    def for_history(self, n_prev):
        """Scheme usable when only ``n_prev`` earlier states exist.

        Multistep schemes fall back to forward Euler when the full history
        is not available (only the first global step for AB2).
        """
        if n_prev >= self.k:
            return self
        if n_prev < 1:
            raise ContractViolation("at least one previous state is required")
        return FORWARD_EULER


BACKWARD_EULER = LmsScheme("BackwardEuler", (1.0, -1.0), (1.0, 0.0))
CRANK_NICOLSON = LmsScheme("CrankNicolson", (1.0, -1.0), (0.5, 0.5))
ADAMS_BASHFORTH2 = LmsScheme("AdamsBashforth2", (1.0, -1.0, 0.0), (0.0, 1.5, -0.5))
FORWARD_EULER = LmsScheme("ForwardEuler", (1.0, -1.0), (0.0, 1.0))

SCHEMES = {
    "be": BACKWARD_EULER,
    "backwardeuler": BACKWARD_EULER,
    "cn": CRANK_NICOLSON,
    "cranknicolson": CRANK_NICOLSON,
    "ab2": ADAMS_BASHFORTH2,
    "adamsbashforth2": ADAMS_BASHFORTH2,
    "fe": FORWARD_EULER,
    "forwardeuler": FORWARD_EULER,
}


def get_scheme(name):
    key = name.replace("_", "").replace("-", "").lower()
    try:
        return SCHEMES[key]
    except KeyError:
        raise ContractViolation(f"unknown scheme {name!r}") from None


def lms_residual(scheme, model, history, times, dt, velocities=None):
    """Discrete LMS residual at instance i.

    ``history`` lists ``y^i, y^{i-1}, ..., y^{i-k}`` and ``times`` the matching
    time stamps.  ``velocities`` optionally supplies precomputed ``f`` values
    for the same states (entries may be None).
    """
    k = scheme.k
    if len(history) != k + 1 or len(times) != k + 1:
        raise ContractViolation(f"{scheme.name} needs {k + 1} history states")
    if not dt > 0:
        raise ContractViolation("dt must be positive")
    r = np.zeros(model.dim)
    for j in range(k + 1):
        yj = _as_state(history[j], model.dim)
        if scheme.alphas[j] != 0.0:
            r += (scheme.alphas[j] / dt) * yj
        if scheme.betas[j] != 0.0:
            fj = velocities[j] if velocities is not None and velocities[j] is not None \
                else model.f(yj, times[j])
            r -= scheme.betas[j] * fj
    return r


# ---------------------------------------------------------------------------
# grids and trajectories
# ---------------------------------------------------------------------------

def uniform_grid(T, dt, t0=0.0):
    n = int(round((T - t0) / dt))
    if n < 1 or abs(n * dt - (T - t0)) > 1e-9 * max(1.0, abs(T)):
        raise ContractViolation(f"T={T} is not an integer multiple of dt={dt}")
    return t0 + dt * np.arange(n + 1)


def _check_grid(grid):
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size < 2:
        raise ContractViolation("a time grid needs at least two instances")
    if np.any(np.diff(grid) <= 0):
        raise ContractViolation("time grid must be strictly increasing")
    return grid


def _is_uniform(steps):
    return np.allclose(steps, steps[0], rtol=1e-9, atol=0.0)


@dataclass(frozen=True)
class WindowPartition:
    """Non-overlapping windows covering [t0, T], each with its own sub-grid.

    Windows are numbered from 1.  ``grids[n-1]`` holds ``tau^{n,0..N_t^n}``;
    quadrature weights default to the step sizes.
    """

    grids: tuple
    weights: Optional[tuple] = None

    def __post_init__(self):
        grids = tuple(_check_grid(g) for g in self.grids)
        if not grids:
            raise ContractViolation("partition needs at least one window")
        for a, b in zip(grids[:-1], grids[1:]):
            if a[-1] != b[0]:
                raise ContractViolation("adjacent windows must share their boundary")
        object.__setattr__(self, "grids", grids)
        if self.weights is None:
            w = tuple(np.diff(g) for g in grids)
        else:
            w = tuple(np.asarray(x, dtype=float) for x in self.weights)
            if len(w) != len(grids) or any(x.shape != (g.size - 1,) for x, g in zip(w, grids)):
                raise ContractViolation("one weight per sub-grid step is required")
            if any(np.any(x <= 0) for x in w):
                raise ContractViolation("quadrature weights must be positive")
        object.__setattr__(self, "weights", w)

    @classmethod
    def from_grid(cls, grid, window_steps=None, boundaries=None):
        """Split a global grid into windows.

        Either ``window_steps`` (instances per window; the last window may be
        shorter) or explicit ``boundaries`` times that must lie on the grid.
        """
        grid = _check_grid(grid)
        n = grid.size - 1
        if boundaries is not None:
            idx = []
            for b in boundaries:
                hit = np.flatnonzero(np.isclose(grid, b, rtol=0, atol=1e-9 * max(1.0, abs(b))))
                if hit.size == 0:
                    raise ContractViolation(f"window boundary {b} is not a grid instance")
                idx.append(int(hit[0]))
            idx = sorted(set(idx) | {0, n})
        else:
            if window_steps is None or window_steps < 1:
                raise ContractViolation("window_steps must be a positive integer")
            idx = list(range(0, n, window_steps)) + [n]
        return cls(tuple(grid[a:b + 1] for a, b in zip(idx[:-1], idx[1:])))

    @classmethod
    def uniform(cls, T, dt, window, t0=0.0):
        """Uniform windows of length ``window`` on a uniform grid."""
        steps = int(round(window / dt))
        if steps < 1 or abs(steps * dt - window) > 1e-9 * max(1.0, window):
            raise ContractViolation(f"window {window} is not an integer multiple of dt {dt}")
        return cls.from_grid(uniform_grid(T, dt, t0), window_steps=steps)

    @property
    def n_windows(self):
        return len(self.grids)

    def grid(self, n):
        return self.grids[n - 1]

    def n_steps(self, n):
        return self.grids[n - 1].size - 1

    def steps(self, n):
        return np.diff(self.grids[n - 1])

    def window_weights(self, n):
        return self.weights[n - 1]

    def offset(self, n):
        """Global index of ``tau^{n,0}``."""
        return sum(g.size - 1 for g in self.grids[: n - 1])

    @property
    def global_grid(self):
        return np.concatenate([self.grids[0]] + [g[1:] for g in self.grids[1:]])

    @property
    def boundaries(self):
        return np.array([g[0] for g in self.grids] + [self.grids[-1][-1]])


@dataclass(frozen=True)
class Trajectory:
    """Samples ``states[i]`` of a (full or reduced) solution at ``times[i]``."""

    times: np.ndarray
    states: np.ndarray
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        t = np.array(self.times, dtype=float)
        x = np.array(self.states, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if t.ndim != 1 or x.shape[0] != t.size:
            raise ContractViolation("state count must equal grid length")
        t.setflags(write=False)
        x.setflags(write=False)
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "states", x)

    def __len__(self):
        return self.times.size

    @property
    def dim(self):
        return self.states.shape[1]

    @property
    def final(self):
        return self.states[-1]

    def sample(self, times, interpolate=True):
        """States at ``times``, matching grid instances exactly or linearly interpolating."""
        times = np.asarray(times, dtype=float)
        idx = np.searchsorted(self.times, times)
        idx = np.clip(idx, 0, self.times.size - 1)
        tol = 1e-9 * max(1.0, float(np.max(np.abs(self.times))))
        exact = np.abs(self.times[idx] - times) <= tol
        lower = np.clip(idx - 1, 0, self.times.size - 1)
        exact_lo = np.abs(self.times[lower] - times) <= tol
        idx = np.where(exact, idx, np.where(exact_lo, lower, idx))
        exact = exact | exact_lo
        if np.all(exact):
            return self.states[idx].copy()
        if not interpolate:
            raise ContractViolation("requested times are not grid instances")
        if times.min() < self.times[0] - tol or times.max() > self.times[-1] + tol:
            raise ContractViolation("cannot extrapolate outside the trajectory grid")
        out = np.empty((times.size, self.dim))
        for j in range(self.dim):
            out[:, j] = np.interp(times, self.times, self.states[:, j])
        out[exact] = self.states[idx[exact]]
        return out


# ---------------------------------------------------------------------------
# integration
# ---------------------------------------------------------------------------

def default_newton_tol(dim):
    return 1e-10 * np.sqrt(dim)


def _solve_linear(Jm, rhs):
    if sp.issparse(Jm):
        return spla.spsolve(sp.csc_matrix(Jm), rhs)
    return np.linalg.solve(Jm, rhs)


def lms_step(model, scheme, prev_states, prev_vel, times, t_new, dt, guess,
             newton_tol, max_newton_iters, step_index=None):
    """Advance one LMS step.

    ``prev_states``/``prev_vel`` list ``y^{i-1}, ..., y^{i-k}`` and their
    velocities; ``times`` the matching stamps.  Returns ``(y^i, f(y^i))``.
    """
    k = scheme.k
    c = np.zeros(model.dim)
    for j in range(1, k + 1):
        if scheme.alphas[j] != 0.0:
            c += (scheme.alphas[j] / dt) * prev_states[j - 1]
        if scheme.betas[j] != 0.0:
            c -= scheme.betas[j] * prev_vel[j - 1]
    a0, b0 = scheme.alphas[0], scheme.betas[0]
    if b0 == 0.0:
        y = -c * dt / a0
        return y, model.f(y, t_new)
    y = np.array(guess, dtype=float)
    fy = model.f(y, t_new)
    g = (a0 / dt) * y + c - b0 * fy
    gnorm = np.linalg.norm(g)
    for _ in range(max_newton_iters):
        if gnorm <= newton_tol:
            return y, fy
        J = model.jac(y, t_new, fy=fy)
        if sp.issparse(J):
            Jm = (a0 / dt) * sp.identity(model.dim, format="csc") - b0 * J
        else:
            Jm = (a0 / dt) * np.eye(model.dim) - b0 * J
        y = y - _solve_linear(Jm, g)
        fy = model.f(y, t_new)
        g = (a0 / dt) * y + c - b0 * fy
        gnorm = np.linalg.norm(g)
    if gnorm <= newton_tol:
        return y, fy
    raise StepFailure(f"Newton did not converge at step {step_index} "
                      f"(residual {gnorm:.3e})", step=step_index, residual_norm=gnorm)


def march(model, scheme, grid, x0, newton_tol=None, max_newton_iters=20):
    """Integrate as far as possible.

    Returns ``(states, failure)`` where ``failure`` is None or the exception
    that stopped the run; ``states`` holds every completed instance.
    """
    grid = _check_grid(grid)
    x0 = _as_state(x0, model.dim)
    if newton_tol is None:
        newton_tol = default_newton_tol(model.dim)
    steps = np.diff(grid)
    if scheme.k > 1 and not _is_uniform(steps):
        raise ContractViolation(f"{scheme.name} requires a uniform grid")
    states = [x0.copy()]
    vel = [model.f(x0, grid[0])]
    for i in range(1, grid.size):
        sch = scheme.for_history(i)
        k = sch.k
        prev = states[::-1][:k]
        prev_v = vel[::-1][:k]
        try:
            y, fy = lms_step(model, sch, prev, prev_v, None, grid[i], steps[i - 1],
                             states[-1], newton_tol, max_newton_iters, step_index=i)
        except (StepFailure, NumericalFailure) as exc:
            return np.array(states), exc
        states.append(y)
        vel.append(fy)
    return np.array(states), None


def integrate_fom(model, scheme, grid, x0, newton_tol=None, max_newton_iters=20):
    """Integrate the full-order model on ``grid``; raises on any step failure."""
    states, failure = march(model, scheme, grid, x0, newton_tol, max_newton_iters)
    if failure is not None:
        raise failure
    return Trajectory(np.asarray(grid, dtype=float), states, meta={"model": model.name,
                                                                   "scheme": scheme.name})
