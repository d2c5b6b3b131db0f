"""Full-order models: Sod shock tube (1D Euler, Rusanov FV) and a linear system."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp

from .core_ode import OdeModel
from .errors import ContractViolation, PhysicalStateError


@dataclass(frozen=True)
class SodConfig:
    """Shock tube on [0, 1] with reflecting walls.

    The state is cell-major: ``u[3*i:3*i+3] = (rho, rho*u, rho*E)`` of cell i.
    """

    n_cells: int = 100
    gamma: float = 1.4
    left: tuple = (1.0, 0.0, 1.0)      # rho, u, p
    right: tuple = (0.125, 0.0, 0.1)
    interface: float = 0.5
    length: float = 1.0

    def __post_init__(self):
        if self.n_cells < 2:
            raise ContractViolation("need at least two cells")
        if min(self.left[0], self.left[2], self.right[0], self.right[2]) <= 0:
            raise ContractViolation("initial density and pressure must be positive")

    @property
    def dim(self):
        return 3 * self.n_cells

    @property
    def dx(self):
        return self.length / self.n_cells

    @property
    def centers(self):
        return (np.arange(self.n_cells) + 0.5) * self.dx


def primitive_to_conserved(rho, u, p, gamma):
    return np.array([rho, rho * u, p / (gamma - 1.0) + 0.5 * rho * u * u])


def sod_initial_state(config):
    U = np.empty((config.n_cells, 3))
    left = config.centers < config.interface
    U[left] = primitive_to_conserved(*config.left, config.gamma)
    U[~left] = primitive_to_conserved(*config.right, config.gamma)
    return U.ravel()


def _primitives(U, gamma):
    rho = U[:, 0]
    bad = np.flatnonzero(rho <= 0)
    if bad.size:
        raise PhysicalStateError(f"non-positive density in cell {bad[0]}", cell=int(bad[0]))
    vel = U[:, 1] / rho
    p = (gamma - 1.0) * (U[:, 2] - 0.5 * U[:, 1] * vel)
    bad = np.flatnonzero(~(p > 0))
    if bad.size:
        raise PhysicalStateError(f"non-positive pressure in cell {bad[0]}", cell=int(bad[0]))
    a = np.sqrt(gamma * p / rho)
    return rho, vel, p, a


def _euler_flux(U, vel, p):
    return np.column_stack([U[:, 1], U[:, 1] * vel + p, (U[:, 2] + p) * vel])


def _with_ghosts(U):
    gl = U[0] * np.array([1.0, -1.0, 1.0])
    gr = U[-1] * np.array([1.0, -1.0, 1.0])
    return np.vstack([gl, U, gr])


def _interface_data(config, u):
    U = np.asarray(u, dtype=float).reshape(config.n_cells, 3)
    rho, vel, p, a = _primitives(U, config.gamma)
    # ghost primitives mirror the boundary cells with negated velocity
    Ue = _with_ghosts(U)
    vel_e = np.concatenate([[-vel[0]], vel, [-vel[-1]]])
    p_e = np.concatenate([[p[0]], p, [p[-1]]])
    a_e = np.concatenate([[a[0]], a, [a[-1]]])
    F = _euler_flux(Ue, vel_e, p_e)
    speed = np.abs(vel_e) + a_e
    return Ue, vel_e, p_e, a_e, F, speed


def rusanov_flux(UL, UR, gamma):
    """Rusanov flux for rows of left/right conserved states."""
    UL = np.atleast_2d(UL)
    UR = np.atleast_2d(UR)
    _, vl, pl, al = _primitives(UL, gamma)
    _, vr, pr, ar = _primitives(UR, gamma)
    s = np.maximum(np.abs(vl) + al, np.abs(vr) + ar)
    return 0.5 * (_euler_flux(UL, vl, pl) + _euler_flux(UR, vr, pr)) - 0.5 * s[:, None] * (UR - UL)


def sod_velocity(config, u, t=0.0):
    """Semi-discrete Euler right-hand side ``-(F_{i+1/2} - F_{i-1/2}) / dx``."""
    Ue, _, _, _, F, speed = _interface_data(config, u)
    s = np.maximum(speed[:-1], speed[1:])
    Fh = 0.5 * (F[:-1] + F[1:]) - 0.5 * s[:, None] * (Ue[1:] - Ue[:-1])
    return (-(Fh[1:] - Fh[:-1]) / config.dx).ravel()


def _flux_jacobians(Ue, vel, p, a, gamma):
    """Per-state flux Jacobians dF/dU and gradients of |u| + a."""
    rho = Ue[:, 0]
    H = (Ue[:, 2] + p) / rho
    n = Ue.shape[0]
    A = np.zeros((n, 3, 3))
    A[:, 0, 1] = 1.0
    A[:, 1, 0] = 0.5 * (gamma - 3.0) * vel ** 2
    A[:, 1, 1] = (3.0 - gamma) * vel
    A[:, 1, 2] = gamma - 1.0
    A[:, 2, 0] = vel * (0.5 * (gamma - 1.0) * vel ** 2 - H)
    A[:, 2, 1] = H - (gamma - 1.0) * vel ** 2
    A[:, 2, 2] = gamma * vel
    du = np.column_stack([-vel / rho, 1.0 / rho, np.zeros(n)])
    dp = (gamma - 1.0) * np.column_stack([0.5 * vel ** 2, -vel, np.ones(n)])
    da = (gamma / (2.0 * a * rho))[:, None] * (dp - np.column_stack([p / rho, np.zeros(n), np.zeros(n)]))
    dspeed = np.sign(vel)[:, None] * du + da
    return A, dspeed


def _jacobian_blocks(config, u):
    """Diagonal, upper and lower 3x3 blocks of the velocity Jacobian."""
    Ue, vel, p, a, F, speed = _interface_data(config, u)
    A, dspeed = _flux_jacobians(Ue, vel, p, a, config.gamma)
    left_max = speed[:-1] >= speed[1:]
    s = np.where(left_max, speed[:-1], speed[1:])
    jump = Ue[1:] - Ue[:-1]
    eye = np.eye(3)
    # derivatives of each interface flux w.r.t. its left and right states
    dsl = np.where(left_max[:, None], dspeed[:-1], 0.0)
    dsr = np.where(left_max[:, None], 0.0, dspeed[1:])
    DL = 0.5 * A[:-1] + 0.5 * s[:, None, None] * eye - 0.5 * jump[:, :, None] * dsl[:, None, :]
    DR = 0.5 * A[1:] - 0.5 * s[:, None, None] * eye - 0.5 * jump[:, :, None] * dsr[:, None, :]
    R = np.diag([1.0, -1.0, 1.0])
    inv = 1.0 / config.dx
    diag = -inv * (DL[1:] - DR[:-1])
    diag[0] += inv * (DL[0] @ R)
    diag[-1] -= inv * (DR[-1] @ R)
    upper = -inv * DR[1:-1]   # cell i w.r.t. cell i+1, i = 0..n-2
    lower = inv * DL[1:-1]    # cell i w.r.t. cell i-1, i = 1..n-1
    return diag, upper, lower


def sod_jacobian(config, u, t=0.0):
    """Analytic sparse Jacobian of :func:`sod_velocity` (block tridiagonal)."""
    n = config.n_cells
    diag, upper, lower = _jacobian_blocks(config, u)
    blocks = np.concatenate([diag, upper, lower])
    rows = np.concatenate([np.arange(n), np.arange(n - 1), np.arange(1, n)])
    cols = np.concatenate([np.arange(n), np.arange(1, n), np.arange(n - 1)])
    bi = rows[:, None, None] * 3 + np.arange(3)[None, :, None]
    bj = cols[:, None, None] * 3 + np.arange(3)[None, None, :]
    bi, bj = np.broadcast_arrays(bi, bj)
    return sp.csr_matrix((blocks.ravel(), (bi.ravel(), bj.ravel())), shape=(3 * n, 3 * n))


def sod_jacobian_times(config, u, t, V):
    """``J V`` for a dense N x K block without assembling J."""
    diag, upper, lower = _jacobian_blocks(config, u)
    W = np.asarray(V, dtype=float).reshape(config.n_cells, 3, -1)
    out = diag @ W
    out[:-1] += upper @ W[1:]
    out[1:] += lower @ W[:-1]
    return out.reshape(config.dim, -1)


def make_sod_model(config=None):
    config = config or SodConfig()
    return OdeModel(
        dim=config.dim,
        velocity=lambda y, t: sod_velocity(config, y, t),
        jacobian=lambda y, t: sod_jacobian(config, y, t),
        jac_matmat=lambda y, t, V: sod_jacobian_times(config, y, t, V),
        autonomous=True,
        name=f"sod{config.n_cells}",
    )


def total_mass(config, u):
    return float(np.sum(np.asarray(u).reshape(config.n_cells, 3)[:, 0]) * config.dx)


@dataclass(frozen=True)
class LinearModelConfig:
    """``dy/dt = A y + b(t)``; ``b`` defaults to zero."""

    A: np.ndarray
    b: Optional[Callable[[float], np.ndarray]] = None

    def __post_init__(self):
        A = np.array(self.A, dtype=float)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise ContractViolation("A must be square")
        A.setflags(write=False)
        object.__setattr__(self, "A", A)

    @property
    def dim(self):
        return self.A.shape[0]

    @property
    def autonomous(self):
        return self.b is None


def linear_velocity(config, y, t=0.0):
    out = config.A @ y
    if config.b is not None:
        out = out + np.asarray(config.b(t), dtype=float)
    return out


def make_linear_model(A, b=None, name="linear"):
    config = A if isinstance(A, LinearModelConfig) else LinearModelConfig(A, b)
    return OdeModel(
        dim=config.dim,
        velocity=lambda y, t: linear_velocity(config, y, t),
        jacobian=lambda y, t: config.A,
        autonomous=config.autonomous,
        name=name,
    )


def zero_model(dim):
    """The model ``f = 0``, handy for degenerate-case checks."""
    return make_linear_model(np.zeros((dim, dim)), name="zero")


def random_stable_matrix(dim, rng, shift=0.5, scale=1.0):
    """Random matrix with eigenvalues in the open left half plane."""
    G = rng.standard_normal((dim, dim)) * scale / np.sqrt(dim)
    S = G - G.T
    Q, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
    D = np.diag(shift + rng.uniform(0.0, 1.0, dim))
    return S - Q @ D @ Q.T
