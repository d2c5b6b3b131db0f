"""Trial bases and weighting matrices.

* POD spatial bases from snapshot matrices.
* q-sampling row selection (pivoted QR of the snapshot left singular vectors),
  augmented to whole mesh cells.
* Space-time bases Pi(t), one per window, built from window-shifted snapshots.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core_ode import Trajectory, WindowPartition
from .errors import ContractViolation
from .linalg import pivoted_qr, thin_svd

ORTHO_TOL = 1e-10


@dataclass(frozen=True)
class SpatialBasis:
    """Orthonormal basis ``V`` (N x K) and reference state ``x_ref``."""

    V: np.ndarray
    x_ref: np.ndarray
    energy: Optional[float] = None

    def __post_init__(self):
        V = np.array(self.V, dtype=float)
        if V.ndim != 2:
            raise ContractViolation("V must be a matrix")
        x_ref = np.zeros(V.shape[0]) if self.x_ref is None else np.array(self.x_ref, dtype=float)
        if x_ref.shape != (V.shape[0],):
            raise ContractViolation("x_ref length must match the rows of V")
        err = np.abs(V.T @ V - np.eye(V.shape[1])).max() if V.size else 0.0
        if err > ORTHO_TOL:
            raise ContractViolation(f"basis is not orthonormal (max deviation {err:.2e})")
        V.setflags(write=False)
        x_ref.setflags(write=False)
        object.__setattr__(self, "V", V)
        object.__setattr__(self, "x_ref", x_ref)

    @property
    def N(self):
        return self.V.shape[0]

    @property
    def K(self):
        return self.V.shape[1]

    def to_full(self, xhat):
        """``V xhat + x_ref``; accepts one coordinate vector or rows of them."""
        return np.asarray(xhat) @ self.V.T + self.x_ref

    def to_reduced(self, x):
        """Orthogonal projection coordinates ``V^T (x - x_ref)``."""
        return (np.asarray(x) - self.x_ref) @ self.V

    @classmethod
    def identity(cls, N):
        return cls(np.eye(N), np.zeros(N))


@dataclass(frozen=True)
class WeightingMatrix:
    """``A = Psi^T Psi`` with Psi either the identity or a row sampler."""

    dim: int
    rows: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.rows is not None:
            rows = np.array(self.rows, dtype=int)
            if rows.ndim != 1 or rows.size == 0:
                raise ContractViolation("sampling needs a non-empty index list")
            if np.unique(rows).size != rows.size:
                raise ContractViolation("sampled rows must be distinct")
            if rows.min() < 0 or rows.max() >= self.dim:
                raise ContractViolation("sampled row out of range")
            rows.setflags(write=False)
            object.__setattr__(self, "rows", rows)

    @classmethod
    def identity(cls, dim):
        return cls(dim)

    @classmethod
    def sampling(cls, dim, rows):
        return cls(dim, np.sort(np.asarray(rows, dtype=int)))

    @property
    def kind(self):
        return "Identity" if self.rows is None else "RowSampling"

    @property
    def n_rows(self):
        return self.dim if self.rows is None else self.rows.size

    def apply(self, r):
        """``Psi r`` for a vector, or ``Psi R`` row-wise for an N x m array."""
        return r if self.rows is None else np.asarray(r)[self.rows]

    def apply_to_rows(self, R):
        """``R Psi^T`` for arrays whose last axis has length N."""
        return R if self.rows is None else np.asarray(R)[..., self.rows]

    def scatter(self, s):
        """``Psi^T s``."""
        if self.rows is None:
            return s
        out = np.zeros((self.dim,) + np.shape(s)[1:])
        out[self.rows] = s
        return out

    def psi(self):
        return np.eye(self.dim) if self.rows is None else np.eye(self.dim)[self.rows]

    def matrix(self):
        P = self.psi()
        return P.T @ P


def collect_snapshots(traj, n_skip, x_ref=None):
    """Snapshot matrix with columns ``x^{j n_skip} - x_ref``."""
    if int(n_skip) < 1:
        raise ContractViolation("n_skip must be at least 1")
    X = traj.states[:: int(n_skip)]
    if x_ref is not None:
        X = X - np.asarray(x_ref, dtype=float)
    return np.array(X.T)


def numerical_rank(sigma, shape):
    if sigma.size == 0 or sigma[0] == 0.0:
        return 0
    tol = sigma[0] * max(shape) * np.finfo(float).eps
    return int(np.sum(sigma > tol))


def pod_basis(S, K, x_ref=None):
    """First ``K`` left singular vectors of ``S``; energy fraction is recorded."""
    S = np.asarray(S, dtype=float)
    U, s, _ = thin_svd(S)
    rank = numerical_rank(s, S.shape)
    if not 1 <= K <= rank:
        raise ContractViolation(f"K={K} must lie in [1, rank(S)={rank}]")
    energy = float(np.sum(s[:K] ** 2) / np.sum(s ** 2))
    x_ref = np.zeros(S.shape[0]) if x_ref is None else x_ref
    return SpatialBasis(U[:, :K].copy(), x_ref, energy=energy)


def pod_singular_values(S):
    return thin_svd(np.asarray(S, dtype=float))[1]


def qsample_pivots(snapshots, n_s):
    """First ``n_s`` pivots of the pivoted QR of ``U^T``."""
    F = np.asarray(snapshots, dtype=float)
    if not 1 <= n_s <= F.shape[0]:
        raise ContractViolation(f"n_s={n_s} must lie in [1, N={F.shape[0]}]")
    U, _, _ = thin_svd(F)
    piv, _ = pivoted_qr(U.T)
    return np.asarray(piv[:n_s], dtype=int)


def qsample(velocity_snapshots, n_s, dofs_per_cell=3):
    """Row-sampling weighting from q-sampling, augmented to whole cells."""
    F = np.asarray(velocity_snapshots, dtype=float)
    N = F.shape[0]
    if dofs_per_cell < 1 or N % dofs_per_cell:
        raise ContractViolation("dofs_per_cell must divide the state dimension")
    cells = np.unique(qsample_pivots(F, n_s) // dofs_per_cell)
    rows = (cells[:, None] * dofs_per_cell + np.arange(dofs_per_cell)).ravel()
    return WeightingMatrix.sampling(N, rows)


@dataclass(frozen=True)
class SpaceTimeBasis:
    """Piecewise-linear space-time basis, one block per window.

    ``samples[n-1][i]`` is the N x K_ST matrix Pi(tau^{n,i}); the first sample
    of every window is zero.
    """

    grids: tuple
    samples: tuple

    def __post_init__(self):
        if len(self.grids) != len(self.samples):
            raise ContractViolation("one sample stack per window grid is required")
        Ks = set()
        for g, s in zip(self.grids, self.samples):
            if s.ndim != 3 or s.shape[0] != g.size:
                raise ContractViolation("Pi samples must have shape (N_t+1, N, K_ST)")
            if np.any(s[0] != 0.0):
                raise ContractViolation("Pi must vanish at every window start")
            Ks.add(s.shape[2])
        if len(Ks) != 1:
            raise ContractViolation("all windows must share K_ST")

    @property
    def K(self):
        return self.samples[0].shape[2]

    @property
    def N(self):
        return self.samples[0].shape[1]

    @property
    def n_windows(self):
        return len(self.grids)

    def window(self, n):
        return self.grids[n - 1], self.samples[n - 1]

    def _interval(self, n, t):
        g = self.grids[n - 1]
        if t < g[0] - 1e-12 or t > g[-1] + 1e-12:
            raise ContractViolation(f"t={t} outside window {n}")
        return int(np.clip(np.searchsorted(g, t, side="left"), 1, g.size - 1))

    def evaluate(self, n, t):
        """Pi(t) by linear interpolation between samples."""
        g, s = self.window(n)
        i = self._interval(n, t)
        w = (t - g[i - 1]) / (g[i] - g[i - 1])
        return (1.0 - w) * s[i - 1] + w * s[i]

    def derivative(self, n, t):
        """Slope of Pi on the sub-interval containing t (left interval at nodes)."""
        g, s = self.window(n)
        i = self._interval(n, t)
        return (s[i] - s[i - 1]) / (g[i] - g[i - 1])


def build_st_basis(training_traj, partition, K_ST):
    """Space-time basis from window-shifted POD of a training trajectory.

    For window n the snapshots ``x(tau^{n,i}) - x(tau^{n,0})`` (i >= 1) are
    decomposed as ``D = U S Z^T``; column j of Pi(tau^{n,i}) is
    ``u_j s_j Z[i-1, j]`` so the coordinate vector of all ones reproduces the
    training samples when K_ST equals the rank.
    """
    grids, samples = [], []
    for n in range(1, partition.n_windows + 1):
        g = partition.grid(n)
        X = training_traj.sample(g, interpolate=False)
        D = (X[1:] - X[0]).T
        U, s, Z = thin_svd(D)
        rank = numerical_rank(s, D.shape)
        if rank == 0:
            raise ContractViolation(f"window {n}: training snapshots are degenerate")
        if not 1 <= K_ST <= rank:
            raise ContractViolation(f"window {n}: K_ST={K_ST} exceeds snapshot rank {rank}")
        P = np.zeros((g.size, D.shape[0], K_ST))
        P[1:] = np.einsum("nk,k,ik->ink", U[:, :K_ST], s[:K_ST], Z[:, :K_ST])
        grids.append(g.copy())
        samples.append(P)
    return SpaceTimeBasis(tuple(grids), tuple(samples))
