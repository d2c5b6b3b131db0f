"""Dense kernels: thin SVD, column-pivoted QR, normal-equation solves and
block lower banded Jacobians for window least-squares problems."""
from __future__ import annotations

import functools

import numpy as np
import scipy.linalg as sla

from .errors import ContractViolation, NumericalFailure, SingularSystemError

# squared pivot ratio below which a Cholesky factor is treated as singular
PIVOT_RATIO_TOL = 1e-14


def thin_svd(M):
    """Return ``U, sigma, Z`` with ``M = U diag(sigma) Z^T`` and r = min(m, n)."""
    M = np.asarray(M, dtype=float)
    if M.ndim != 2:
        raise ContractViolation("thin_svd expects a matrix")
    if not np.all(np.isfinite(M)):
        raise ContractViolation("matrix has non-finite entries")
    try:
        U, s, Zt = np.linalg.svd(M, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailure(f"SVD did not converge: {exc}") from exc
    return U, s, Zt.T


def pivoted_qr(M):
    """Column-pivoted QR (greedy largest remaining column norm).

    Returns ``(pivots, R)`` with ``M[:, pivots] = Q R``.
    """
    M = np.asarray(M, dtype=float)
    if not np.all(np.isfinite(M)):
        raise ContractViolation("matrix has non-finite entries")
    R, piv = sla.qr(M, mode="r", pivoting=True)
    return piv, R


class BlockLowerBanded:
    """Block lower banded matrix with ``n_blocks`` block rows and columns.

    ``blocks[d, i]`` is the (n_rows x K) block in block row i and block
    column i - d.  Entries with i - d < 0 are ignored.  With one
    subdiagonal this is the block lower bidiagonal Jacobian of a one-step
    scheme; k-step schemes give k subdiagonals.
    """

    def __init__(self, blocks):
        blocks = np.asarray(blocks, dtype=float)
        if blocks.ndim != 4:
            raise ContractViolation("blocks must have shape (bands, n_blocks, rows, K)")
        self.blocks = blocks
        self.bands = blocks.shape[0] - 1
        self.n_blocks = blocks.shape[1]
        self.block_rows = blocks.shape[2]
        self.K = blocks.shape[3]

    @property
    def shape(self):
        return (self.n_blocks * self.block_rows, self.n_blocks * self.K)

    @property
    def diagonal(self):
        return self.blocks[0]

    def matvec(self, x):
        X = np.asarray(x, dtype=float).reshape(self.n_blocks, self.K)
        Y = np.zeros((self.n_blocks, self.block_rows))
        for d in range(self.bands + 1):
            Y[d:] += (self.blocks[d, d:] @ X[: self.n_blocks - d, :, None])[..., 0]
        return Y.ravel()

    def rmatvec(self, r):
        Rm = np.asarray(r, dtype=float).reshape(self.n_blocks, self.block_rows)
        Z = np.zeros((self.n_blocks, self.K))
        for d in range(self.bands + 1):
            Z[: self.n_blocks - d] += (Rm[d:, None, :] @ self.blocks[d, d:])[:, 0, :]
        return Z.ravel()

    __matmul__ = matvec

    def toarray(self):
        m, K = self.block_rows, self.K
        out = np.zeros(self.shape)
        for d in range(self.bands + 1):
            for i in range(d, self.n_blocks):
                out[i * m:(i + 1) * m, (i - d) * K:(i - d + 1) * K] = self.blocks[d, i]
        return out

    def normal_blocks(self):
        """Upper block band of ``J^T J``: ``G[c, e]`` is block (c, c + e)."""
        nb, p = self.n_blocks, self.bands
        G = np.zeros((nb, p + 1, self.K, self.K))
        for d1 in range(p + 1):
            for d2 in range(d1 + 1):
                # row i contributes B[d1,i]^T B[d2,i] to block (i-d1, i-d2)
                prod = np.swapaxes(self.blocks[d1, d1:], 1, 2) @ self.blocks[d2, d1:]
                G[: nb - d1, d1 - d2] += prod
        return G

    def normal_banded(self):
        """``J^T J`` in LAPACK upper banded storage, scalar bandwidth (p+1)K-1."""
        nb, p, K = self.n_blocks, self.bands, self.K
        G = self.normal_blocks()
        u = (p + 1) * K - 1
        ab = np.zeros((u + 1, nb * K))
        for e, (dst, src) in enumerate(_band_pattern(nb, p, K)):
            ab[dst] = G[: nb - e, e][src]
        return ab, u


@functools.lru_cache(maxsize=64)
def _band_pattern(nb, p, K):
    """Index maps from the block band of J^T J into LAPACK upper band storage."""
    u = (p + 1) * K - 1
    a, b = np.meshgrid(np.arange(K), np.arange(K), indexing="ij")
    out = []
    for e in range(p + 1):
        c = np.arange(nb - e)
        rows = c[:, None, None] * K + a[None]
        cols = (c[:, None, None] + e) * K + b[None]
        keep = rows <= cols
        src = np.nonzero(keep)
        out.append(((u + rows[keep] - cols[keep], cols[keep]), src))
    return tuple(out)


BlockLowerBidiagonal = BlockLowerBanded


def _check_pivots(diag):
    d2 = np.asarray(diag) ** 2
    if d2.size and (not np.all(np.isfinite(d2)) or d2.min() <= PIVOT_RATIO_TOL * d2.max()):
        raise SingularSystemError("normal matrix is numerically rank deficient")


def solve_normal_equations(J, r):
    """Least-squares step ``argmin ||J delta + r||`` via Cholesky of ``J^T J``.

    ``J`` is a dense matrix or a :class:`BlockLowerBanded`; in the latter case
    the banded structure of ``J^T J`` is used.  One step of iterative
    refinement is applied.
    """
    r = np.asarray(r, dtype=float)
    if isinstance(J, BlockLowerBanded):
        if r.size != J.shape[0]:
            raise ContractViolation("residual length does not match Jacobian rows")
        ab, u = J.normal_banded()
        try:
            cb = sla.cholesky_banded(ab, lower=False)
        except np.linalg.LinAlgError as exc:
            raise SingularSystemError(f"normal matrix is not positive definite: {exc}") from exc
        _check_pivots(cb[u])
        solve = lambda rhs: sla.cho_solve_banded((cb, False), rhs)
        grad = lambda res: J.rmatvec(res)
        apply = J.matvec
    else:
        J = np.asarray(J, dtype=float)
        if J.ndim != 2 or J.shape[0] != r.size:
            raise ContractViolation("residual length does not match Jacobian rows")
        # column equilibration removes scale spread between unknowns
        norms = np.linalg.norm(J, axis=0)
        if not np.all(norms > 0):
            raise SingularSystemError("Jacobian has a zero column")
        D = 1.0 / norms
        Js = J * D
        try:
            c, low = sla.cho_factor(Js.T @ Js, lower=False, check_finite=True)
        except np.linalg.LinAlgError as exc:
            raise SingularSystemError(f"normal matrix is not positive definite: {exc}") from exc
        _check_pivots(np.diag(c))
        solve = lambda rhs: D * sla.cho_solve((c, low), D * rhs)
        grad = lambda res: J.T @ res
        apply = lambda x: J @ x
    delta = solve(-grad(r))
    delta += solve(-grad(apply(delta) + r))
    return delta
