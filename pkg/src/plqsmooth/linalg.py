"""Symmetric block-tridiagonal systems and their O(N n^3) solver."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve, solveh_banded

from .errors import NotSpdError

__all__ = ["BlockTridiagonal", "block_tridiag_factor_solve", "assemble_phi"]

_PIVOT_TOL = 1e-13


@dataclass
class BlockTridiagonal:
    """Symmetric block-tridiagonal matrix stored as blocks.

    ``diag[k]`` is the k-th diagonal block (n x n) and ``sub[k]`` the block
    at row k+1, column k; the superdiagonal is implied by symmetry.
    """

    diag: np.ndarray
    sub: np.ndarray

    def __post_init__(self):
        self.diag = np.asarray(self.diag, dtype=float)
        self.sub = np.asarray(self.sub, dtype=float)
        if self.diag.ndim != 3 or self.diag.shape[1] != self.diag.shape[2]:
            raise ValueError("diag must be (N, n, n)")
        n_blocks = self.diag.shape[0]
        if self.sub.shape != (max(n_blocks - 1, 0), self.diag.shape[1], self.diag.shape[1]):
            raise ValueError("sub must be (N-1, n, n)")

    @property
    def n_blocks(self) -> int:
        return self.diag.shape[0]

    @property
    def block_size(self) -> int:
        return self.diag.shape[1]

    def to_dense(self) -> np.ndarray:
        """Assemble the full matrix; intended for small systems and tests."""
        N, n = self.n_blocks, self.block_size
        out = np.zeros((N * n, N * n))
        for k in range(N):
            out[k * n : (k + 1) * n, k * n : (k + 1) * n] = self.diag[k]
        for k in range(N - 1):
            out[(k + 1) * n : (k + 2) * n, k * n : (k + 1) * n] = self.sub[k]
            out[k * n : (k + 1) * n, (k + 1) * n : (k + 2) * n] = self.sub[k].T
        return out


def block_tridiag_factor_solve(T: BlockTridiagonal, rhs: np.ndarray) -> np.ndarray:
    """Solve ``T x = rhs`` by a forward block Cholesky sweep.

    The Schur pivots ``S_1 = D_1``, ``S_k = D_k - E_{k-1} S_{k-1}^{-1}
    E_{k-1}^T`` are factored in order, followed by forward and backward
    substitution; the cost is one dense n^3 factorization per block.

    Raises
    ------
    NotSpdError
        If a pivot block fails the positive-definiteness test; carries the
        index of the offending block.
    """
    N, n = T.n_blocks, T.block_size
    rhs = np.asarray(rhs, dtype=float)
    flat = rhs.reshape(N, n)
    fwd = np.empty_like(flat)
    carry = np.empty((max(N - 1, 0), n, n))  # S_k^{-1} E_k^T per block
    factors = []
    pivot = T.diag[0]
    for k in range(N):
        if k > 0:
            pivot = T.diag[k] - T.sub[k - 1] @ carry[k - 1]
            pivot = 0.5 * (pivot + pivot.T)
        eigs = np.linalg.eigvalsh(pivot)
        if eigs[0] <= _PIVOT_TOL * max(abs(eigs[-1]), abs(eigs[0])):
            raise NotSpdError(
                f"pivot block {k} is not positive definite "
                f"(eigenvalue range [{eigs[0]:.3e}, {eigs[-1]:.3e}])",
                block_index=k,
            )
        fac = cho_factor(pivot, lower=True)
        factors.append(fac)
        if k < N - 1:
            carry[k] = cho_solve(fac, T.sub[k].T)
        r = flat[k] if k == 0 else flat[k] - T.sub[k - 1] @ fwd[k - 1]
        fwd[k] = cho_solve(fac, r)
    x = np.empty_like(flat)
    x[N - 1] = fwd[N - 1]
    for k in range(N - 2, -1, -1):
        x[k] = fwd[k] - carry[k] @ x[k + 1]
    return x.reshape(rhs.shape)


def _lower_banded(T: BlockTridiagonal) -> np.ndarray:
    """Lower-banded (LAPACK 'ab') storage of the block-tridiagonal matrix."""
    N, n = T.n_blocks, T.block_size
    size = N * n
    width = min(2 * n - 1, size - 1)
    ab = np.zeros((width + 1, size))
    for i in range(n):
        for j in range(n):
            if i >= j:
                ab[i - j, j::n] = T.diag[:, i, j]
            off = n + i - j
            if N > 1 and off <= width:
                ab[off, j : (N - 1) * n : n] = T.sub[:, i, j]
    return ab


def _banded_factor_solve(T: BlockTridiagonal, rhs: np.ndarray) -> np.ndarray:
    """Same solve through LAPACK's banded Cholesky; one C call for the sweep.

    Falls back to :func:`block_tridiag_factor_solve` when the banded
    factorization rejects the matrix, so failures surface with the block
    index attached.
    """
    rhs = np.asarray(rhs, dtype=float)
    try:
        return solveh_banded(_lower_banded(T), rhs, lower=True)
    except np.linalg.LinAlgError:
        return block_tridiag_factor_solve(T, rhs)


def assemble_phi(
    omega_w: np.ndarray,
    omega_v: np.ndarray,
    G_seq: np.ndarray,
    H_seq: np.ndarray,
) -> BlockTridiagonal:
    """Assemble the reduced state system from per-step weight blocks.

    ``omega_w[k]`` (n x n) enters through the transition structure: it adds
    to diagonal block k, is conjugated by ``G`` onto diagonal block k-1, and
    couples neighbours through the subdiagonal ``-omega_w[k+1] G_{k+1}``.
    ``omega_v[k]`` (m x m) is conjugated by ``H_k`` and is purely block
    diagonal.  The result equals the dense congruences of the bidiagonal
    transition operator and the block-diagonal measurement operator.
    """
    omega_w = np.asarray(omega_w, dtype=float)
    omega_v = np.asarray(omega_v, dtype=float)
    G_seq = np.asarray(G_seq, dtype=float)
    H_seq = np.asarray(H_seq, dtype=float)
    N, n = omega_w.shape[0], omega_w.shape[1]
    if G_seq.shape != (N, n, n):
        raise ValueError("G_seq shape mismatch")
    if H_seq.shape[0] != N or omega_v.shape != (N, H_seq.shape[1], H_seq.shape[1]):
        raise ValueError("H_seq / omega_v shape mismatch")
    diag = omega_w + np.einsum("kai,kab,kbj->kij", H_seq, omega_v, H_seq)
    if N > 1:
        diag[:-1] += np.einsum("kai,kab,kbj->kij", G_seq[1:], omega_w[1:], G_seq[1:])
        sub = -np.einsum("kab,kbj->kaj", omega_w[1:], G_seq[1:])
    else:
        sub = np.zeros((0, n, n))
    diag = 0.5 * (diag + diag.transpose(0, 2, 1))
    return BlockTridiagonal(diag=diag, sub=sub)
