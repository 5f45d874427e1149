"""Classical fixed-interval smoother for the quadratic (Gaussian) case.

Serves as the gold standard the interior-point solver must reproduce when
both penalties are squared losses.  Two independent formulations are run and
cross-checked on every call: the forward filter / backward sweep recursion,
and the block-tridiagonal normal equations of the quadratic objective.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .errors import NotSpdError
from .linalg import BlockTridiagonal, block_tridiag_factor_solve
from .model import StateSpaceModel

__all__ = ["rts_smooth"]

_CROSS_CHECK_TOL = 1e-9


def _filter_sweep(model: StateSpaceModel, z: np.ndarray):
    """Forward filter with the known initial state (zero prior covariance)."""
    N, n = model.N, model.n
    x_pred = np.empty((N, n))
    P_pred = np.empty((N, n, n))
    x_filt = np.empty((N, n))
    P_filt = np.empty((N, n, n))
    x_prev, P_prev = model.x0, np.zeros((n, n))
    for k in range(N):
        G, Q = model.G_seq[k], model.Q_seq[k]
        x_pred[k] = G @ x_prev
        P_pred[k] = G @ P_prev @ G.T + Q
        H, R = model.H_seq[k], model.R_seq[k]
        S = H @ P_pred[k] @ H.T + R
        try:
            fac = cho_factor(0.5 * (S + S.T), lower=True)
        except np.linalg.LinAlgError:
            raise NotSpdError(f"innovation covariance at step {k} is singular", k) from None
        K = cho_solve(fac, H @ P_pred[k]).T
        x_filt[k] = x_pred[k] + K @ (z[k] - H @ x_pred[k])
        P_filt[k] = (np.eye(n) - K @ H) @ P_pred[k]
        x_prev, P_prev = x_filt[k], P_filt[k]
    return x_pred, P_pred, x_filt, P_filt


def _backward_sweep(model, x_pred, P_pred, x_filt, P_filt) -> np.ndarray:
    N, n = model.N, model.n
    x_smooth = np.empty((N, n))
    x_smooth[N - 1] = x_filt[N - 1]
    for k in range(N - 2, -1, -1):
        G_next = model.G_seq[k + 1]
        gain = np.linalg.solve(P_pred[k + 1], G_next @ P_filt[k]).T
        x_smooth[k] = x_filt[k] + gain @ (x_smooth[k + 1] - x_pred[k + 1])
    return x_smooth


def _normal_equations(model: StateSpaceModel, z: np.ndarray) -> np.ndarray:
    """Minimize the quadratic objective directly via its tridiagonal system."""
    N, n = model.N, model.n
    Qinv = np.stack([np.linalg.inv(Q) for Q in model.Q_seq])
    Rinv = np.stack([np.linalg.inv(R) for R in model.R_seq])
    diag = Qinv + np.einsum("kai,kab,kbj->kij", model.H_seq, Rinv, model.H_seq)
    if N > 1:
        diag[:-1] += np.einsum(
            "kai,kab,kbj->kij", model.G_seq[1:], Qinv[1:], model.G_seq[1:]
        )
        sub = -np.einsum("kab,kbj->kaj", Qinv[1:], model.G_seq[1:])
    else:
        sub = np.zeros((0, n, n))
    diag = 0.5 * (diag + diag.transpose(0, 2, 1))
    rhs = np.einsum("kia,kij,kj->ka", model.H_seq, Rinv, z).reshape(-1).copy()
    rhs[:n] += Qinv[0] @ model.x0
    x = block_tridiag_factor_solve(BlockTridiagonal(diag=diag, sub=sub), rhs)
    return x.reshape(N, n)


def rts_smooth(model: StateSpaceModel, z_seq) -> np.ndarray:
    """Smoothed state trajectory under squared process and measurement losses.

    Returns an (N, n) array.  Both the filter/sweep recursion and the normal
    equations are computed and must agree; a disagreement indicates an
    ill-conditioned model and raises ``RuntimeError``.
    """
    z = np.asarray(z_seq, dtype=float).reshape(model.N, model.m)
    x_smooth = _backward_sweep(model, *_filter_sweep(model, z))
    x_direct = _normal_equations(model, z)
    scale = 1.0 + float(np.abs(x_direct).max())
    gap = float(np.abs(x_smooth - x_direct).max())
    if gap > _CROSS_CHECK_TOL * scale:
        raise RuntimeError(
            f"smoother formulations disagree by {gap:.3e}; model is ill-conditioned"
        )
    return x_smooth
