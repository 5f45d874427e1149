"""State-space model container and smoothing problem assembly.

The model is the linear system

    x_1 = x_0 + w_1,   x_k = G_k x_{k-1} + w_k   (k = 2..N),
    z_k = H_k x_k + v_k                          (k = 1..N),

with known initial state ``x_0`` and mutually independent noise sequences.
:func:`build_problem` pairs a model and its measurements with PLQ penalties
on the whitened process and measurement deviations, producing the data of
the estimation objective

    sum_k rho_w(Q_k^{-1/2}(x_k - G_k x_{k-1})) + rho_v(R_k^{-1/2}(H_k x_k - z_k)).

All stacked operators are stored blockwise; nothing dense of size nN is ever
formed here, which is what keeps the downstream solver linear in N.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .analysis import check_finite
from .errors import DegeneratePenaltyError, NotSpdError
from .penalties import (
    AtomKind,
    PlqPenalty,
    atom_columns,
    atom_values,
    block_compose,
    make_atom,
)

__all__ = ["StateSpaceModel", "SmootherProblem", "build_problem", "objective"]


def _as_block_seq(value, N: int, rows: int, cols: int, name: str) -> np.ndarray:
    """Coerce a matrix or length-N list of matrices to shape (N, rows, cols)."""
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0 and rows == cols == 1:
        arr = arr.reshape(1, 1)
    if arr.ndim == 2:
        if arr.shape != (rows, cols):
            raise ValueError(f"{name} must be {rows}x{cols}, got {arr.shape}")
        return np.broadcast_to(arr, (N, rows, cols)).copy()
    if arr.ndim == 3:
        if arr.shape != (N, rows, cols):
            raise ValueError(f"{name} must be (N, {rows}, {cols}), got {arr.shape}")
        return arr.copy()
    raise ValueError(f"{name} has unsupported shape {arr.shape}")


@dataclass(eq=False)
class StateSpaceModel:
    """Time-varying linear state-space model data.

    ``G_seq``, ``H_seq``, ``Q_seq``, ``R_seq`` may each be given as a single
    matrix (broadcast over time) or as one matrix per step.  The first
    transition matrix is pinned to the identity: the initial state is known
    and the first deviation is ``x_1 - x_0``.  ``Q_k`` and ``R_k`` must be
    symmetric positive definite.
    """

    N: int
    n: int
    m: int
    G_seq: np.ndarray
    H_seq: np.ndarray
    Q_seq: np.ndarray
    R_seq: np.ndarray
    x0: np.ndarray

    def __post_init__(self):
        if self.N < 1 or self.n < 1 or self.m < 1:
            raise ValueError("N, n, m must be positive")
        G = _as_block_seq(self.G_seq, self.N, self.n, self.n, "G_seq")
        G[0] = np.eye(self.n)
        self.G_seq = G
        self.H_seq = _as_block_seq(self.H_seq, self.N, self.m, self.n, "H_seq")
        self.Q_seq = _as_block_seq(self.Q_seq, self.N, self.n, self.n, "Q_seq")
        self.R_seq = _as_block_seq(self.R_seq, self.N, self.m, self.m, "R_seq")
        self.x0 = np.asarray(self.x0, dtype=float).reshape(self.n)
        for name, seq in (("Q_seq", self.Q_seq), ("R_seq", self.R_seq)):
            for k, mat in enumerate(seq):
                if np.abs(mat - mat.T).max() > 1e-10 * (1.0 + np.abs(mat).max()):
                    raise NotSpdError(f"{name}[{k}] is not symmetric", block_index=k)
                try:
                    np.linalg.cholesky(mat)
                except np.linalg.LinAlgError:
                    raise NotSpdError(
                        f"{name}[{k}] is not positive definite", block_index=k
                    ) from None


def _inv_sqrt_blocks(seq: np.ndarray, name: str) -> np.ndarray:
    """Symmetric inverse square roots, one block per step."""
    out = np.empty_like(seq)
    for k, mat in enumerate(seq):
        vals, vecs = np.linalg.eigh(0.5 * (mat + mat.T))
        if vals[0] <= 0:
            raise NotSpdError(f"{name}[{k}] is not positive definite", block_index=k)
        out[k] = (vecs / np.sqrt(vals)) @ vecs.T
    return out


def _expand_penalty_spec(spec, N: int, dim: int, label: str) -> tuple[PlqPenalty, ...]:
    """Per-step penalties from a single spec or a recyclable list of specs.

    A scalar penalty is applied componentwise (composed ``dim`` times); a
    penalty of dimension ``dim`` is used as given.
    """
    if isinstance(spec, (PlqPenalty, AtomKind)) or not isinstance(spec, (list, tuple)):
        specs = [spec]
    else:
        specs = list(spec)
    if len(specs) == 1:
        specs = specs * N
    if len(specs) != N:
        raise ValueError(f"{label}: expected 1 or {N} penalty specs, got {len(specs)}")
    cache: dict[int, PlqPenalty] = {}

    def expand(one) -> PlqPenalty:
        key = id(one)
        if key in cache:
            return cache[key]
        pen = make_atom(one) if isinstance(one, AtomKind) else one
        if not isinstance(pen, PlqPenalty):
            raise ValueError(f"{label}: expected PlqPenalty or AtomKind, got {type(one)}")
        if pen.dim_y == dim:
            out = pen
        elif pen.dim_y == 1:
            out = block_compose([pen] * dim)
        else:
            raise ValueError(
                f"{label}: penalty dimension {pen.dim_y} matches neither 1 nor {dim}"
            )
        cache[key] = out
        return out

    return tuple(expand(s) for s in specs)


@dataclass(eq=False)
class SmootherProblem:
    """Assembled smoothing problem: model, whitening factors, penalties, data.

    ``b_tilde_w`` and ``b_tilde_v`` are the penalty offsets with the known
    initial state and the measurements folded in, so both penalty arguments
    become affine in the stacked state with zero constant term:
    ``b~w_k = b_w - B_w Q_k^{-1/2} x0`` at ``k = 1`` (``b_w`` elsewhere) and
    ``b~v_k = b_v - B_v R_k^{-1/2} z_k``.
    Treat instances as immutable after construction.
    """

    model: StateSpaceModel
    pen_w_steps: tuple[PlqPenalty, ...]
    pen_v_steps: tuple[PlqPenalty, ...]
    Qinv_sqrt: np.ndarray
    Rinv_sqrt: np.ndarray
    z: np.ndarray
    b_tilde_w: np.ndarray = field(init=False)
    b_tilde_v: np.ndarray = field(init=False)

    def __post_init__(self):
        mdl = self.model
        self.z = np.asarray(self.z, dtype=float).reshape(mdl.N, mdl.m)
        btw = []
        btv = []
        for k in range(mdl.N):
            pw, pv = self.pen_w_steps[k], self.pen_v_steps[k]
            shift = pw.B @ (self.Qinv_sqrt[k] @ mdl.x0) if k == 0 else 0.0
            btw.append(pw.b - shift)
            btv.append(pv.b - pv.B @ (self.Rinv_sqrt[k] @ self.z[k]))
        self.b_tilde_w = np.concatenate(btw)
        self.b_tilde_v = np.concatenate(btv)

    @property
    def x_tilde_0(self) -> np.ndarray:
        """Stacked vector with the initial state in the first block."""
        out = np.zeros(self.model.N * self.model.n)
        out[: self.model.n] = self.model.x0
        return out

    @cached_property
    def pen_w(self) -> PlqPenalty:
        """Process penalty composed over all steps (dimension nN)."""
        return block_compose(list(self.pen_w_steps))

    @cached_property
    def pen_v(self) -> PlqPenalty:
        """Measurement penalty composed over all steps (dimension mN)."""
        return block_compose(list(self.pen_v_steps))

    def dense_G(self) -> np.ndarray:
        """Stacked transition operator (unit diagonal, -G_k subdiagonal)."""
        N, n = self.model.N, self.model.n
        G = np.eye(N * n)
        for k in range(1, N):
            G[k * n : (k + 1) * n, (k - 1) * n : k * n] = -self.model.G_seq[k]
        return G

    def dense_H(self) -> np.ndarray:
        N, n, m = self.model.N, self.model.n, self.model.m
        H = np.zeros((N * m, N * n))
        for k in range(N):
            H[k * m : (k + 1) * m, k * n : (k + 1) * n] = self.model.H_seq[k]
        return H

    def process_residuals(self, x: np.ndarray) -> np.ndarray:
        """Whitened transition deviations, shape (N, n)."""
        x = np.asarray(x, dtype=float).reshape(self.model.N, self.model.n)
        dev = x.copy()
        dev[0] -= self.model.x0
        if self.model.N > 1:
            dev[1:] -= np.einsum("kij,kj->ki", self.model.G_seq[1:], x[:-1])
        return np.einsum("kij,kj->ki", self.Qinv_sqrt, dev)

    def measurement_residuals(self, x: np.ndarray) -> np.ndarray:
        """Whitened measurement deviations ``R^{-1/2}(H x - z)``, shape (N, m)."""
        x = np.asarray(x, dtype=float).reshape(self.model.N, self.model.n)
        dev = np.einsum("kij,kj->ki", self.model.H_seq, x) - self.z
        return np.einsum("kij,kj->ki", self.Rinv_sqrt, dev)


def build_problem(
    model: StateSpaceModel,
    process_penalty,
    measurement_penalty,
    z_seq,
) -> SmootherProblem:
    """Assemble a :class:`SmootherProblem`.

    ``process_penalty`` and ``measurement_penalty`` accept a
    :class:`PlqPenalty`, an :class:`AtomKind`, or a list of either (length 1
    or N, recycled).  Scalar penalties are applied componentwise to the
    whitened deviations.  Every per-step penalty must be finite-valued;
    otherwise the reduced interior-point systems would be singular and a
    :class:`DegeneratePenaltyError` is raised.
    """
    z = np.asarray(z_seq, dtype=float)
    if z.ndim == 1:
        z = z.reshape(-1, 1) if model.m == 1 else z.reshape(model.N, model.m)
    if z.shape != (model.N, model.m):
        raise ValueError(f"measurements must have shape ({model.N}, {model.m}), got {z.shape}")
    pen_w_steps = _expand_penalty_spec(process_penalty, model.N, model.n, "process penalty")
    pen_v_steps = _expand_penalty_spec(measurement_penalty, model.N, model.m, "measurement penalty")
    seen: set[int] = set()
    for pen in (*pen_w_steps, *pen_v_steps):
        if id(pen) in seen:
            continue
        seen.add(id(pen))
        report = check_finite(pen)
        if not report.satisfied:
            raise DegeneratePenaltyError(
                "penalty is not finite-valued: the noise density is degenerate "
                f"(null direction {report.witness})"
            )
    return SmootherProblem(
        model=model,
        pen_w_steps=pen_w_steps,
        pen_v_steps=pen_v_steps,
        Qinv_sqrt=_inv_sqrt_blocks(model.Q_seq, "Q_seq"),
        Rinv_sqrt=_inv_sqrt_blocks(model.R_seq, "R_seq"),
        z=z,
    )


def _stepwise_total(pens: tuple[PlqPenalty, ...], residuals: np.ndarray) -> float:
    """Sum of per-step penalty values, vectorized for recycled atom penalties."""
    if all(p is pens[0] for p in pens):
        cols = atom_columns(pens[0])
        if cols is not None:
            return float(
                sum(atom_values(kind, residuals[:, j]).sum() for j, kind in enumerate(cols))
            )
    return float(sum(pens[k](residuals[k]) for k in range(len(pens))))


def objective(problem: SmootherProblem, x) -> float:
    """Smoothing objective at a stacked state trajectory.

    Sums the per-step penalty values of the whitened process and measurement
    deviations; decomposability over steps is exact because the noise blocks
    are independent.
    """
    w_total = _stepwise_total(problem.pen_w_steps, problem.process_residuals(x))
    v_total = _stepwise_total(problem.pen_v_steps, problem.measurement_residuals(x))
    return w_total + v_total
