"""Interior-point solver for PLQ-penalized smoothing problems.

The optimality system couples the stacked state with the dual variables of
the two penalties and the multiplier/slack pairs of their polyhedral
constraints.  A damped Newton iteration is applied to the relaxed system in
which each complementarity product ``s_i q_i`` is driven to a barrier
parameter ``mu`` that shrinks toward zero.

The Newton direction is computed by block elimination: the multiplier and
slack rows reduce to per-step matrices ``T_k = M_k + A_k diag(q/s) A_k^T``
(block diagonal because the noise blocks are independent), and the remaining
state system ``Phi = J_w^T T_w^{-1} J_w + J_v^T T_v^{-1} J_v`` is symmetric
positive definite and block tridiagonal.  Per-step work is batched across
the horizon and the state system is solved by a banded Cholesky sweep, so
the cost of one iteration is O(N n^3 + N m) with small constants.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .errors import DegeneratePenaltyError
from .linalg import _banded_factor_solve, assemble_phi
from .model import SmootherProblem, objective

__all__ = [
    "SolverOptions",
    "SmootherResult",
    "IpIterate",
    "initial_iterate",
    "kkt_residual",
    "newton_step",
    "dense_kkt_jacobian",
    "ip_solve",
    "dense_reference_solve",
]

_DENSE_SIZE_LIMIT = 200


def _batch_solve(T: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Solve a stack of small SPD systems; closed forms for 1x1 and 2x2."""
    d = T.shape[1]
    if d == 1:
        return rhs / T[:, :1]
    if d == 2:
        det = T[:, 0, 0] * T[:, 1, 1] - T[:, 0, 1] * T[:, 1, 0]
        out = np.empty_like(rhs)
        out[:, 0] = (T[:, 1, 1, None] * rhs[:, 0] - T[:, 0, 1, None] * rhs[:, 1]) / det[:, None]
        out[:, 1] = (T[:, 0, 0, None] * rhs[:, 1] - T[:, 1, 0, None] * rhs[:, 0]) / det[:, None]
        return out
    return np.linalg.solve(T, rhs)


@dataclass(frozen=True)
class SolverOptions:
    """Interior-point loop controls.

    ``step_frac`` is the fraction-to-boundary factor keeping slacks and
    multipliers strictly positive; ``mu_reduce`` multiplies the measured
    complementarity to set the next barrier parameter.
    """

    tol_mu: float = 1e-10
    tol_res: float = 1e-8
    max_iter: int = 50
    mu_reduce: float = 0.1
    step_frac: float = 0.995

    def __post_init__(self):
        if self.tol_mu <= 0 or self.tol_res <= 0:
            raise ValueError("tolerances must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")
        if not 0 < self.mu_reduce < 1:
            raise ValueError("mu_reduce must lie in (0, 1)")
        if not 0 < self.step_frac < 1:
            raise ValueError("step_frac must lie in (0, 1)")


@dataclass
class SmootherResult:
    """Solver outcome: smoothed states plus convergence diagnostics."""

    x_hat: np.ndarray
    objective_value: float
    iterations: int
    final_residual: float
    final_mu: float
    converged: bool


@dataclass
class IpIterate:
    """Primal-dual point: state, penalty duals, multipliers, slacks, barrier.

    ``s_*`` and ``q_*`` are strictly positive componentwise throughout the
    iteration; ``s_* = a - A^T u_*`` holds up to rounding.
    """

    x: np.ndarray
    u_w: np.ndarray
    u_v: np.ndarray
    q_w: np.ndarray
    s_w: np.ndarray
    q_v: np.ndarray
    s_v: np.ndarray
    mu: float


class _StackedChannel:
    """One noise channel whose per-step penalties share identical shapes.

    All per-step quantities live in stacked arrays, so every operation is a
    handful of batched numpy calls regardless of the horizon length.
    ``Bhat[k]`` maps the k-th state block into the penalty's dual pairing
    (whitening, plus the observation matrix on the measurement channel);
    ``couple[k]`` (process channel, k >= 1) carries the dependence on the
    previous state block.  ``Braw`` excludes the observation matrix and is
    what the reduced state system conjugates.
    """

    def __init__(self, pens, braw, bhat, couple, b_tilde):
        self.pens = pens
        self.N = len(pens)
        self.A = np.stack([p.A for p in pens])              # (N, du, l)
        self.M = np.stack([p.M for p in pens])              # (N, du, du)
        self.a = np.stack([p.a for p in pens])              # (N, l)
        self.Braw = np.stack(braw)                          # (N, du, dout)
        self.Bhat = np.stack(bhat)                          # (N, du, n)
        self.couple = np.stack(couple) if couple is not None else None
        self.b_tilde = b_tilde.reshape(self.N, -1)
        self.du = self.A.shape[1]
        self.l = self.A.shape[2]
        self.dim_u = self.N * self.du
        self.ncon = self.N * self.l

    def a_flat(self) -> np.ndarray:
        return self.a.reshape(-1)

    def interior_u(self) -> np.ndarray:
        for k, p in enumerate(self.pens):
            if p.u_interior is None:
                raise DegeneratePenaltyError(
                    f"penalty at step {k} has no strictly interior dual point; "
                    "the interior-point iteration cannot start"
                )
        return np.concatenate([p.u_interior for p in self.pens])

    def apply(self, x_blocks: np.ndarray) -> np.ndarray:
        out = np.einsum("kij,kj->ki", self.Bhat, x_blocks)
        if self.couple is not None and self.N > 1:
            out[1:] -= np.einsum("kij,kj->ki", self.couple[1:], x_blocks[:-1])
        return out.reshape(-1)

    def apply_T(self, y: np.ndarray) -> np.ndarray:
        yb = y.reshape(self.N, self.du)
        out = np.einsum("kij,ki->kj", self.Bhat, yb)
        if self.couple is not None and self.N > 1:
            out[:-1] -= np.einsum("kij,ki->kj", self.couple[1:], yb[1:])
        return out

    def slacks(self, u: np.ndarray) -> np.ndarray:
        ub = u.reshape(self.N, self.du)
        return (self.a - np.einsum("kij,ki->kj", self.A, ub)).reshape(-1)

    def r1(self, u: np.ndarray, s: np.ndarray) -> np.ndarray:
        ub = u.reshape(self.N, self.du)
        out = np.einsum("kij,ki->kj", self.A, ub) + s.reshape(self.N, self.l) - self.a
        return out.reshape(-1)

    def r5(self, u: np.ndarray, q: np.ndarray, x_blocks: np.ndarray) -> np.ndarray:
        ub = u.reshape(self.N, self.du)
        out = self.b_tilde + self.apply(x_blocks).reshape(self.N, self.du)
        out = out - np.einsum("kij,kj->ki", self.M, ub)
        if self.l:
            out = out - np.einsum("kij,kj->ki", self.A, q.reshape(self.N, self.l))
        return out.reshape(-1)

    def reduce(self, q, s, r1, r3, r5):
        """Factor the per-step T blocks and reduce the dual offsets."""
        T = self.M.copy()
        rp = r5.reshape(self.N, self.du).copy()
        if self.l:
            qb = q.reshape(self.N, self.l)
            sb = s.reshape(self.N, self.l)
            T += np.einsum("kil,kl,kjl->kij", self.A, qb / sb, self.A)
            rp += np.einsum(
                "kil,kl->ki",
                self.A,
                (r3.reshape(self.N, self.l) - qb * r1.reshape(self.N, self.l)) / sb,
            )
        self._check_pd(T)
        rhs = np.concatenate([self.Braw, rp[:, :, None]], axis=2)
        sol = _batch_solve(T, rhs)
        dout = self.Braw.shape[2]
        omegas = np.einsum("kil,kim->klm", self.Braw, sol[:, :, :dout])
        return {"T": T, "omegas": omegas, "rp": rp.reshape(-1),
                "tinv_rp": sol[:, :, dout].reshape(-1)}

    def _check_pd(self, T: np.ndarray) -> None:
        if self.du == 1:
            ok = T[:, 0, 0] > 0
        elif self.du == 2:
            det = T[:, 0, 0] * T[:, 1, 1] - T[:, 0, 1] * T[:, 1, 0]
            ok = (T[:, 0, 0] > 0) & (det > 0)
        else:
            try:
                np.linalg.cholesky(T)
                return
            except np.linalg.LinAlgError:
                self._raise_singular(T)
                return
        if not bool(np.all(ok)):
            k = int(np.flatnonzero(~ok)[0])
            raise DegeneratePenaltyError(
                f"reduced penalty block {k} is singular; the penalty "
                "violates the non-degeneracy condition"
            )

    def _raise_singular(self, T):
        for k in range(self.N):
            try:
                np.linalg.cholesky(T[k])
            except np.linalg.LinAlgError:
                raise DegeneratePenaltyError(
                    f"reduced penalty block {k} is singular; the penalty "
                    "violates the non-degeneracy condition"
                ) from None
        raise DegeneratePenaltyError("reduced penalty system is singular")

    def backsub(self, red, jdx, q, s, r1, r3):
        rhs = (jdx + red["rp"]).reshape(self.N, self.du)
        du = _batch_solve(red["T"], rhs[:, :, None])[:, :, 0]
        if self.l:
            qb, sb = q.reshape(self.N, self.l), s.reshape(self.N, self.l)
            r1b, r3b = r1.reshape(self.N, self.l), r3.reshape(self.N, self.l)
            atdu = np.einsum("kij,ki->kj", self.A, du)
            dq = (qb * r1b - r3b + qb * atdu) / sb
            ds = -r1b - atdu
        else:
            dq = np.zeros((self.N, 0))
            ds = np.zeros((self.N, 0))
        return du.reshape(-1), dq.reshape(-1), ds.reshape(-1)

    # slicing used by the dense assembly
    def usl(self, k):
        return slice(k * self.du, (k + 1) * self.du)

    def csl(self, k):
        return slice(k * self.l, (k + 1) * self.l)

    def step_A(self, k):
        return self.A[k]

    def step_M(self, k):
        return self.M[k]

    def step_Bhat(self, k):
        return self.Bhat[k]

    def step_couple(self, k):
        return None if self.couple is None else self.couple[k]


class _RaggedChannel:
    """Fallback channel for per-step penalties of differing shapes.

    Same contract as :class:`_StackedChannel`, with per-step loops instead of
    batched operations.
    """

    def __init__(self, pens, braw, bhat, couple, b_tilde):
        self.pens = pens
        self.N = len(pens)
        self.A = [p.A for p in pens]
        self.M = [p.M for p in pens]
        self.Braw = braw
        self.Bhat = bhat
        self.couple = couple
        self.b_tilde = b_tilde
        self.u_off = np.cumsum([0] + [p.dim_u for p in pens])
        self.c_off = np.cumsum([0] + [p.n_constraints for p in pens])
        self.dim_u = int(self.u_off[-1])
        self.ncon = int(self.c_off[-1])

    def a_flat(self) -> np.ndarray:
        return np.concatenate([p.a for p in self.pens]) if self.pens else np.zeros(0)

    def usl(self, k):
        return slice(self.u_off[k], self.u_off[k + 1])

    def csl(self, k):
        return slice(self.c_off[k], self.c_off[k + 1])

    def step_A(self, k):
        return self.A[k]

    def step_M(self, k):
        return self.M[k]

    def step_Bhat(self, k):
        return self.Bhat[k]

    def step_couple(self, k):
        return None if self.couple is None else self.couple[k]

    def interior_u(self) -> np.ndarray:
        parts = []
        for k, p in enumerate(self.pens):
            if p.u_interior is None:
                raise DegeneratePenaltyError(
                    f"penalty at step {k} has no strictly interior dual point; "
                    "the interior-point iteration cannot start"
                )
            parts.append(p.u_interior)
        return np.concatenate(parts) if parts else np.zeros(0)

    def apply(self, x_blocks: np.ndarray) -> np.ndarray:
        out = np.empty(self.dim_u)
        for k in range(self.N):
            val = self.Bhat[k] @ x_blocks[k]
            if self.couple is not None and k > 0:
                val = val - self.couple[k] @ x_blocks[k - 1]
            out[self.usl(k)] = val
        return out

    def apply_T(self, y: np.ndarray) -> np.ndarray:
        n = self.Bhat[0].shape[1]
        out = np.zeros((self.N, n))
        for k in range(self.N):
            yk = y[self.usl(k)]
            out[k] += self.Bhat[k].T @ yk
            if self.couple is not None and k > 0:
                out[k - 1] -= self.couple[k].T @ yk
        return out

    def slacks(self, u: np.ndarray) -> np.ndarray:
        s = np.empty(self.ncon)
        for k in range(self.N):
            s[self.csl(k)] = self.pens[k].a - self.A[k].T @ u[self.usl(k)]
        return s

    def r1(self, u: np.ndarray, s: np.ndarray) -> np.ndarray:
        out = np.empty(self.ncon)
        for k in range(self.N):
            usl, csl = self.usl(k), self.csl(k)
            out[csl] = self.A[k].T @ u[usl] + s[csl] - self.pens[k].a
        return out

    def r5(self, u: np.ndarray, q: np.ndarray, x_blocks: np.ndarray) -> np.ndarray:
        out = self.b_tilde + self.apply(x_blocks)
        for k in range(self.N):
            usl, csl = self.usl(k), self.csl(k)
            out[usl] -= self.M[k] @ u[usl] + self.A[k] @ q[csl]
        return out

    def reduce(self, q, s, r1, r3, r5):
        factors = []
        dout = self.Braw[0].shape[1]
        omegas = np.empty((self.N, dout, dout))
        rp = r5.copy()
        tinv_rp = np.empty_like(rp)
        for k in range(self.N):
            usl, csl = self.usl(k), self.csl(k)
            A_k = self.A[k]
            T_k = self.M[k]
            if A_k.shape[1]:
                T_k = T_k + (A_k * (q[csl] / s[csl])) @ A_k.T
                rp[usl] += A_k @ ((r3[csl] - q[csl] * r1[csl]) / s[csl])
            try:
                fac = cho_factor(T_k, lower=True)
            except np.linalg.LinAlgError:
                raise DegeneratePenaltyError(
                    f"reduced penalty block {k} is singular; the penalty "
                    "violates the non-degeneracy condition"
                ) from None
            factors.append(fac)
            sol = cho_solve(fac, np.concatenate([self.Braw[k], rp[usl][:, None]], axis=1))
            omegas[k] = self.Braw[k].T @ sol[:, :dout]
            tinv_rp[usl] = sol[:, dout]
        return {"factors": factors, "omegas": omegas, "rp": rp, "tinv_rp": tinv_rp}

    def backsub(self, red, jdx, q, s, r1, r3):
        du = np.empty(self.dim_u)
        dq = np.empty(self.ncon)
        ds = np.empty(self.ncon)
        for k in range(self.N):
            usl, csl = self.usl(k), self.csl(k)
            du[usl] = cho_solve(red["factors"][k], jdx[usl] + red["rp"][usl])
            if self.A[k].shape[1]:
                atdu = self.A[k].T @ du[usl]
                dq[csl] = (q[csl] * r1[csl] - r3[csl] + q[csl] * atdu) / s[csl]
                ds[csl] = -r1[csl] - atdu
        return du, dq, ds


def _make_channel(pens, braw, bhat, couple, b_tilde):
    shapes = {(p.dim_u, p.n_constraints) for p in pens}
    if len(shapes) == 1:
        return _StackedChannel(pens, braw, bhat, couple, b_tilde)
    return _RaggedChannel(pens, braw, bhat, couple, b_tilde)


class _Prep:
    """Problem data reorganized for the iteration loop."""

    def __init__(self, problem: SmootherProblem):
        self.problem = problem
        mdl = problem.model
        self.N, self.n, self.m = mdl.N, mdl.n, mdl.m
        braw_w, bhat_w, couple_w = [], [], []
        for k in range(mdl.N):
            br = problem.pen_w_steps[k].B @ problem.Qinv_sqrt[k]
            braw_w.append(br)
            bhat_w.append(br)
            couple_w.append(br @ mdl.G_seq[k] if k > 0 else np.zeros_like(br))
        self.w = _make_channel(
            problem.pen_w_steps, braw_w, bhat_w, couple_w, problem.b_tilde_w
        )
        braw_v, bhat_v = [], []
        for k in range(mdl.N):
            br = problem.pen_v_steps[k].B @ problem.Rinv_sqrt[k]
            braw_v.append(br)
            bhat_v.append(br @ mdl.H_seq[k])
        self.v = _make_channel(problem.pen_v_steps, braw_v, bhat_v, None, problem.b_tilde_v)
        self.ncon_total = self.w.ncon + self.v.ncon

    def initial_iterate(self) -> IpIterate:
        """Zero state, interior duals, exact slacks, unit multipliers."""
        u_w = self.w.interior_u()
        u_v = self.v.interior_u()
        s_w = self.w.slacks(u_w)
        s_v = self.v.slacks(u_v)
        if (s_w.size and s_w.min() <= 0) or (s_v.size and s_v.min() <= 0):
            raise DegeneratePenaltyError("interior dual point has non-positive slack")
        q_w = np.ones_like(s_w)
        q_v = np.ones_like(s_v)
        if self.ncon_total:
            mu = (s_w @ q_w + s_v @ q_v) / self.ncon_total
        else:
            mu = 0.0
        return IpIterate(
            x=np.zeros(self.N * self.n),
            u_w=u_w, u_v=u_v, q_w=q_w, s_w=s_w, q_v=q_v, s_v=s_v, mu=float(mu),
        )

    def residual_blocks(self, it: IpIterate) -> dict[str, np.ndarray]:
        """The seven stacked residual blocks of the relaxed system."""
        x_blocks = it.x.reshape(self.N, self.n)
        return {
            "r1w": self.w.r1(it.u_w, it.s_w),
            "r1v": self.v.r1(it.u_v, it.s_v),
            "r3w": it.q_w * it.s_w - it.mu,
            "r3v": it.q_v * it.s_v - it.mu,
            "r5w": self.w.r5(it.u_w, it.q_w, x_blocks),
            "r5v": self.v.r5(it.u_v, it.q_v, x_blocks),
            "r7": (self.w.apply_T(it.u_w) + self.v.apply_T(it.u_v)).ravel(),
        }

    def newton(self, it: IpIterate, r: dict[str, np.ndarray] | None = None) -> dict[str, np.ndarray]:
        """Exact Newton direction via the structured elimination."""
        if r is None:
            r = self.residual_blocks(it)
        red_w = self.w.reduce(it.q_w, it.s_w, r["r1w"], r["r3w"], r["r5w"])
        red_v = self.v.reduce(it.q_v, it.s_v, r["r1v"], r["r3v"], r["r5v"])
        phi = assemble_phi(
            red_w["omegas"], red_v["omegas"],
            self.problem.model.G_seq, self.problem.model.H_seq,
        )
        rhs = -(
            r["r7"].reshape(self.N, self.n)
            + self.w.apply_T(red_w["tinv_rp"])
            + self.v.apply_T(red_v["tinv_rp"])
        )
        dx = _banded_factor_solve(phi, rhs.ravel())
        dx_blocks = dx.reshape(self.N, self.n)
        deltas = {"x": dx}
        for tag, ch, red, q, s in (
            ("w", self.w, red_w, it.q_w, it.s_w),
            ("v", self.v, red_v, it.q_v, it.s_v),
        ):
            jdx = ch.apply(dx_blocks)
            du, dq, ds = ch.backsub(red, jdx, q, s, r[f"r1{tag}"], r[f"r3{tag}"])
            deltas[f"u_{tag}"] = du
            deltas[f"q_{tag}"] = dq
            deltas[f"s_{tag}"] = ds
        return deltas


def initial_iterate(problem: SmootherProblem) -> IpIterate:
    """Strictly feasible starting point for the interior-point iteration."""
    return _Prep(problem).initial_iterate()


def kkt_residual(problem: SmootherProblem, it: IpIterate) -> np.ndarray:
    """Stacked residual of the relaxed optimality system at an iterate.

    Blocks, in order: the two constraint residuals ``A^T u + s - a``, the two
    relaxed complementarity residuals ``q * s - mu``, the two dual
    stationarity residuals ``b~ + J x - M u - A q``, and the state
    stationarity residual ``J_w^T u_w + J_v^T u_v``.  All products are
    evaluated blockwise, in O(N) block operations.
    """
    prep = _Prep(problem)
    r = prep.residual_blocks(it)
    return np.concatenate(
        [r["r1w"], r["r1v"], r["r3w"], r["r3v"], r["r5w"], r["r5v"], r["r7"]]
    )


def newton_step(problem: SmootherProblem, it: IpIterate) -> dict[str, np.ndarray]:
    """Newton direction on the relaxed system at the given iterate.

    Returns the direction for each unknown block under keys ``x``, ``u_w``,
    ``u_v``, ``q_w``, ``q_v``, ``s_w``, ``s_v``.
    """
    return _Prep(problem).newton(it)


def _dense_channel(ch, N: int, n: int):
    """Dense A, M and state map of one channel (small problems only)."""
    A = np.zeros((ch.dim_u, ch.ncon))
    M = np.zeros((ch.dim_u, ch.dim_u))
    J = np.zeros((ch.dim_u, N * n))
    for k in range(N):
        usl, csl = ch.usl(k), ch.csl(k)
        A[usl, csl] = ch.step_A(k)
        M[usl, usl] = ch.step_M(k)
        J[usl, k * n : (k + 1) * n] = ch.step_Bhat(k)
        couple = ch.step_couple(k)
        if couple is not None and k > 0:
            J[usl, (k - 1) * n : k * n] = -couple
    return A, M, J


def dense_kkt_jacobian(problem: SmootherProblem, it: IpIterate) -> np.ndarray:
    """Fully assembled derivative matrix of the relaxed system.

    Unknown ordering ``(s_w, s_v, q_w, q_v, u_w, u_v, x)`` matching the
    residual block ordering of :func:`kkt_residual`.  Quadratic-size object;
    intended for verification and the dense reference path.
    """
    prep = _Prep(problem)
    return _dense_jacobian_from_prep(prep, it)


def _dense_jacobian_from_prep(prep: _Prep, it: IpIterate) -> np.ndarray:
    N, n = prep.N, prep.n
    Aw, Mw, Jw = _dense_channel(prep.w, N, n)
    Av, Mv, Jv = _dense_channel(prep.v, N, n)
    cw, cv = prep.w.ncon, prep.v.ncon
    uw, uv = prep.w.dim_u, prep.v.dim_u
    nx = N * n
    sizes = [cw, cv, cw, cv, uw, uv, nx]
    off = np.cumsum([0] + sizes)
    F = np.zeros((off[-1], off[-1]))

    def put(i, j, block):
        F[off[i] : off[i + 1], off[j] : off[j + 1]] = block

    put(0, 0, np.eye(cw)); put(0, 4, Aw.T)
    put(1, 1, np.eye(cv)); put(1, 5, Av.T)
    put(2, 0, np.diag(it.q_w)); put(2, 2, np.diag(it.s_w))
    put(3, 1, np.diag(it.q_v)); put(3, 3, np.diag(it.s_v))
    put(4, 2, -Aw); put(4, 4, -Mw); put(4, 6, Jw)
    put(5, 3, -Av); put(5, 5, -Mv); put(5, 6, Jv)
    put(6, 4, Jw.T); put(6, 5, Jv.T)
    return F


def _unpack_dense_direction(prep: _Prep, vec: np.ndarray) -> dict[str, np.ndarray]:
    cw, cv = prep.w.ncon, prep.v.ncon
    uw, uv = prep.w.dim_u, prep.v.dim_u
    off = np.cumsum([0, cw, cv, cw, cv, uw, uv, prep.N * prep.n])
    return {
        "s_w": vec[off[0] : off[1]],
        "s_v": vec[off[1] : off[2]],
        "q_w": vec[off[2] : off[3]],
        "q_v": vec[off[3] : off[4]],
        "u_w": vec[off[4] : off[5]],
        "u_v": vec[off[5] : off[6]],
        "x": vec[off[6] : off[7]],
    }


def _step_length(it: IpIterate, d: dict[str, np.ndarray], step_frac: float) -> float:
    """Fraction-to-boundary damping shared by all blocks."""
    alpha_max = np.inf
    for cur, delta in (
        (it.s_w, d["s_w"]), (it.q_w, d["q_w"]),
        (it.s_v, d["s_v"]), (it.q_v, d["q_v"]),
    ):
        neg = delta < 0
        if np.any(neg):
            alpha_max = min(alpha_max, float(np.min(step_frac * cur[neg] / -delta[neg])))
    return min(1.0, step_frac * alpha_max)


def _advance(prep: _Prep, it: IpIterate, d: dict[str, np.ndarray], alpha: float) -> IpIterate:
    new = IpIterate(
        x=it.x + alpha * d["x"],
        u_w=it.u_w + alpha * d["u_w"],
        u_v=it.u_v + alpha * d["u_v"],
        q_w=it.q_w + alpha * d["q_w"],
        s_w=it.s_w + alpha * d["s_w"],
        q_v=it.q_v + alpha * d["q_v"],
        s_v=it.s_v + alpha * d["s_v"],
        mu=it.mu,
    )
    # the constraint rows are linear, so the step keeps them satisfied up to
    # rounding; refresh the slacks exactly whenever that preserves interiority
    for ch, u, s_name in ((prep.w, new.u_w, "s_w"), (prep.v, new.u_v, "s_v")):
        if ch.ncon == 0:
            continue
        exact = ch.slacks(u)
        if exact.min() > 0:
            setattr(new, s_name, exact)
    return new


def _complementarity(it: IpIterate) -> tuple[float, float]:
    """(total, max) of the slack-multiplier products."""
    total = float(it.s_w @ it.q_w + it.s_v @ it.q_v)
    parts = [p for p in (it.s_w * it.q_w, it.s_v * it.q_v) if p.size]
    peak = max((float(p.max()) for p in parts), default=0.0)
    return total, peak


def _solve_loop(
    problem: SmootherProblem, opts: SolverOptions, dense: bool
) -> tuple[SmootherResult, IpIterate]:
    prep = _Prep(problem)
    it = prep.initial_iterate()
    ltot = prep.ncon_total
    iterations = 0
    converged = False
    res_inf = np.inf
    while True:
        r = prep.residual_blocks(it)
        # the unrelaxed residual differs only in the complementarity blocks,
        # which are exactly the positive products s * q
        comp_w = r["r3w"] + it.mu
        comp_v = r["r3v"] + it.mu
        res_inf = max(
            max(float(np.abs(r[key]).max()) if r[key].size else 0.0
                for key in ("r1w", "r1v", "r5w", "r5v", "r7")),
            float(comp_w.max()) if comp_w.size else 0.0,
            float(comp_v.max()) if comp_v.size else 0.0,
        )
        comp_max = max(
            float(comp_w.max()) if comp_w.size else 0.0,
            float(comp_v.max()) if comp_v.size else 0.0,
        )
        if res_inf <= opts.tol_res and it.mu <= opts.tol_mu and comp_max <= 10 * opts.tol_mu:
            converged = True
            break
        if iterations >= opts.max_iter:
            break
        if dense:
            F = _dense_jacobian_from_prep(prep, it)
            rhs = -np.concatenate(
                [r["r1w"], r["r1v"], r["r3w"], r["r3v"], r["r5w"], r["r5v"], r["r7"]]
            )
            d = _unpack_dense_direction(prep, np.linalg.solve(F, rhs))
        else:
            d = prep.newton(it, r)
        alpha = _step_length(it, d, opts.step_frac)
        it = _advance(prep, it, d, alpha)
        iterations += 1
        if ltot:
            total, _ = _complementarity(it)
            it.mu = opts.mu_reduce * total / ltot
        else:
            it.mu = 0.0
    result = SmootherResult(
        x_hat=it.x.reshape(prep.N, prep.n).copy(),
        objective_value=objective(problem, it.x),
        iterations=iterations,
        final_residual=res_inf,
        final_mu=it.mu,
        converged=converged,
    )
    return result, it


def ip_solve(problem: SmootherProblem, opts: SolverOptions | None = None) -> SmootherResult:
    """Solve the smoothing problem by the structured interior-point method.

    Exhausting ``max_iter`` returns a result with ``converged=False`` rather
    than raising; degenerate penalties (singular reduced blocks) raise
    :class:`DegeneratePenaltyError`.
    """
    return _solve_loop(problem, opts or SolverOptions(), dense=False)[0]


def dense_reference_solve(
    problem: SmootherProblem, opts: SolverOptions | None = None
) -> SmootherResult:
    """Reference solver: identical iteration, dense Jacobian solves.

    Exploits no structure, so it is limited to small problems
    (``n*N <= 200``); used to validate the structured path.
    """
    if problem.model.N * problem.model.n > _DENSE_SIZE_LIMIT:
        raise ValueError(
            f"dense reference solve limited to n*N <= {_DENSE_SIZE_LIMIT}"
        )
    return _solve_loop(problem, opts or SolverOptions(), dense=True)[0]
