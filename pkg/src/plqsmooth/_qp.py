"""Dense routines for maximizing concave quadratics over polyhedra.

Everything works on the inequality description ``U = {u : A^T u <= a}`` with
``A`` of shape ``(m, n_con)``, so constraint ``i`` reads ``<A[:, i], u> <= a[i]``.
The problems are tiny (one noise block at a time), hence dense numpy
throughout.

:class:`DualSupSolver` preprocesses a fixed ``(A, a, M)`` triple once (affine
hull of ``U``, flat directions of the quadratic, recession prechecks) and
then evaluates ``sup_{u in U} <u, w> - 0.5 u^T M u`` for many ``w`` by a
log-barrier Newton method with no further linear programs.  The module-level
helpers :func:`sup_linear_quadratic` and :func:`domain_contains` wrap it for
one-shot use.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import cho_factor, cho_solve, null_space
from scipy.optimize import linprog

from .errors import UnboundedPenaltyError

_FEAS_TOL = 1e-9


def _drop_null_rows(A: np.ndarray, a: np.ndarray, tol: float = _FEAS_TOL):
    """Remove constraints with an (almost) zero normal vector.

    A zero row is vacuous when its right-hand side is nonnegative and makes
    the polyhedron empty otherwise.
    """
    if A.shape[1] == 0:
        return A, a
    norms = np.linalg.norm(A, axis=0)
    scale = max(1.0, norms.max())
    null = norms <= tol * scale
    if np.any(a[null] < -tol * (1.0 + np.abs(a[null]))):
        raise ValueError("polyhedron is empty: a zero constraint row has a negative bound")
    return A[:, ~null], a[~null]


def chebyshev_point(A: np.ndarray, a: np.ndarray):
    """Feasible point of ``U`` and the inscribed-ball radius, capped at 1.

    A negative radius certifies emptiness.  Unconstrained polyhedra return
    the origin with radius 1.
    """
    A, a = _drop_null_rows(A, a)
    m, ncon = A.shape
    if ncon == 0:
        return np.zeros(m), 1.0
    norms = np.linalg.norm(A, axis=0)
    cost = np.zeros(m + 1)
    cost[-1] = -1.0
    A_ub = np.hstack([A.T, norms[:, None]])
    bounds = [(None, None)] * m + [(None, 1.0)]
    res = linprog(cost, A_ub=A_ub, b_ub=a, bounds=bounds, method="highs")
    if res.status != 0 or res.x is None:
        raise ValueError(f"polyhedron feasibility LP failed (status {res.status})")
    return res.x[:m], float(res.x[m])


def polyhedron_is_nonempty(A: np.ndarray, a: np.ndarray, tol: float = _FEAS_TOL) -> bool:
    try:
        _, radius = chebyshev_point(A, a)
    except ValueError:
        return False
    return radius >= -tol


def strict_interior_point(A: np.ndarray, a: np.ndarray, tol: float = _FEAS_TOL):
    """A point with all constraint slacks strictly positive, or None."""
    A2, a2 = _drop_null_rows(A, a)
    u0, radius = chebyshev_point(A2, a2)
    if radius < -tol:
        raise ValueError("polyhedron is empty")
    return u0 if radius > tol else None


def _implicit_equalities(A: np.ndarray, a: np.ndarray, u0: np.ndarray, tol: float):
    """Constraints tight on the whole polyhedron, among those tight at u0."""
    m = A.shape[0]
    slack0 = a - A.T @ u0
    candidates = np.flatnonzero(slack0 <= tol)
    eq = []
    for i in candidates:
        res = linprog(
            A[:, i], A_ub=A.T, b_ub=a, bounds=[(None, None)] * m, method="highs"
        )
        if res.status == 3:  # slack unbounded, certainly not an equality
            continue
        if res.status != 0:
            raise RuntimeError(f"implicit-equality LP failed (status {res.status})")
        if res.fun >= a[i] - tol:
            eq.append(i)
    return np.asarray(eq, dtype=int)


def _interior_parametrization(A: np.ndarray, a: np.ndarray, tol: float = _FEAS_TOL):
    """Affine hull reduction ``u = u_p + V t`` onto a full-dimensional polyhedron.

    Returns ``(u_p, V, Ar, ar, t0)`` where ``{t : Ar^T t <= ar}`` has the
    strictly interior point ``t0`` (a ``V`` with zero columns indicates a
    single point).  Polyhedra lying in a proper affine subspace are handled
    by repeatedly splitting off implicit equality constraints.
    """
    m = A.shape[0]
    u_p = np.zeros(m)
    V = np.eye(m)
    Ar, ar = _drop_null_rows(A, a)
    for _ in range(m + 1):
        d = V.shape[1]
        if d == 0:
            return u_p, V, np.zeros((0, 0)), np.zeros(0), np.zeros(0)
        if Ar.shape[1] == 0:
            return u_p, V, Ar, ar, np.zeros(d)
        t0, radius = chebyshev_point(Ar, ar)
        scale = 1.0 + float(np.abs(ar).max()) if ar.size else 1.0
        if radius < -tol * scale:
            raise ValueError("polyhedron is empty")
        if radius > tol * scale:
            return u_p, V, Ar, ar, t0
        eq = _implicit_equalities(Ar, ar, t0, 10 * tol * scale)
        if eq.size == 0:
            raise RuntimeError(
                "could not certify the affine hull of a flat polyhedron; "
                "constraint data is numerically inconsistent"
            )
        keep = np.setdiff1d(np.arange(Ar.shape[1]), eq)
        Aeq = Ar[:, eq]
        t_part, *_ = np.linalg.lstsq(Aeq.T, ar[eq], rcond=None)
        W = null_space(Aeq.T)
        u_p = u_p + V @ t_part
        ar = ar[keep] - Ar[:, keep].T @ t_part
        Ar = W.T @ Ar[:, keep] if W.shape[1] else np.zeros((0, keep.size))
        Ar, ar = _drop_null_rows(Ar, ar)
        V = V @ W
    raise RuntimeError("affine hull reduction did not terminate")


def _cone_is_trivial(C: np.ndarray, tol: float = _FEAS_TOL) -> bool:
    """Whether ``{c : C c <= 0}`` is the origin (``C`` of shape (n_con, k))."""
    k = C.shape[1]
    if k == 0:
        return True
    if C.shape[0] == 0:
        return False
    for j in range(k):
        for sign in (1.0, -1.0):
            cost = np.zeros(k)
            cost[j] = sign
            res = linprog(cost, A_ub=C, b_ub=np.zeros(C.shape[0]),
                          bounds=(-1.0, 1.0), method="highs")
            if res.status != 0:
                raise RuntimeError(f"recession cone LP failed (status {res.status})")
            if -res.fun > tol:
                return False
    return True


class DualSupSolver:
    """Evaluator of ``sup_{u in U} <u, w> - 0.5 u^T M u`` for fixed data.

    Construction performs all the ``w``-independent work: parametrize the
    affine hull of ``U`` so the reduced polyhedron is full-dimensional,
    split off the directions along which the quadratic is flat and every
    constraint is blind (the supremum is finite only if ``w`` has no
    component there), and decide once whether the remaining recession cone
    can ever cause unboundedness.  Each :meth:`value` call is then a few
    matrix-vector products plus a barrier Newton solve.
    """

    def __init__(self, A: np.ndarray, a: np.ndarray, M: np.ndarray):
        A = np.asarray(A, dtype=float)
        a = np.asarray(a, dtype=float)
        M = np.asarray(M, dtype=float)
        A, a = _drop_null_rows(A, a)
        self.M = M
        u_p, V, Ar, ar, t0 = _interior_parametrization(A, a)
        self.u_p = u_p
        self.Mu_p = M @ u_p
        self.quad_const = 0.5 * float(u_p @ self.Mu_p)
        self.point_only = V.shape[1] == 0
        if self.point_only:
            return
        Mr = V.T @ M @ V
        Z = null_space(np.vstack([Mr, Ar.T]))
        if Z.shape[1]:
            self.flat_map = (V @ Z).T          # slopes along flat directions
            W2 = null_space(Z.T)
            if W2.shape[1] == 0:
                self.point_only = True  # value is constant on the domain
                return
            self.reduce_map = (V @ W2).T       # w -> reduced linear term
            self.M2 = W2.T @ Mr @ W2
            self.A2 = W2.T @ Ar
            self.t0 = W2.T @ t0
        else:
            self.flat_map = np.zeros((0, A.shape[0]))
            self.reduce_map = V.T
            self.M2 = Mr
            self.A2 = Ar
            self.t0 = t0
        self.a2 = ar
        NM = null_space(self.M2)
        self.NM = NM
        if NM.shape[1] == 0:
            self.recession_safe = True
        elif self.A2.shape[1] == 0:
            self.recession_safe = False
        else:
            self.recession_safe = _cone_is_trivial(self.A2.T @ NM)
        if self.A2.shape[1] == 0:
            # no constraints left: M2 is positive definite by construction
            self.M2_factor = cho_factor(self.M2, lower=True)

    def _reduce(self, w: np.ndarray):
        """Constant term and reduced linear term at ``w``; domain checks."""
        const = float(w @ self.u_p) - self.quad_const
        if self.point_only:
            return const, None
        shifted = w - self.Mu_p
        tol = _FEAS_TOL * (1.0 + float(np.abs(shifted).max(initial=0.0)))
        if self.flat_map.shape[0]:
            if np.any(np.abs(self.flat_map @ shifted) > tol):
                raise UnboundedPenaltyError("argument outside the penalty domain")
        w2 = self.reduce_map @ shifted
        if not self.recession_safe:
            slope = self.NM.T @ w2
            if self.A2.shape[1] == 0:
                if np.any(np.abs(slope) > tol):
                    raise UnboundedPenaltyError("argument outside the penalty domain")
            else:
                res = linprog(
                    -slope,
                    A_ub=self.A2.T @ self.NM,
                    b_ub=np.zeros(self.A2.shape[1]),
                    bounds=(-1.0, 1.0),
                    method="highs",
                )
                if res.status != 0:
                    raise RuntimeError(f"recession LP failed (status {res.status})")
                if -res.fun > tol:
                    raise UnboundedPenaltyError("argument outside the penalty domain")
        return const, w2

    def contains(self, w: np.ndarray) -> bool:
        """Whether the supremum is finite at ``w``."""
        try:
            self._reduce(np.asarray(w, dtype=float))
        except UnboundedPenaltyError:
            return False
        return True

    def value(self, w: np.ndarray, gap_tol: float = 1e-10, mu_reduce: float = 0.1) -> float:
        """The supremum at ``w``; raises UnboundedPenaltyError if infinite."""
        const, w2 = self._reduce(np.asarray(w, dtype=float))
        if w2 is None or w2.size == 0:
            return const
        if self.A2.shape[1] == 0:
            t = cho_solve(self.M2_factor, w2)
            return const + 0.5 * float(w2 @ t)
        return const + _barrier_maximize(
            self.A2, self.a2, self.M2, w2, self.t0, gap_tol, mu_reduce
        )


def sup_linear_quadratic(
    A: np.ndarray,
    a: np.ndarray,
    M: np.ndarray,
    w: np.ndarray,
    gap_tol: float = 1e-10,
    mu_reduce: float = 0.1,
) -> float:
    """One-shot evaluation of ``sup_{u : A^T u <= a} <u, w> - 0.5 u^T M u``.

    Raises
    ------
    UnboundedPenaltyError
        If the supremum is ``+inf`` (``w`` outside the effective domain).
    """
    return DualSupSolver(A, a, M).value(w, gap_tol=gap_tol, mu_reduce=mu_reduce)


def domain_contains(A: np.ndarray, a: np.ndarray, M: np.ndarray, w: np.ndarray) -> bool:
    """Whether ``sup_{u in U} <u, w> - 0.5 u^T M u`` is finite."""
    return DualSupSolver(A, a, M).contains(w)


def _barrier_maximize(
    A: np.ndarray,
    a: np.ndarray,
    M: np.ndarray,
    w: np.ndarray,
    t0: np.ndarray,
    gap_tol: float,
    mu_reduce: float,
) -> float:
    """Maximize ``<w,t> - 0.5 t^T M t`` over ``A^T t <= a`` from interior t0."""
    ncon = a.size
    t = np.array(t0, dtype=float)

    def quad(t):
        return float(w @ t - 0.5 * t @ M @ t)

    mu = max(1.0, float(np.abs(w).max(initial=0.0)))
    while True:
        for _ in range(60):
            s = a - A.T @ t
            grad = w - M @ t - A @ (mu / s)
            if np.abs(grad).max() <= 1e-9 * max(1.0, mu):
                break
            H = M + (A * (mu / s**2)) @ A.T
            try:
                dt = np.linalg.solve(H, grad)
            except np.linalg.LinAlgError:
                dt, *_ = np.linalg.lstsq(H, grad, rcond=None)
            # fraction to boundary, then backtrack on the barrier objective
            step = A.T @ dt
            shrinking = step > 0
            alpha = 1.0
            if np.any(shrinking):
                alpha = min(1.0, 0.995 * float(np.min(s[shrinking] / step[shrinking])))
            f0 = quad(t) + mu * float(np.log(s).sum())
            for _ in range(40):
                tn = t + alpha * dt
                sn = a - A.T @ tn
                if np.all(sn > 0):
                    fn = quad(tn) + mu * float(np.log(sn).sum())
                    if fn >= f0 - 1e-12 * (1.0 + abs(f0)):
                        break
                alpha *= 0.5
            else:
                break  # no acceptable step at this mu; tighten mu instead
            t = tn
        if mu * ncon <= gap_tol:
            return quad(t)
        mu *= mu_reduce
