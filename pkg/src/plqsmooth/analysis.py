"""Validity checks for PLQ penalties and scalar density normalization.

``check_coercivity`` decides whether a penalty grows without bound in every
direction, the property that makes ``exp(-rho)`` integrable and the smoothing
objective well posed.  ``check_finite`` decides whether the penalty is
finite-valued everywhere, the non-degeneracy condition under which the
interior-point reduction stays invertible.  Both return a report carrying a
certifying direction when they fail.  ``normalization_constant`` integrates
``exp(-rho)`` for scalar penalties so they can be read as probability
densities.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations

import numpy as np
from scipy.integrate import quad
from scipy.linalg import null_space
from scipy.optimize import linprog

from ._qp import domain_contains
from .errors import TooComplexError, UnboundedPenaltyError
from .penalties import PlqPenalty

__all__ = [
    "ConeCheckReport",
    "cone_generators",
    "check_coercivity",
    "check_finite",
    "check_domain_membership",
    "normalization_constant",
]

_LP_TOL = 1e-9
_PSD_TOL = 1e-10
GENERATOR_BOUND = 10**4


@dataclass(frozen=True)
class ConeCheckReport:
    """Outcome of a cone condition check.

    When ``satisfied`` is False, ``witness`` is a nonzero direction
    certifying the failure (the penalty stays bounded along it for
    coercivity; a null direction of the reduced system for finiteness).
    """

    satisfied: bool
    witness: np.ndarray | None = None

    def __bool__(self) -> bool:
        return self.satisfied


def _atom_generators(p: PlqPenalty) -> np.ndarray:
    k = p.atom
    if k.tag == "l2":
        return np.array([[1.0, -1.0]])
    if k.tag == "l1":
        return np.array([[1.0, -1.0]])
    if k.tag == "huber":
        return np.array([[k.param, -k.param]])
    # vapnik: vertices of the unit square spanning its conic hull
    return np.array([[1.0, 0.0, 1.0], [0.0, 1.0, 1.0]])


def cone_generators(p: PlqPenalty, size_bound: int = GENERATOR_BOUND) -> np.ndarray:
    """Generators of the conic hull of the constraint set ``U``.

    Returns an array of shape ``(dim_u, n_generators)`` whose columns span
    ``cone(U)`` (vertices of ``U`` together with its recession rays).  Named
    atoms use hard-coded generators, compositions embed the generators of
    their blocks, and raw penalties fall back to enumeration over the
    inequality description.

    Raises
    ------
    TooComplexError
        If the enumeration would exceed ``size_bound`` candidate subsets.
    """
    if p.atom is not None:
        return _atom_generators(p)
    if p.parts is not None:
        cols = []
        offset = 0
        for part in p.parts:
            g = cone_generators(part, size_bound)
            block = np.zeros((p.dim_u, g.shape[1]))
            block[offset : offset + part.dim_u, :] = g
            cols.append(block)
            offset += part.dim_u
        gens = np.hstack(cols)
        if gens.shape[1] > size_bound:
            raise TooComplexError(
                f"{gens.shape[1]} generators exceed the bound {size_bound}"
            )
        return gens
    return _enumerate_generators(p.A, p.a, size_bound)


def _enumerate_generators(A: np.ndarray, a: np.ndarray, size_bound: int) -> np.ndarray:
    """Vertex/ray enumeration for ``U = {u : A^T u <= a}``."""
    m, ncon = A.shape
    if ncon == 0:
        eye = np.eye(m)
        return np.hstack([eye, -eye])
    gens = []
    # lineality directions of U contribute symmetric ray pairs
    L = null_space(A.T)
    for j in range(L.shape[1]):
        gens.append(L[:, j])
        gens.append(-L[:, j])
    W = null_space(L.T) if L.shape[1] else np.eye(m)
    d = W.shape[1]
    if d == 0:
        out = np.array(gens).T if gens else np.zeros((m, 0))
        return out
    budget = math.comb(ncon, d) + (math.comb(ncon, d - 1) if d >= 1 else 0)
    if budget > size_bound:
        raise TooComplexError(
            f"enumeration over {budget} constraint subsets exceeds the bound {size_bound}"
        )
    Ac = W.T @ A  # pointed polyhedron in the d coordinates: Ac^T c <= a
    scale = 1.0 + float(np.abs(a).max())
    # vertices: d active linearly independent constraints
    for S in combinations(range(ncon), d):
        sub = Ac[:, S].T
        if np.linalg.matrix_rank(sub, tol=1e-10) < d:
            continue
        try:
            c = np.linalg.solve(sub, a[list(S)])
        except np.linalg.LinAlgError:
            continue
        if np.all(Ac.T @ c <= a + 1e-8 * scale):
            gens.append(W @ c)
    # extreme rays of the recession cone: d-1 active constraints
    for S in combinations(range(ncon), d - 1):
        sub = Ac[:, S].T if S else np.zeros((0, d))
        ns = null_space(sub) if sub.size else np.eye(d)
        if ns.shape[1] != 1:
            continue
        for sgn in (1.0, -1.0):
            ray = sgn * ns[:, 0]
            if np.all(Ac.T @ ray <= 1e-10):
                gens.append(W @ ray)
    if not gens:
        return np.zeros((m, 0))
    out = np.array(gens).T
    # drop duplicate directions
    keep = []
    for j in range(out.shape[1]):
        col = out[:, j]
        nrm = np.linalg.norm(col)
        if nrm <= 1e-12:
            continue
        unit = col / nrm
        if any(np.linalg.norm(unit - u) <= 1e-9 for u in keep):
            continue
        keep.append(unit)
    return np.array(keep).T if keep else np.zeros((m, 0))


def _polar_is_zero(C: np.ndarray) -> tuple[bool, np.ndarray | None]:
    """Whether ``{d : C^T d <= 0}`` is the origin, else a nonzero member.

    Decided by maximizing ``+/- d_j`` over the cone intersected with the unit
    box; the cone is trivial iff every optimum vanishes.
    """
    dim = C.shape[0]
    if dim == 0:
        return True, None
    A_ub = C.T if C.shape[1] else None
    b_ub = np.zeros(C.shape[1]) if C.shape[1] else None
    for j in range(dim):
        for sign in (-1.0, 1.0):
            cost = np.zeros(dim)
            cost[j] = sign  # linprog minimizes, so this maximizes -sign * d_j
            res = linprog(cost, A_ub=A_ub, b_ub=b_ub, bounds=(-1.0, 1.0), method="highs")
            if res.status != 0:
                raise RuntimeError(f"polar cone LP failed (status {res.status})")
            if -res.fun > _LP_TOL:
                return False, res.x
    return True, None


def check_coercivity(p: PlqPenalty, size_bound: int = GENERATOR_BOUND) -> ConeCheckReport:
    """Decide whether the penalty diverges along every direction.

    The test is polyhedral: the penalty is coercive iff no nonzero direction
    ``d`` satisfies ``<B^T g, d> <= 0`` for every generator ``g`` of
    ``cone(U)``.  A failing direction is returned as the witness; the penalty
    is bounded along it.
    """
    gens = cone_generators(p, size_bound)
    C = p.B.T @ gens if gens.shape[1] else np.zeros((p.dim_y, 0))
    ok, witness = _polar_is_zero(C)
    return ConeCheckReport(ok, None if ok else witness)


def check_finite(p: PlqPenalty) -> ConeCheckReport:
    """Decide whether the penalty is finite-valued on the whole space.

    Checks that no nonzero null direction of ``M`` is also a recession
    direction of ``U``; equivalently, the per-block reduced matrices
    ``M + A D A^T`` (positive diagonal ``D``) are invertible.
    """
    eigval, eigvec = np.linalg.eigh(0.5 * (p.M + p.M.T))
    tol = _PSD_TOL * max(1.0, float(eigval.max(initial=0.0)))
    Z = eigvec[:, np.abs(eigval) <= tol]
    if Z.shape[1] == 0:
        return ConeCheckReport(True)
    if p.n_constraints == 0:
        return ConeCheckReport(False, Z[:, 0])
    ok, c = _polar_is_zero(Z.T @ p.A)
    return ConeCheckReport(ok, None if ok else Z @ c)


def check_domain_membership(p: PlqPenalty, y) -> bool:
    """Whether ``y`` lies in the effective domain (the dual sup is finite)."""
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if y.shape != (p.dim_y,):
        raise ValueError(f"argument must have length {p.dim_y}")
    return domain_contains(p.A, p.a, p.M, p.b + p.B @ y)


def normalization_constant(p: PlqPenalty, rel_tol: float = 1e-8) -> float:
    """Integral of ``exp(-rho)`` over the real line for a scalar penalty.

    The truncation length doubles until the linear growth estimated from the
    values at ``L/2`` and ``L`` bounds each discarded tail below ``5e-13``;
    the remaining finite integral is evaluated by adaptive quadrature.
    Points outside the effective domain contribute zero density.

    Requires a coercive penalty with ``dim_y == 1``.
    """
    if p.dim_y != 1:
        raise ValueError("normalization constants are only computed for scalar penalties")
    if not check_coercivity(p).satisfied:
        raise ValueError("penalty is not coercive; exp(-rho) is not integrable")

    def value_at(y: float) -> float:
        try:
            return p(y)
        except UnboundedPenaltyError:
            return math.inf

    L = 8.0
    while True:
        ok = True
        for side in (1.0, -1.0):
            f_half, f_full = value_at(side * L / 2), value_at(side * L)
            if math.isinf(f_full):
                continue  # zero density beyond the domain edge
            slope = (f_full - f_half) / (L / 2)
            if slope <= 0 or math.exp(-f_full) / slope > 5e-13:
                ok = False
                break
        if ok:
            break
        L *= 2.0
        if L > 2.0**30:
            raise RuntimeError("could not bound the tails of exp(-rho)")

    def density(y: float) -> float:
        v = value_at(y)
        return 0.0 if math.isinf(v) else math.exp(-v)

    value, _ = quad(density, -L, L, epsabs=1e-13, epsrel=rel_tol * 1e-2, limit=200)
    if value <= 1e-300:
        raise ValueError(
            "exp(-rho) integrates to zero: the penalty domain has no interior"
        )
    return float(value)
