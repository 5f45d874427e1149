"""Piecewise linear-quadratic (PLQ) penalties.

A penalty is the support-style dual form

    rho(y) = sup_{u in U} <u, b + B y> - 0.5 u^T M u,
    U = {u : A^T u <= a},

with ``M`` positive semidefinite and ``B`` injective.  Squared loss, absolute
loss, the Huber loss and the epsilon-insensitive (deadzone-linear) loss are
all instances; :func:`block_compose` stacks penalties on independent
sub-vectors into one penalty on the concatenated vector.

Two evaluators are provided.  :func:`eval_closed_form` uses the piecewise
formulas and is only available for penalties built from the named atoms;
:func:`eval_dual_sup` computes the defining supremum numerically and works
for any penalty, at the price of solving a small concave QP per call.
"""

from __future__ import annotations

from dataclasses import InitVar, dataclass, field

import numpy as np

from . import _qp
from .errors import UnboundedPenaltyError

__all__ = [
    "AtomKind",
    "PlqPenalty",
    "make_atom",
    "block_compose",
    "eval_closed_form",
    "eval_dual_sup",
    "l2",
    "l1",
    "huber",
    "vapnik",
]

TOL_PSD = 1e-10
TOL_RANK = 1e-12

_ATOM_TAGS = ("l2", "l1", "huber", "vapnik")


@dataclass(frozen=True)
class AtomKind:
    """Named scalar penalty: ``l2``, ``l1`` (scale), ``huber`` (kappa) or
    ``vapnik`` (epsilon).  The parameter must be positive; it is ignored for
    ``l2``."""

    tag: str
    param: float = 1.0

    def __post_init__(self):
        if self.tag not in _ATOM_TAGS:
            raise ValueError(f"unknown atom tag {self.tag!r}; expected one of {_ATOM_TAGS}")
        if not self.param > 0:
            raise ValueError(f"atom parameter must be positive, got {self.param}")


@dataclass(frozen=True, eq=False)
class PlqPenalty:
    """A PLQ penalty in dual form ``(A, a, M, b, B)``.

    Shapes: ``A`` is ``(dim_u, n_constraints)`` (``n_constraints`` may be 0,
    meaning ``U`` is the whole space), ``a`` is ``(n_constraints,)``, ``M`` is
    ``(dim_u, dim_u)``, ``b`` is ``(dim_u,)`` and ``B`` is ``(dim_u, dim_y)``.

    Construction validates the structural requirements: ``M`` symmetric
    positive semidefinite, ``B`` injective, ``U`` nonempty and the base
    offset ``b`` inside the effective domain of the dual sup.  Instances are
    immutable and safe to share between threads; both evaluators are pure.

    ``atom`` records which named atom produced the penalty and ``parts``
    records the blocks of a composition; either enables the closed-form
    evaluator.  ``u_interior`` is a strictly feasible point of ``U`` (``None``
    when ``U`` has an empty interior), used to start interior-point solves.
    """

    A: np.ndarray
    a: np.ndarray
    M: np.ndarray
    b: np.ndarray
    B: np.ndarray
    atom: AtomKind | None = None
    parts: tuple["PlqPenalty", ...] | None = None
    u_interior: np.ndarray | None = field(default=None)
    validate: InitVar[bool] = True

    def __post_init__(self, validate: bool):
        for name in ("A", "a", "M", "b", "B"):
            arr = np.asarray(getattr(self, name), dtype=float)
            object.__setattr__(self, name, arr)
        dim_u = self.M.shape[0]
        if self.A.ndim != 2 or self.A.shape[0] != dim_u:
            raise ValueError(f"A must be (dim_u, n_constraints), got {self.A.shape}")
        if self.a.shape != (self.A.shape[1],):
            raise ValueError("a must have one entry per constraint column of A")
        if self.M.shape != (dim_u, dim_u):
            raise ValueError("M must be square")
        if self.b.shape != (dim_u,):
            raise ValueError("b must have length dim_u")
        if self.B.ndim != 2 or self.B.shape[0] != dim_u:
            raise ValueError(f"B must be (dim_u, dim_y), got {self.B.shape}")
        if validate:
            self._check_structure()
        if self.u_interior is None:
            object.__setattr__(self, "u_interior", _qp.strict_interior_point(self.A, self.a))
        else:
            object.__setattr__(
                self, "u_interior", np.asarray(self.u_interior, dtype=float)
            )

    def _check_structure(self):
        sym_err = np.abs(self.M - self.M.T).max(initial=0.0)
        if sym_err > TOL_PSD * (1.0 + np.abs(self.M).max(initial=0.0)):
            raise ValueError("M must be symmetric")
        eigs = np.linalg.eigvalsh(0.5 * (self.M + self.M.T))
        if eigs.size and eigs[0] < -TOL_PSD * max(1.0, eigs[-1]):
            raise ValueError("M must be positive semidefinite")
        svals = np.linalg.svd(self.B, compute_uv=False)
        if svals.size == 0 or svals[-1] <= TOL_RANK * svals[0]:
            raise ValueError("B must have a trivial null space")
        if not _qp.polyhedron_is_nonempty(self.A, self.a):
            raise ValueError("constraint polyhedron U is empty")
        if not _dual_solver(self).contains(self.b):
            raise ValueError("offset b lies outside the domain of the dual sup")

    @property
    def dim_u(self) -> int:
        return self.M.shape[0]

    @property
    def dim_y(self) -> int:
        return self.B.shape[1]

    @property
    def n_constraints(self) -> int:
        return self.A.shape[1]

    def __call__(self, y) -> float:
        """Evaluate the penalty, preferring closed forms where available."""
        if self.atom is not None:
            return _atom_value(self.atom, y)
        if self.parts is not None:
            y = np.atleast_1d(np.asarray(y, dtype=float))
            total, start = 0.0, 0
            for part in self.parts:
                total += part(y[start : start + part.dim_y])
                start += part.dim_y
            return total
        return eval_dual_sup(self, y)

    def __repr__(self):
        tag = self.atom.tag if self.atom is not None else ("composite" if self.parts else "plq")
        return (
            f"PlqPenalty({tag}, dim_u={self.dim_u}, dim_y={self.dim_y}, "
            f"n_constraints={self.n_constraints})"
        )


def make_atom(kind: AtomKind) -> PlqPenalty:
    """Build the dual-form data of a named scalar atom.

    - ``l2``:     no constraints, ``M = 1``, ``b = 0``, ``B = 1``.
    - ``l1(s)``:  ``U = [-1, 1]``, ``M = 0``, ``b = 0``, ``B = s``.
    - ``huber(K)``:   ``U = [-K, K]``, ``M = 1``, ``b = 0``, ``B = 1``.
    - ``vapnik(eps)``: ``U = [0, 1]^2``, ``M = 0``, ``b = (-eps, -eps)``,
      ``B = (1, -1)^T``.
    """
    if not isinstance(kind, AtomKind):
        kind = AtomKind(*kind) if isinstance(kind, tuple) else AtomKind(kind)
    tag, p = kind.tag, float(kind.param)
    if tag == "l2":
        data = dict(
            A=np.zeros((1, 0)), a=np.zeros(0), M=np.ones((1, 1)),
            b=np.zeros(1), B=np.ones((1, 1)), u_interior=np.zeros(1),
        )
    elif tag == "l1":
        data = dict(
            A=np.array([[1.0, -1.0]]), a=np.array([1.0, 1.0]),
            M=np.zeros((1, 1)), b=np.zeros(1), B=np.array([[p]]),
            u_interior=np.zeros(1),
        )
    elif tag == "huber":
        data = dict(
            A=np.array([[1.0, -1.0]]), a=np.array([p, p]),
            M=np.ones((1, 1)), b=np.zeros(1), B=np.ones((1, 1)),
            u_interior=np.zeros(1),
        )
    else:  # vapnik
        data = dict(
            A=np.array([[1.0, 0.0, -1.0, 0.0], [0.0, 1.0, 0.0, -1.0]]),
            a=np.array([1.0, 1.0, 0.0, 0.0]),
            M=np.zeros((2, 2)), b=np.array([-p, -p]),
            B=np.array([[1.0], [-1.0]]),
            u_interior=np.array([0.5, 0.5]),
        )
    return PlqPenalty(atom=kind, **data)


def l2() -> PlqPenalty:
    return make_atom(AtomKind("l2"))


def l1(scale: float = 1.0) -> PlqPenalty:
    return make_atom(AtomKind("l1", scale))


def huber(kappa: float) -> PlqPenalty:
    return make_atom(AtomKind("huber", kappa))


def vapnik(epsilon: float) -> PlqPenalty:
    return make_atom(AtomKind("vapnik", epsilon))


def block_compose(parts: list[PlqPenalty] | tuple[PlqPenalty, ...]) -> PlqPenalty:
    """Penalty on the concatenated argument equal to the sum of the parts.

    The dual data is block diagonal in ``A``, ``M`` and ``B`` with
    concatenated ``a`` and ``b``; independence of the blocks keeps every
    downstream per-block structure (e.g. the reduced interior-point systems)
    block diagonal as well.
    """
    parts = tuple(parts)
    if not parts:
        raise ValueError("block_compose requires at least one penalty")
    if len(parts) == 1:
        return parts[0]
    dim_u = sum(p.dim_u for p in parts)
    dim_y = sum(p.dim_y for p in parts)
    ncon = sum(p.n_constraints for p in parts)
    A = np.zeros((dim_u, ncon))
    M = np.zeros((dim_u, dim_u))
    B = np.zeros((dim_u, dim_y))
    a = np.concatenate([p.a for p in parts])
    b = np.concatenate([p.b for p in parts])
    iu = ic = iy = 0
    for p in parts:
        A[iu : iu + p.dim_u, ic : ic + p.n_constraints] = p.A
        M[iu : iu + p.dim_u, iu : iu + p.dim_u] = p.M
        B[iu : iu + p.dim_u, iy : iy + p.dim_y] = p.B
        iu += p.dim_u
        ic += p.n_constraints
        iy += p.dim_y
    interiors = [p.u_interior for p in parts]
    u_int = None if any(v is None for v in interiors) else np.concatenate(interiors)
    # parts are already validated; the blockwise construction preserves every
    # structural invariant, so skip the (potentially large) re-validation
    return PlqPenalty(
        A=A, a=a, M=M, b=b, B=B, parts=parts, u_interior=u_int, validate=False
    )


def _atom_value(kind: AtomKind, y) -> float:
    y = float(np.atleast_1d(np.asarray(y, dtype=float))[0])
    p = kind.param
    if kind.tag == "l2":
        return 0.5 * y * y
    if kind.tag == "l1":
        return p * abs(y)
    if kind.tag == "huber":
        if abs(y) <= p:
            return 0.5 * y * y
        return p * abs(y) - 0.5 * p * p
    return max(abs(y) - p, 0.0)  # vapnik


def atom_values(kind: AtomKind, y: np.ndarray) -> np.ndarray:
    """Closed-form atom values over an array of scalar arguments."""
    y = np.asarray(y, dtype=float)
    p = kind.param
    if kind.tag == "l2":
        return 0.5 * y * y
    if kind.tag == "l1":
        return p * np.abs(y)
    if kind.tag == "huber":
        ay = np.abs(y)
        return np.where(ay <= p, 0.5 * y * y, p * ay - 0.5 * p * p)
    return np.maximum(np.abs(y) - p, 0.0)  # vapnik


def atom_columns(p: PlqPenalty) -> list[AtomKind] | None:
    """Per-coordinate atoms of a penalty, or None without full provenance."""
    if p.atom is not None:
        return [p.atom] if p.dim_y == 1 else None
    if p.parts is not None:
        cols: list[AtomKind] = []
        for part in p.parts:
            sub = atom_columns(part)
            if sub is None:
                return None
            cols.extend(sub)
        return cols
    return None


def eval_closed_form(p: PlqPenalty, y) -> float:
    """Piecewise-formula evaluation; requires atom provenance.

    Raises
    ------
    ValueError
        If the penalty (or any block of a composition) was not built from a
        named atom.
    """
    if p.atom is not None:
        y = np.atleast_1d(np.asarray(y, dtype=float))
        if y.shape != (p.dim_y,):
            raise ValueError(f"argument must have length {p.dim_y}")
        return _atom_value(p.atom, y)
    if p.parts is not None:
        y = np.atleast_1d(np.asarray(y, dtype=float))
        if y.shape != (p.dim_y,):
            raise ValueError(f"argument must have length {p.dim_y}")
        total, start = 0.0, 0
        for part in p.parts:
            total += eval_closed_form(part, y[start : start + part.dim_y])
            start += part.dim_y
        return total
    raise ValueError("closed-form evaluation requires a penalty built from named atoms")


def _dual_solver(p: PlqPenalty) -> "_qp.DualSupSolver":
    """Cached dual-maximization solver; preprocessing runs once per penalty."""
    solver = p.__dict__.get("_dual_cache")
    if solver is None:
        solver = _qp.DualSupSolver(p.A, p.a, p.M)
        object.__setattr__(p, "_dual_cache", solver)
    return solver


def eval_dual_sup(p: PlqPenalty, y) -> float:
    """Evaluate the defining supremum ``sup_{u in U} <u, b+By> - 0.5 u^T M u``.

    Solved as a concave QP over the constraint polyhedron by a dense
    log-barrier method.  Agrees with :func:`eval_closed_form` on atoms to
    high accuracy and works for arbitrary valid penalties.

    Raises
    ------
    UnboundedPenaltyError
        If the supremum is ``+inf``, i.e. ``b + B y`` lies outside the
        effective domain.
    """
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if y.shape != (p.dim_y,):
        raise ValueError(f"argument must have length {p.dim_y}")
    w = p.b + p.B @ y
    return _dual_solver(p).value(w)
