"""Exception types shared across the package."""


class PlqError(Exception):
    """Base class for errors raised by this package."""


class UnboundedPenaltyError(PlqError):
    """The dual maximization defining a penalty value is unbounded above.

    Signals that the evaluation point lies outside the penalty's effective
    domain.
    """


class TooComplexError(PlqError):
    """A polyhedron exceeds the configured generator-enumeration budget."""


class NotSpdError(PlqError):
    """A matrix required to be symmetric positive definite is not.

    For block-structured factorizations, ``block_index`` names the first
    offending block.
    """

    def __init__(self, message: str, block_index: int | None = None):
        super().__init__(message)
        self.block_index = block_index


class DegeneratePenaltyError(PlqError):
    """A penalty violates the non-degeneracy condition the solver needs.

    Raised when ``Null(M)`` meets the recession cone of ``U`` nontrivially
    (the reduced per-block systems would be singular), or when ``U`` has no
    strictly feasible interior point to start the iteration from.
    """
