"""Exception types shared across the package."""


class HorrrError(Exception):
    """Base class for numerical failures raised by this package."""


class BoundaryPointError(HorrrError):
    """A core unfolding is (numerically) rank deficient.

    Points with rank-deficient core unfoldings sit on the boundary of the
    fixed-rank manifold, where the tangent-space pseudo-inverses are not
    defined.  Raised instead of silently regularizing.
    """


class DegenerateDataError(HorrrError):
    """The data does not satisfy a precondition of the requested operation.

    Examples: rank-deficient feature matrix where full row rank is required,
    a singular kernel system at ``lambda = 0``, or a vanishing Khatri-Rao
    row in the degree-2 eigenvector construction.
    """
