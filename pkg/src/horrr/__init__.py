"""Higher order reduced rank regression on the fixed multilinear rank manifold.

The package is organized bottom-up:

- :mod:`horrr.tensors` -- dense tensor primitives (unfolding, mode products,
  Khatri-Rao, tensor apply, HOSVD).
- :mod:`horrr.manifold` -- Tucker points, tangent vectors, projection,
  HOSVD retraction and the Hessian curvature term.
- :mod:`horrr.objective` -- the ridge-regularized least-squares objective,
  its Riemannian gradient / Hessian-vector product, recoring.
- :mod:`horrr.optimizer` -- Riemannian gradient descent / conjugate gradient
  with Armijo backtracking.
- :mod:`horrr.stationary` -- closed-form and eigen-pencil analysis of
  stationary points (matrix case and the degree-2 rank-1 tensor pencil).
- :mod:`horrr.experiments` -- synthetic problem generation, recovery error,
  polynomial kernel baseline and the bundled digits classification task.
- :mod:`horrr.cli` -- the ``horrr`` experiment driver.
"""

from horrr.errors import BoundaryPointError, DegenerateDataError, HorrrError

__all__ = ["BoundaryPointError", "DegenerateDataError", "HorrrError"]

__version__ = "0.1.0"
