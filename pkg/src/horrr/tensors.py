"""Dense tensor primitives.

Conventions
-----------
Tensors are plain ``numpy`` arrays of ``float64``.  Modes are 0-indexed:
an order ``d+1`` coefficient tensor ``W`` of a degree-``d`` model has shape
``(k, m, ..., m)`` with mode ``0`` indexing the responses.

Unfoldings follow Kolda & Bader: ``unfold(t, j)`` places the mode-``j``
fibers as columns, with the remaining modes ordered so the *lowest* mode
varies fastest.  Equivalently ``unfold(t, j) =
moveaxis(t, j, 0).reshape(shape[j], -1, order="F")``.  The matching
linearization of a whole tensor is ``t.ravel(order="F")`` (mode-0 index
fastest); this is the payload order of the binary format in
:mod:`horrr.io`.

Under this convention a CP tensor with factor matrices ``M_0, ..., M_p``
(factor ``i`` of shape ``n_i x R``) unfolds as::

    unfold(T, j) == M_j @ kr_chain([M_p, ..., M_{j+1}, M_{j-1}, ..., M_0]).T

i.e. the Khatri-Rao chain runs over the remaining factors in *descending*
mode order.  All Khatri-Rao based formulas in this package rely on this
identity; ``tests/test_tensors.py`` pins it against brute-force index
enumeration.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "unfold",
    "fold",
    "mode_product",
    "multi_mode_product",
    "khatri_rao",
    "kr_chain",
    "kr_power",
    "cp_to_dense",
    "CPRepresentation",
    "apply_dense",
    "apply_tucker",
    "hosvd",
    "fix_signs",
    "squeeze_mode",
    "expand_mode",
    "is_semi_symmetric",
    "symmetrize_trailing",
    "frob",
]


def frob(a) -> float:
    """Frobenius norm of an array of any order."""
    return float(np.linalg.norm(np.asarray(a).ravel()))


DENSE_CAP_BYTES = 2 * 2**30  # default budget for any k * m^d dense allocation


def check_dense_budget(k: int, m: int, d: int, cap_bytes: int = DENSE_CAP_BYTES) -> None:
    """Reject configurations whose dense ``k x m^d`` tensor would exceed the cap."""
    need = 8 * int(k) * int(m) ** int(d)
    if need > cap_bytes:
        raise ValueError(
            f"dense k*m^d tensor needs {need / 2**30:.2f} GiB, over the {cap_bytes / 2**30:.2f} GiB cap"
        )


def _check_mode(t: np.ndarray, mode: int) -> None:
    if not 0 <= mode < t.ndim:
        raise ValueError(f"mode {mode} out of range for order-{t.ndim} tensor")


def unfold(t: np.ndarray, mode: int) -> np.ndarray:
    """Mode-``mode`` unfolding (matricization), Kolda-Bader column order."""
    t = np.asarray(t)
    _check_mode(t, mode)
    return np.reshape(np.moveaxis(t, mode, 0), (t.shape[mode], -1), order="F")


def fold(mat: np.ndarray, mode: int, dims) -> np.ndarray:
    """Inverse of :func:`unfold`: rebuild the tensor of shape ``dims``."""
    dims = tuple(int(d) for d in dims)
    if not 0 <= mode < len(dims):
        raise ValueError(f"mode {mode} out of range for dims {dims}")
    rest = tuple(d for i, d in enumerate(dims) if i != mode)
    if mat.shape != (dims[mode], int(np.prod(rest, dtype=np.int64))):
        raise ValueError(f"matrix shape {mat.shape} does not fold to {dims} at mode {mode}")
    return np.moveaxis(mat.reshape((dims[mode],) + rest, order="F"), 0, mode)


def mode_product(t: np.ndarray, mat: np.ndarray, mode: int) -> np.ndarray:
    """j-mode product ``t x_j M``; satisfies ``unfold(t x_j M, j) == M @ unfold(t, j)``."""
    t = np.asarray(t)
    _check_mode(t, mode)
    mat = np.asarray(mat)
    if mat.ndim != 2 or mat.shape[1] != t.shape[mode]:
        raise ValueError(
            f"matrix of shape {mat.shape} cannot contract mode {mode} of size {t.shape[mode]}"
        )
    moved = np.moveaxis(t, mode, 0)
    out = (mat @ moved.reshape(t.shape[mode], -1)).reshape((mat.shape[0],) + moved.shape[1:])
    return np.moveaxis(out, 0, mode)


def multi_mode_product(t: np.ndarray, mats, modes=None, transpose: bool = False) -> np.ndarray:
    """Apply several mode products; ``mats[i]`` acts on ``modes[i]`` (all modes by default).

    With ``transpose=True`` each matrix is applied transposed, which is the
    common ``t x_j U_j^T`` contraction pattern.
    """
    if modes is None:
        modes = range(len(mats))
    out = np.asarray(t)
    for mat, mode in zip(mats, modes):
        out = mode_product(out, mat.T if transpose else mat, mode)
    return out


def khatri_rao(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Column-wise Kronecker product; the first factor's row index varies slowest."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"column counts differ: {a.shape[1]} vs {b.shape[1]}")
    return (a[:, None, :] * b[None, :, :]).reshape(a.shape[0] * b.shape[0], a.shape[1])


def kr_chain(mats, n_cols: int | None = None) -> np.ndarray:
    """Khatri-Rao product of a list of matrices, left to right.

    Pass the matrices in descending mode order to obtain the chain that
    appears in CP unfoldings (see module docstring).  An empty list yields
    the ``1 x n_cols`` all-ones matrix, the neutral element.
    """
    mats = list(mats)
    if not mats:
        if n_cols is None:
            raise ValueError("empty chain needs an explicit column count")
        return np.ones((1, n_cols))
    out = np.atleast_2d(np.asarray(mats[0], dtype=float))
    for m in mats[1:]:
        out = khatri_rao(out, m)
    return out


def kr_power(x: np.ndarray, d: int) -> np.ndarray:
    """``d``-fold Khatri-Rao power ``x^{kr d}`` with ``m**d`` rows.

    Exponential in ``d``; meant for desk-scale oracles and the dense apply
    path, not for solver inner loops at large ``m``.
    """
    if d < 1:
        raise ValueError("degree must be >= 1")
    x = np.atleast_2d(np.asarray(x, dtype=float))
    out = x
    for _ in range(d - 1):
        out = khatri_rao(out, x)
    return out


def cp_to_dense(factors, weights=None) -> np.ndarray:
    """Densify a CP form: sum over columns of weighted outer products."""
    factors = [np.atleast_2d(np.asarray(f, dtype=float)) for f in factors]
    ncols = factors[0].shape[1]
    if any(f.shape[1] != ncols for f in factors):
        raise ValueError("CP factors must share their column count")
    letters = [chr(ord("a") + i) for i in range(len(factors))]
    spec = ",".join(f"{c}z" for c in letters) + "->" + "".join(letters)
    out = np.einsum(spec, *factors)
    if weights is not None:
        weights = np.asarray(weights, dtype=float)
        if weights.shape != (ncols,):
            raise ValueError("weights length must match factor column count")
        spec = ",".join(f"{c}z" for c in letters) + ",z->" + "".join(letters)
        out = np.einsum(spec, *factors, weights)
    return out


@dataclass
class CPRepresentation:
    """Weighted sum of rank-one tensors; a container, not a fitting method."""

    weights: np.ndarray
    factors: list

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        self.factors = [np.atleast_2d(np.asarray(f, dtype=float)) for f in self.factors]
        r = len(self.weights)
        if any(f.shape[1] != r for f in self.factors):
            raise ValueError("all CP factors must have one column per weight")

    @property
    def dims(self):
        return tuple(f.shape[0] for f in self.factors)

    def to_dense(self) -> np.ndarray:
        return cp_to_dense(self.factors, self.weights)


def apply_dense(a: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Apply an order-``d+1`` coefficient tensor to the columns of ``x``.

    Column ``j`` of the result evaluates the ``k`` homogeneous degree-``d``
    polynomials encoded by ``a`` at ``x[:, j]``.  Computed as
    ``unfold(a, 0) @ kr_power(x, d)``; cost ``O(k n m^d)``.
    """
    a = np.asarray(a, dtype=float)
    x = np.atleast_2d(np.asarray(x, dtype=float))
    d = a.ndim - 1
    if d < 1:
        raise ValueError("coefficient tensor must have order >= 2")
    m = x.shape[0]
    if a.shape[1:] != (m,) * d:
        raise ValueError(f"trailing dims {a.shape[1:]} do not match feature dimension {m}")
    return unfold(a, 0) @ kr_power(x, d)


def apply_tucker(core: np.ndarray, factors, x: np.ndarray) -> np.ndarray:
    """Apply a Tucker-form tensor to ``x`` without densifying.

    Implements ``U_0 C_(0) (U_d^T X kr ... kr U_1^T X)``; with ``U_0`` square
    the cost is ``O(m n d r + n k r^d)``.
    """
    core = np.asarray(core, dtype=float)
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if len(factors) != core.ndim:
        raise ValueError("one factor per core mode required")
    for i, f in enumerate(factors):
        if f.shape[1] != core.shape[i]:
            raise ValueError(f"factor {i} has {f.shape[1]} columns, core mode has {core.shape[i]}")
    m = x.shape[0]
    for f in factors[1:]:
        if f.shape[0] != m:
            raise ValueError("trailing factors must have one row per feature")
    compressed = [f.T @ x for f in factors[1:]]
    chain = kr_chain(compressed[::-1], n_cols=x.shape[1])
    return factors[0] @ (unfold(core, 0) @ chain)


def fix_signs(u: np.ndarray) -> np.ndarray:
    """Deterministic sign convention: largest-magnitude entry of each column positive.

    Ties resolve to the lowest row index (``argmax`` order).  Keeps HOSVD
    reproducible, which the semi-symmetry preservation argument needs.
    """
    u = np.array(u, dtype=float)
    for j in range(u.shape[1]):
        i = int(np.argmax(np.abs(u[:, j])))
        if u[i, j] < 0:
            u[:, j] = -u[:, j]
    return u


def hosvd(t: np.ndarray, ranks) -> tuple[np.ndarray, list]:
    """Truncated higher-order SVD.

    Returns ``(core, factors)`` with orthonormal ``factors[i]`` holding the
    leading ``ranks[i]`` left singular vectors of ``unfold(t, i)`` (signs
    fixed by :func:`fix_signs`) and ``core = t x_i U_i^T``.  When an
    unfolding offers fewer than ``ranks[i]`` singular directions the factor
    is padded with a deterministic orthonormal complement.
    """
    t = np.asarray(t, dtype=float)
    ranks = tuple(int(r) for r in ranks)
    if len(ranks) != t.ndim:
        raise ValueError("one rank per mode required")
    factors = []
    for i, r in enumerate(ranks):
        n_i = t.shape[i]
        if r > n_i:
            raise ValueError(f"rank {r} exceeds dimension {n_i} at mode {i}")
        u, _, _ = np.linalg.svd(unfold(t, i), full_matrices=False)
        if u.shape[1] < r:
            u = _pad_orthonormal(u, r)
        factors.append(fix_signs(u[:, :r]))
    core = multi_mode_product(t, factors, transpose=True)
    return core, factors


def _pad_orthonormal(u: np.ndarray, r: int) -> np.ndarray:
    """Extend the columns of ``u`` to ``r`` orthonormal columns, deterministically."""
    n = u.shape[0]
    if r > n:
        raise ValueError("cannot pad beyond the ambient dimension")
    basis = u
    k = 0
    while basis.shape[1] < r:
        if k >= n:
            raise ValueError("ran out of directions while padding")
        cand = np.zeros(n)
        cand[k] = 1.0
        k += 1
        cand = cand - basis @ (basis.T @ cand)
        nrm = np.linalg.norm(cand)
        if nrm > 1e-8:
            basis = np.column_stack([basis, cand / nrm])
    return basis


def squeeze_mode(t: np.ndarray, mode: int) -> np.ndarray:
    """Drop a singleton mode; entries are preserved."""
    t = np.asarray(t)
    _check_mode(t, mode)
    if t.shape[mode] != 1:
        raise ValueError(f"mode {mode} has size {t.shape[mode]}, not a singleton")
    return np.squeeze(t, axis=mode)


def expand_mode(t: np.ndarray, mode: int) -> np.ndarray:
    """Insert a singleton mode at ``mode``; inverse of :func:`squeeze_mode`."""
    return np.expand_dims(np.asarray(t), axis=mode)


def is_semi_symmetric(t: np.ndarray, tol: float = 1e-10) -> bool:
    """Whether ``t`` is invariant under permutations of its trailing modes.

    Checks ``max_{p,q != 0} ||unfold(t,p) - unfold(t,q)||_F <= tol * ||t||_F``,
    which is equivalent to full trailing-permutation invariance.
    """
    return semi_symmetry_defect(t) <= tol


def semi_symmetry_defect(t: np.ndarray) -> float:
    """Relative size of the worst trailing-unfolding mismatch (0 if semi-symmetric)."""
    t = np.asarray(t, dtype=float)
    if t.ndim <= 2:
        return 0.0
    trailing = t.shape[1:]
    if len(set(trailing)) > 1:
        return np.inf
    scale = frob(t)
    if scale == 0.0:
        return 0.0
    unfs = [unfold(t, p) for p in range(1, t.ndim)]
    worst = max(
        frob(unfs[p] - unfs[q]) for p in range(len(unfs)) for q in range(p + 1, len(unfs))
    )
    return worst / scale


def symmetrize_trailing(t: np.ndarray) -> np.ndarray:
    """Average over all trailing-mode permutations; a projection onto semi-symmetry."""
    from itertools import permutations

    t = np.asarray(t, dtype=float)
    if t.ndim <= 2:
        return t.copy()
    trailing = tuple(range(1, t.ndim))
    acc = np.zeros_like(t)
    count = 0
    for perm in permutations(trailing):
        acc += np.transpose(t, (0,) + perm)
        count += 1
    return acc / count


__all__.append("semi_symmetry_defect")
