"""Geometry of the fixed multilinear rank manifold in Tucker format.

A point is stored as ``[[C; U_0, ..., U_d]]`` with orthonormal factors.
Tangent vectors use the gauged parameterization ``{G; V_0, ..., V_d}`` with
``V_i^T U_i = 0``; the represented ambient tensor is::

    G x_j U_j  +  sum_i  C x_i V_i x_{j != i} U_j

For coefficient tensors of regression problems the first factor is square
orthogonal (usually the identity), which forces ``V_0 = 0``.  A square
factor also makes the corresponding core unfolding exempt from the full
row rank requirement: its pseudo-inverse never enters any formula, and the
parameterization still spans the true tangent space of the manifold the
point lives on.  Rank-deficient core unfoldings on *non-square* modes are
boundary points and are reported via :class:`~horrr.errors.BoundaryPointError`.

All operations are pure functions of immutable inputs.
"""

from __future__ import annotations

import numpy as np

from horrr.errors import BoundaryPointError
from horrr.tensors import (
    fix_signs,
    fold,
    frob,
    hosvd,
    is_semi_symmetric,
    mode_product,
    multi_mode_product,
    symmetrize_trailing,
    unfold,
)

RANK_CUTOFF = 1e-12  # relative singular value threshold for "rank deficient"


class TuckerPoint:
    """A tensor on the manifold, held in Tucker form.

    Attributes
    ----------
    core : ndarray, shape ``(r_0, ..., r_d)``
    factors : list of ndarray, ``factors[i]`` of shape ``(n_i, r_i)`` with
        orthonormal columns.
    """

    def __init__(self, core, factors):
        self.core = np.asarray(core, dtype=float)
        self.factors = [np.asarray(f, dtype=float) for f in factors]
        if len(self.factors) != self.core.ndim:
            raise ValueError("one factor per core mode required")
        for i, f in enumerate(self.factors):
            if f.ndim != 2 or f.shape[1] != self.core.shape[i]:
                raise ValueError(
                    f"factor {i} of shape {f.shape} does not match core mode {self.core.shape[i]}"
                )
        self.padded = False  # set by retract_hosvd when a factor had to be padded

    @property
    def order(self) -> int:
        return self.core.ndim

    @property
    def dims(self) -> tuple:
        return tuple(f.shape[0] for f in self.factors)

    @property
    def ranks(self) -> tuple:
        return self.core.shape

    def is_square_mode(self, i: int) -> bool:
        n, r = self.factors[i].shape
        return n == r

    def densify(self) -> np.ndarray:
        """Multiply the core into all factors; ``O(prod dims)`` memory."""
        return multi_mode_product(self.core, self.factors)

    def apply(self, x: np.ndarray) -> np.ndarray:
        """Apply the represented coefficient tensor to the columns of ``x``."""
        from horrr.tensors import apply_tucker

        return apply_tucker(self.core, self.factors, x)

    def frob_norm(self) -> float:
        """Frobenius norm; equals ``||core||_F`` by factor orthonormality."""
        return frob(self.core)

    def copy(self) -> "TuckerPoint":
        return TuckerPoint(self.core.copy(), [f.copy() for f in self.factors])

    def validate(self, tol: float = 1e-10) -> None:
        """Raise if a factor is not orthonormal or a required core unfolding is rank deficient."""
        for i, f in enumerate(self.factors):
            defect = frob(f.T @ f - np.eye(f.shape[1]))
            if defect > tol:
                raise ValueError(f"factor {i} not orthonormal (defect {defect:.2e})")
        for i in range(self.order):
            if self.is_square_mode(i):
                continue
            s = np.linalg.svd(unfold(self.core, i), compute_uv=False)
            if s[0] == 0.0 or s[-1] <= RANK_CUTOFF * s[0]:
                raise BoundaryPointError(
                    f"core unfolding {i} is rank deficient (boundary point)"
                )

    def semi_symmetric(self, tol: float = 1e-10) -> bool:
        """Whether the represented tensor is semi-symmetric, checked in factored form."""
        if self.order <= 2:
            return True
        trailing = self.factors[1:]
        same = all(
            f.shape == trailing[0].shape and frob(f - trailing[0]) <= tol * max(1.0, frob(trailing[0]))
            for f in trailing[1:]
        )
        return same and is_semi_symmetric(self.core, tol)

    def __repr__(self):
        return f"TuckerPoint(dims={self.dims}, ranks={self.ranks})"


class TangentVector:
    """Gauged tangent parameterization ``{G; V_0, ..., V_d}`` at a base point.

    The gauge ``V_i^T U_i = 0`` is re-imposed on construction so that
    floating point drift from arithmetic cannot accumulate; square modes
    carry exact zeros.
    """

    def __init__(self, base: TuckerPoint, g, vs, *, enforce_gauge: bool = True):
        self.base = base
        self.g = np.asarray(g, dtype=float)
        if self.g.shape != base.ranks:
            raise ValueError(f"g of shape {self.g.shape} does not match core {base.ranks}")
        vs = [np.asarray(v, dtype=float) for v in vs]
        if len(vs) != base.order:
            raise ValueError("one velocity matrix per mode required")
        for i, v in enumerate(vs):
            if v.shape != base.factors[i].shape:
                raise ValueError(f"V_{i} of shape {v.shape} != factor shape {base.factors[i].shape}")
        if enforce_gauge:
            vs = [
                np.zeros_like(v) if base.is_square_mode(i) else v - base.factors[i] @ (base.factors[i].T @ v)
                for i, v in enumerate(vs)
            ]
        self.vs = vs

    def to_ambient(self) -> np.ndarray:
        return tangent_to_ambient(self)

    def inner(self, other: "TangentVector") -> float:
        return tangent_inner(self, other)

    def norm(self) -> float:
        return float(np.sqrt(max(self.inner(self), 0.0)))

    def scaled(self, alpha: float) -> "TangentVector":
        return TangentVector(
            self.base, alpha * self.g, [alpha * v for v in self.vs], enforce_gauge=False
        )

    def plus(self, other: "TangentVector") -> "TangentVector":
        if other.base is not self.base:
            raise ValueError("tangent arithmetic requires a common base point")
        return TangentVector(
            self.base, self.g + other.g, [a + b for a, b in zip(self.vs, other.vs)]
        )

    def axpy(self, alpha: float, other: "TangentVector") -> "TangentVector":
        """``self + alpha * other`` at the shared base."""
        return self.plus(other.scaled(alpha))

    def __repr__(self):
        return f"TangentVector(norm={self.norm():.3e}, base={self.base!r})"


def zero_tangent(p: TuckerPoint) -> TangentVector:
    return TangentVector(
        p, np.zeros(p.ranks), [np.zeros_like(f) for f in p.factors], enforce_gauge=False
    )


def densify(p: TuckerPoint) -> np.ndarray:
    return p.densify()


def tangent_to_ambient(z: TangentVector) -> np.ndarray:
    """Ambient-coordinate tensor represented by ``z``; ``O(prod dims)``."""
    p = z.base
    out = multi_mode_product(z.g, p.factors)
    for i, v in enumerate(z.vs):
        if not np.any(v):
            continue
        mats = [v if j == i else p.factors[j] for j in range(p.order)]
        out += multi_mode_product(p.core, mats)
    return out


def core_pinv(p: TuckerPoint, mode: int) -> np.ndarray:
    """Pseudo-inverse of ``unfold(core, mode)``; boundary points are signaled."""
    mat = unfold(p.core, mode)
    u, s, vt = np.linalg.svd(mat, full_matrices=False)
    if s[0] == 0.0 or s[-1] <= RANK_CUTOFF * s[0]:
        raise BoundaryPointError(f"core unfolding {mode} is rank deficient (boundary point)")
    return (vt.T / s) @ u.T


def _perp(u: np.ndarray, mat: np.ndarray) -> np.ndarray:
    """Project the columns of ``mat`` onto the orthogonal complement of span(u)."""
    return mat - u @ (u.T @ mat)


def project_to_tangent(p: TuckerPoint, ambient: np.ndarray) -> TangentVector:
    """Orthogonal projection of an ambient tensor onto the tangent space at ``p``."""
    a = np.asarray(ambient, dtype=float)
    if a.shape != p.dims:
        raise ValueError(f"ambient shape {a.shape} does not match point dims {p.dims}")
    g = multi_mode_product(a, p.factors, transpose=True)
    vs = []
    for i in range(p.order):
        if p.is_square_mode(i):
            vs.append(np.zeros_like(p.factors[i]))
            continue
        mats = [p.factors[j] for j in range(p.order) if j != i]
        modes = [j for j in range(p.order) if j != i]
        half = multi_mode_product(a, mats, modes, transpose=True)
        v = _perp(p.factors[i], unfold(half, i) @ core_pinv(p, i))
        vs.append(v)
    return TangentVector(p, g, vs, enforce_gauge=False)


def tangent_inner(z1: TangentVector, z2: TangentVector) -> float:
    """Riemannian metric: the ambient inner product, evaluated in factored form.

    Cross terms between the ``G`` part and the ``V_i`` parts (and between
    different ``V_i`` parts) vanish by the gauge conditions, leaving
    ``<G1, G2> + sum_i <V1_i C_(i), V2_i C_(i)>``.
    """
    if z1.base is not z2.base:
        raise ValueError("tangent vectors live at different base points")
    total = float(np.dot(z1.g.ravel(), z2.g.ravel()))
    core = z1.base.core
    for i in range(z1.base.order):
        if not (np.any(z1.vs[i]) and np.any(z2.vs[i])):
            continue
        ci = unfold(core, i)
        total += float(np.dot((z1.vs[i] @ ci).ravel(), (z2.vs[i] @ ci).ravel()))
    return total


def hosvd_point(t: np.ndarray, ranks) -> TuckerPoint:
    """Truncated HOSVD of a dense tensor, returned as a manifold point."""
    core, factors = hosvd(t, ranks)
    return TuckerPoint(core, factors)


def retract_hosvd(p: TuckerPoint, z: TangentVector, step: float = 1.0) -> TuckerPoint:
    """HOSVD retraction of ``p + step * z`` back to the ranks of ``p``.

    ``densify(p) + step * ambient(z)`` has multilinear rank at most
    ``2 r_i`` per mode, so it is assembled exactly as a small Tucker tensor
    on concatenated factors ``[U_i, V_i]`` and truncated there; the full
    ambient tensor is never formed.  Signs of the final factors follow the
    same deterministic convention as :func:`horrr.tensors.hosvd`, so the
    result matches a dense-route HOSVD wherever singular vectors are
    unique up to sign.  If the sum has lower rank than the target, factors
    are padded deterministically and the result is flagged via ``.padded``.
    """
    if z.base is not p:
        raise ValueError("tangent vector is not anchored at the retraction base")
    order = p.order
    ranks = p.ranks

    combined = []  # per mode: (Q_i, R_i, has_velocity)
    for i in range(order):
        vi = z.vs[i]
        if np.any(vi):
            s_i = np.column_stack([p.factors[i], vi])
        else:
            s_i = p.factors[i]
        q, r = np.linalg.qr(s_i)
        combined.append((q, r, s_i.shape[1] > ranks[i]))

    widths = tuple(2 * ranks[i] if combined[i][2] else ranks[i] for i in range(order))
    big = np.zeros(widths)
    first = tuple(slice(0, ranks[i]) for i in range(order))
    big[first] = p.core + step * z.g
    for i in range(order):
        if not combined[i][2]:
            continue
        idx = list(first)
        idx[i] = slice(ranks[i], 2 * ranks[i])
        big[tuple(idx)] = step * p.core

    small = multi_mode_product(big, [r for _, r, _ in combined])
    # if the sum's singular values vanish at the target rank, the HOSVD has
    # to fill in arbitrary (but deterministic) directions: flag the event
    padded = False
    for i in range(order):
        s = np.linalg.svd(unfold(small, i), compute_uv=False)
        if s[0] == 0.0 or (len(s) >= ranks[i] and s[ranks[i] - 1] <= RANK_CUTOFF * s[0]):
            padded = True
    reachable = tuple(min(ranks[i], small.shape[i]) for i in range(order))
    core, small_factors = hosvd(small, reachable)
    # compose with the orthonormal bases, then fix signs on the full columns
    factors = []
    for i in range(order):
        f = combined[i][0] @ small_factors[i]
        if f.shape[1] < ranks[i]:
            from horrr.tensors import _pad_orthonormal

            f = _pad_orthonormal(f, ranks[i])
            pad_width = [(0, 0)] * order
            pad_width[i] = (0, ranks[i] - core.shape[i])
            core = np.pad(core, pad_width)
            padded = True
        signs = np.ones(f.shape[1])
        for c in range(f.shape[1]):
            if f[int(np.argmax(np.abs(f[:, c]))), c] < 0:
                signs[c] = -1.0
        f = f * signs
        core = mode_product(core, np.diag(signs), i)
        factors.append(f)
    out = TuckerPoint(core, factors)
    out.padded = padded
    return out


def random_point(k: int, m: int, r: int, d: int, seed) -> TuckerPoint:
    """Random manifold point: normal core, orthonormalized normal trailing factors, identity first factor.

    Deterministic per seed (numpy PCG64, ``standard_normal`` / QR).
    """
    if r > m:
        raise ValueError(f"rank {r} exceeds feature dimension {m}")
    if d < 1:
        raise ValueError("degree must be >= 1")
    rng = np.random.default_rng(seed)
    core = rng.standard_normal((k,) + (r,) * d)
    factors = [np.eye(k)]
    for _ in range(d):
        q, _ = np.linalg.qr(rng.standard_normal((m, r)))
        factors.append(q)
    return TuckerPoint(core, factors)


def semi_symmetric_point(k: int, m: int, r: int, d: int, seed) -> TuckerPoint:
    """Random semi-symmetric point: symmetrized core, one shared trailing factor."""
    if r > m:
        raise ValueError(f"rank {r} exceeds feature dimension {m}")
    rng = np.random.default_rng(seed)
    core = symmetrize_trailing(rng.standard_normal((k,) + (r,) * d))
    q, _ = np.linalg.qr(rng.standard_normal((m, r)))
    return TuckerPoint(core, [np.eye(k)] + [q] * d)


class DenseContractions:
    """Euclidean-gradient contractions computed from an explicit ambient tensor.

    Oracle-grade implementation of the accessor protocol consumed by
    :func:`curvature_term`; solver paths use the factored equivalent in
    :mod:`horrr.objective` instead.
    """

    def __init__(self, ambient: np.ndarray, base: TuckerPoint):
        self.ambient = np.asarray(ambient, dtype=float)
        if self.ambient.shape != base.dims:
            raise ValueError("ambient tensor does not match the base point dims")
        self.base = base

    def half_unfold(self, j: int) -> np.ndarray:
        """``[A x_{l != j} U_l^T]_(j)`` of shape ``(n_j, prod_{l != j} r_l)``."""
        p = self.base
        mats = [p.factors[l] for l in range(p.order) if l != j]
        modes = [l for l in range(p.order) if l != j]
        return unfold(multi_mode_product(self.ambient, mats, modes, transpose=True), j)

    def velocity_unfold(self, i: int, l: int, v_l: np.ndarray) -> np.ndarray:
        """``[A x_l V_l^T x_{j != l, i} U_j^T]_(i)`` of shape ``(n_i, prod_{j != i} r_j)``."""
        p = self.base
        mats, modes = [], []
        for j in range(p.order):
            if j == i:
                continue
            mats.append(v_l if j == l else p.factors[j])
            modes.append(j)
        return unfold(multi_mode_product(self.ambient, mats, modes, transpose=True), i)


def curvature_term(p: TuckerPoint, z: TangentVector, contractions) -> TangentVector:
    """Curvature part of the Riemannian Hessian applied to ``z``.

    ``contractions`` supplies the needed contractions of the Euclidean
    gradient with factor and velocity matrices (:class:`DenseContractions`
    or the factored implementation); the dense gradient tensor itself is
    never required.  Independent of the ridge parameter: the regularization
    part of the gradient is tangent and drops out of every term.
    """
    if z.base is not p:
        raise ValueError("tangent vector is not anchored at the given point")
    order = p.order
    pinvs = {}

    def pinv(i):
        if i not in pinvs:
            pinvs[i] = core_pinv(p, i)
        return pinvs[i]

    c_tilde = np.zeros(p.ranks)
    for j in range(order):
        if not np.any(z.vs[j]):
            continue
        h_j = contractions.half_unfold(j)
        vh = z.vs[j].T @ h_j
        c_tilde += fold(vh, j, p.ranks)
        c_tilde -= mode_product(p.core, vh @ pinv(j), j)

    u_tilde = []
    for i in range(order):
        if p.is_square_mode(i):
            u_tilde.append(np.zeros_like(p.factors[i]))
            continue
        ci = unfold(p.core, i)
        pin = pinv(i)
        gi = unfold(z.g, i)
        s = contractions.half_unfold(i) @ (np.eye(ci.shape[1]) - pin @ ci) @ gi.T @ pin.T
        for l in range(order):
            if l == i or not np.any(z.vs[l]):
                continue
            s += contractions.velocity_unfold(i, l, z.vs[l])
        u_tilde.append(_perp(p.factors[i], s @ pin))
    return TangentVector(p, c_tilde, u_tilde, enforce_gauge=False)
