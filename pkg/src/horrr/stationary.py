"""Closed-form and eigen-pencil analysis of stationary points.

Matrix case (degree 1): ridge reduced-rank regression has the closed form
``W = [Y_hat Xhat^+ Xhat]_r Xhat^+`` with the augmented data
``Xhat = [X sqrt(lambda) I]``, ``Y_hat = [Y 0]``; every stationary point of
the rank-constrained problem corresponds to a finite generalized eigenpair
of the pencil ``(Xhat Xhat^T, Xhat Y_hat^T Y_hat Xhat^T)``, and only the
minimum-eigenvalue point (the closed form) is a strict local minimum.
Explicit negative-curvature directions certify every other point.

Degree 2, rank 1: semi-symmetric stationary points correspond to
B-eigenpairs of the tensor pencil built from the fourth-order Gram tensors
of the data; the pencil contractions are evaluated without materializing
any ``m^4`` tensor.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from horrr.errors import DegenerateDataError, HorrrError
from horrr.manifold import TangentVector, TuckerPoint
from horrr.objective import HorrrProblem, hessian_vec
from horrr.tensors import frob

__all__ = [
    "PencilEigenpair",
    "BEigenpair",
    "CertificateUnavailable",
    "orthogonalize_problem",
    "rrr_closed_form",
    "pencil_stationary_points_d1",
    "matrix_to_tucker",
    "combine_rank_r",
    "negativity_certificate_d1",
    "tensor_pencil_contractions",
    "b_eigen_residual",
    "build_w_from_b_eigvec",
    "cost_eigen_order_check",
]

GAP_TOL = 1e-10  # relative gap below which singular values count as repeated


class CertificateUnavailable(HorrrError):
    """The point is the reduced-rank solution: no negative direction exists."""


@dataclass
class PencilEigenpair:
    """Finite generalized eigenpair ``S v = gamma T v`` with unit ``v``."""

    gamma: float
    v: np.ndarray

    def residual(self, s: np.ndarray, t: np.ndarray) -> float:
        return frob(s @ self.v - self.gamma * (t @ self.v)) / (
            np.linalg.norm(s, 2) * np.linalg.norm(self.v)
        )


@dataclass
class BEigenpair:
    """Tensor-pencil eigenpair ``Z_XX u = gamma Z_XY u`` with unit ``u``."""

    gamma: float
    u: np.ndarray


def orthogonalize_problem(x: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Factor ``X = L Q`` with orthonormal-row ``Q`` and invertible lower-triangular ``L``.

    The surrogate problem ``(Q, Y)`` has the same stationary structure under
    ``W -> W L``: gradients vanish at ``W`` for ``(X, Y)`` iff at ``W L`` for
    ``(Q, Y)``, and costs agree, so classifications transfer.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    q_t, r_t = np.linalg.qr(x.T)  # X^T = q_t r_t  =>  X = r_t^T q_t^T
    diag = np.diag(r_t)
    if np.min(np.abs(diag)) <= 1e-12 * np.max(np.abs(diag), initial=0.0):
        raise DegenerateDataError("X does not have full row rank")
    signs = np.sign(diag)
    el = r_t.T * signs[np.newaxis, :]  # lower triangular, positive diagonal
    q = (q_t * signs[np.newaxis, :]).T
    return q, el


def _augment(x: np.ndarray, y: np.ndarray, lam: float) -> tuple[np.ndarray, np.ndarray]:
    if lam == 0.0:
        return x, y
    m, k = x.shape[0], y.shape[0]
    return np.hstack([x, np.sqrt(lam) * np.eye(m)]), np.hstack([y, np.zeros((k, m))])


def rrr_closed_form(x: np.ndarray, y: np.ndarray, r: int, lam: float = 0.0) -> np.ndarray:
    """The reduced-rank ridge regression solution ``[Y_hat Xhat^+ Xhat]_r Xhat^+``.

    For ``lambda = 0`` this is the classical SVD-truncated projection of the
    least-squares solution; ``X`` must then have full row rank.  A repeated
    singular value at the truncation boundary makes the solution non-unique
    and is reported as a warning.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.atleast_2d(np.asarray(y, dtype=float))
    if lam == 0.0:
        s = np.linalg.svd(x, compute_uv=False)
        if s[0] == 0.0 or s[-1] <= 1e-12 * s[0]:
            raise DegenerateDataError("X must have full row rank when lambda = 0")
    xh, yh = _augment(x, y, lam)
    xp = np.linalg.pinv(xh)
    a = yh @ xp @ xh
    u, s, vt = np.linalg.svd(a, full_matrices=False)
    r_eff = min(r, len(s))
    if r_eff < len(s) and s[r_eff - 1] - s[r_eff] <= GAP_TOL * max(s[0], 1e-300):
        warnings.warn(
            "repeated singular value at the truncation boundary: solution non-unique",
            RuntimeWarning,
            stacklevel=2,
        )
    a_r = (u[:, :r_eff] * s[:r_eff]) @ vt[:r_eff]
    return a_r @ xp


def pencil_stationary_points_d1(
    x: np.ndarray, y: np.ndarray, lam: float = 0.0
) -> list[tuple[np.ndarray, PencilEigenpair]]:
    """All rank-one stationary points of the degree-1 problem, one per finite eigenpair.

    Solves the pencil ``(Xhat Xhat^T, Xhat Y_hat^T Y_hat Xhat^T)`` by Cholesky
    whitening of the positive-definite left side; eigenpairs in the null
    space of the right side are the infinite ones and are dropped.  Each
    finite pair ``(gamma, v)`` yields ``W = Y X^T v v^T / (gamma ||Y X^T v||^2)``.
    Returned sorted by ascending ``gamma`` (the first is the RRR solution).
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.atleast_2d(np.asarray(y, dtype=float))
    if lam == 0.0:
        s_x = np.linalg.svd(x, compute_uv=False)
        if s_x[0] == 0.0 or s_x[-1] <= 1e-12 * s_x[0]:
            raise DegenerateDataError("X must have full row rank when lambda = 0")
    s_mat = x @ x.T + lam * np.eye(x.shape[0])
    yxt = y @ x.T  # equals Y_hat Xhat^T
    t_mat = yxt.T @ yxt
    chol = scipy.linalg.cholesky(s_mat, lower=True)
    inner = scipy.linalg.solve_triangular(chol, t_mat, lower=True)
    whitened = scipy.linalg.solve_triangular(chol, inner.T, lower=True)
    mu, w = np.linalg.eigh(0.5 * (whitened + whitened.T))
    out = []
    y_scale = max(frob(yxt), 1e-300)
    for j in range(len(mu)):
        if mu[j] <= 1e-12 * max(mu[-1], 0.0):
            continue  # infinite eigenpair: T v = 0
        gamma = 1.0 / mu[j]
        v = scipy.linalg.solve_triangular(chol, w[:, j], lower=True, trans="T")
        v = v / np.linalg.norm(v)
        z = yxt @ v
        nz = np.linalg.norm(z)
        if nz <= 1e-12 * y_scale:
            warnings.warn(
                f"eigenpair gamma={gamma:.3e} skipped: Y X^T v vanishes",
                RuntimeWarning,
                stacklevel=2,
            )
            continue
        w_point = np.outer(z, v) / (gamma * nz**2)
        out.append((w_point, PencilEigenpair(gamma=gamma, v=v)))
    out.sort(key=lambda wp: wp[1].gamma)
    return out


def matrix_to_tucker(w: np.ndarray, r: int) -> TuckerPoint:
    """Rank-``r`` matrix as an order-2 Tucker point via its thin SVD."""
    u, s, vt = np.linalg.svd(np.atleast_2d(w), full_matrices=False)
    return TuckerPoint(np.diag(s[:r]), [u[:, :r], vt[:r].T])


def combine_rank_r(points: list, indices) -> np.ndarray:
    """Sum of distinct rank-one stationary points; stationary on orthonormal-row data.

    ``points`` are the matrices from :func:`pencil_stationary_points_d1`
    computed on the orthonormalized surrogate; their left/right singular
    directions are then mutually orthogonal, which makes the sum a rank-
    ``len(indices)`` stationary point.
    """
    indices = list(indices)
    if len(set(indices)) != len(indices):
        raise ValueError("indices must be distinct")
    if not indices:
        raise ValueError("need at least one index")
    if max(indices) >= len(points) or min(indices) < 0:
        raise ValueError("index out of range of available rank-one points")
    return sum(points[i] for i in indices)


def negativity_certificate_d1(
    x: np.ndarray, y: np.ndarray, w_stationary: np.ndarray
) -> tuple[TangentVector, float]:
    """Explicit descent certificate at a non-RRR stationary point.

    Requires orthonormal-row ``x`` (use :func:`orthogonalize_problem` first).
    Internally rescales the responses so the strongest *missing* rank-one
    component has unit strength; the returned tangent direction ``Z`` then
    satisfies ``<Z, Hess[Z]> = 2 sigma_p (sigma_p - 1) < 0`` where
    ``sigma_p < 1`` is the weakest component present.  At the RRR solution no
    such direction exists and :class:`CertificateUnavailable` is raised.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.atleast_2d(np.asarray(y, dtype=float))
    if frob(x @ x.T - np.eye(x.shape[0])) > 1e-8:
        raise ValueError("x must have orthonormal rows; orthogonalize the problem first")
    w = np.atleast_2d(np.asarray(w_stationary, dtype=float))

    pencil = pencil_stationary_points_d1(x, y, 0.0)
    vs = np.column_stack([pair.v for _, pair in pencil])
    sigmas = np.array([np.linalg.svd(wp, compute_uv=False)[0] for wp, _ in pencil])

    u_w, s_w, vt_w = np.linalg.svd(w, full_matrices=False)
    rank = int(np.sum(s_w > 1e-10 * s_w[0]))
    present = set()
    for col in range(rank):
        overlaps = np.abs(vs.T @ vt_w[col])
        idx = int(np.argmax(overlaps))
        if overlaps[idx] < 1.0 - 1e-6:
            raise ValueError("w_stationary does not decompose over the pencil points")
        present.add(idx)

    missing = [j for j in range(len(pencil)) if j not in present]
    eligible = [j for j in missing if sigmas[j] > min(s_w[:rank])]
    if not eligible:
        raise CertificateUnavailable("point is the reduced-rank solution")
    j = min(eligible, key=lambda t: -sigmas[t])  # strongest missing component

    scale = 1.0 / sigmas[j]
    y_s = scale * y
    w_s = scale * w
    point = matrix_to_tucker(w_s, rank)
    # direction from the proof: missing left/right singular pair placed
    # against the weakest present component (the last, by SVD ordering)
    u_j = y_s @ x.T @ pencil[j][1].v
    u_j = u_j / np.linalg.norm(u_j)
    v_j = pencil[j][1].v
    v0 = np.zeros_like(point.factors[0])
    v1 = np.zeros_like(point.factors[1])
    v0[:, -1] = u_j
    v1[:, -1] = v_j
    z = TangentVector(point, np.zeros(point.ranks), [v0, v1])
    prob = HorrrProblem(x, y_s, lam=0.0, degree=1, rank=rank)
    value = hessian_vec(prob, point, z).inner(z)
    return z, value


# --------------------------------------------------------------- degree 2


def tensor_pencil_contractions(
    x: np.ndarray, y: np.ndarray, u: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """``(Z_XX u, Z_XY u)`` for the fourth-order Gram tensor pencil.

    ``Z_XX u = X ((X^T u)^3)`` and
    ``Z_XY u = X ((X^T u) * (Y^T Y (X^T u)^2))`` elementwise over samples;
    cost ``O((m + k) n)``, no ``m^4`` tensor is ever formed.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.atleast_2d(np.asarray(y, dtype=float))
    u = np.asarray(u, dtype=float).ravel()
    a = x.T @ u  # n
    zxx_u = x @ (a**3)
    zxy_u = x @ (a * (y.T @ (y @ (a**2))))
    return zxx_u, zxy_u


def _b_row(x: np.ndarray, u: np.ndarray) -> np.ndarray:
    """``B = (u^T X) kr (u^T X)`` as the elementwise square, one entry per sample."""
    return (x.T @ u) ** 2


def b_eigen_residual(x: np.ndarray, y: np.ndarray, u: np.ndarray) -> float:
    """Relative residual of the B-eigenpair equation at the candidate ``u``.

    Builds ``c = ||B||^-2 Y B^T`` and ``gamma = ||c||^-2 ||B||^-2`` and
    returns ``||Z_XX u - gamma Z_XY u|| / ||Z_XX u||``.
    """
    u = np.asarray(u, dtype=float).ravel()
    u = u / np.linalg.norm(u)
    b = _b_row(x, u)
    nb2 = float(b @ b)
    if nb2 <= 1e-28 * max(float(np.sum((x.T @ x) ** 2)), 1e-300):
        raise DegenerateDataError("u is orthogonal to every sample: B vanishes")
    c = (y @ b) / nb2
    nc2 = float(c @ c)
    if nc2 == 0.0:
        raise DegenerateDataError("Y B^T vanishes: candidate carries no signal")
    gamma = 1.0 / (nc2 * nb2)
    zxx_u, zxy_u = tensor_pencil_contractions(x, y, u)
    return float(np.linalg.norm(zxx_u - gamma * zxy_u) / np.linalg.norm(zxx_u))


def b_eigenvalue(x: np.ndarray, y: np.ndarray, u: np.ndarray) -> float:
    """``gamma = ||c||^-2 ||B||^-2`` for the candidate eigenvector ``u``."""
    u = np.asarray(u, dtype=float).ravel()
    u = u / np.linalg.norm(u)
    b = _b_row(x, u)
    nb2 = float(b @ b)
    c = (y @ b) / nb2
    return 1.0 / (float(c @ c) * nb2)


def build_w_from_b_eigvec(x: np.ndarray, y: np.ndarray, u: np.ndarray) -> TuckerPoint:
    """Semi-symmetric rank-one point ``[[c; I_k, u, u]]`` from a candidate eigenvector.

    The core is the ``k``-vector ``c = ||B||^-2 Y B^T`` reshaped to
    ``k x 1 x 1``; the point satisfies the residual condition by
    construction, and is stationary exactly when ``u`` solves the
    B-eigenpair equation.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.atleast_2d(np.asarray(y, dtype=float))
    u = np.asarray(u, dtype=float).ravel()
    u = u / np.linalg.norm(u)
    b = _b_row(x, u)
    nb2 = float(b @ b)
    if nb2 <= 1e-28 * max(float(np.sum((x.T @ x) ** 2)), 1e-300):
        raise DegenerateDataError("u is orthogonal to every sample: B vanishes")
    c = (y @ b) / nb2
    k = y.shape[0]
    return TuckerPoint(c.reshape(k, 1, 1), [np.eye(k), u[:, None], u[:, None]])


def cost_eigen_order_check(
    x: np.ndarray, y: np.ndarray, points_with_gammas: list, rel_tol: float = 1e-8
) -> bool:
    """Whether eigenvalue order matches cost order across stationary points.

    Also verifies the per-point identity
    ``||W X - Y||_F^2 = ||Y||_F^2 - 1/gamma`` to ``rel_tol`` (relative to
    ``||Y||_F^2``).
    """
    y = np.atleast_2d(np.asarray(y, dtype=float))
    y2 = frob(y) ** 2
    costs, gammas = [], []
    for point, gamma in points_with_gammas:
        resid_sq = frob(point.apply(x) - y) ** 2
        if abs(resid_sq - (y2 - 1.0 / gamma)) > rel_tol * y2:
            return False
        costs.append(resid_sq)
        gammas.append(gamma)
    order_cost = np.argsort(costs)
    order_gamma = np.argsort(gammas)
    return bool(np.array_equal(order_cost, order_gamma))
