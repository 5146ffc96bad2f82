"""The ridge-regularized least-squares objective over Tucker points.

``F(W) = 0.5 * (||W X - Y||_F^2 + lambda * ||W||_F^2)`` with ``W`` applied
as a degree-``d`` homogeneous polynomial map.  The Riemannian gradient and
Hessian-vector product are computed in factored form: the only feature-space
objects ever materialized are ``U_j^T X`` compressions and Khatri-Rao chains
over them, never ``X^{kr d}`` or a dense ``k x m^d`` gradient.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from horrr.errors import DegenerateDataError
from horrr.manifold import (
    RANK_CUTOFF,
    TangentVector,
    TuckerPoint,
    core_pinv,
    curvature_term,
    _perp,
)
from horrr.tensors import fold, frob, kr_chain, kr_power, khatri_rao, unfold

__all__ = [
    "HorrrProblem",
    "GradientWorkspace",
    "cost",
    "riemannian_gradient",
    "hessian_vec",
    "residual_condition_gap",
    "recore",
    "stationarity_report",
    "regularized_cost",
    "boundary_penalty_gradient",
    "dense_euclidean_gradient",
    "gradient_scale",
]


@dataclass
class HorrrProblem:
    """Data and hyper-parameters: features as columns of ``x``, responses as columns of ``y``."""

    x: np.ndarray
    y: np.ndarray
    lam: float = 0.0
    degree: int = 1
    rank: int = 1

    def __post_init__(self):
        self.x = np.atleast_2d(np.asarray(self.x, dtype=float))
        self.y = np.atleast_2d(np.asarray(self.y, dtype=float))
        if self.x.shape[1] != self.y.shape[1]:
            raise ValueError(
                f"X has {self.x.shape[1]} samples but Y has {self.y.shape[1]}"
            )
        if self.lam < 0:
            raise ValueError("ridge parameter must be nonnegative")
        if self.degree < 1:
            raise ValueError("degree must be >= 1")
        if not 1 <= self.rank <= self.x.shape[0]:
            raise ValueError("rank must satisfy 1 <= r <= m")

    @property
    def n_features(self) -> int:
        return self.x.shape[0]

    @property
    def n_outputs(self) -> int:
        return self.y.shape[0]

    @property
    def n_samples(self) -> int:
        return self.x.shape[1]

    def check_full_row_rank_x(self) -> None:
        """Required by the ``lambda = 0`` analysis paths."""
        s = np.linalg.svd(self.x, compute_uv=False)
        if s[0] == 0.0 or s[-1] <= 1e-10 * s[0]:
            raise DegenerateDataError("X does not have full row rank")


class GradientWorkspace:
    """Per-point caches shared by cost/gradient/Hessian evaluations.

    Holds the compressed features ``A_i = U_i^T X``, the residual
    ``R = W X - Y`` and the Khatri-Rao chain of the ``A_i``.  A workspace is
    valid only for the exact ``(problem, point)`` pair it was built for;
    passing it with any other pair raises, which makes staleness an error
    rather than a silent wrong answer.
    """

    def __init__(self, prob: HorrrProblem, point: TuckerPoint):
        d = prob.degree
        if point.order != d + 1:
            raise ValueError(f"point order {point.order} does not match degree {d}")
        if point.dims != (prob.n_outputs,) + (prob.n_features,) * d:
            raise ValueError("point dims do not match the problem data")
        self.prob = prob
        self.point = point
        self.degree = d
        self.ax = [point.factors[i].T @ prob.x for i in range(1, d + 1)]
        # full chain over trailing modes in descending order (see horrr.tensors)
        self.z_chain = kr_chain(self.ax[::-1], n_cols=prob.n_samples)
        self.wx = point.factors[0] @ (unfold(point.core, 0) @ self.z_chain)
        self.r = self.wx - prob.y
        self.u0t_r = point.factors[0].T @ self.r
        # cumulative prefix/suffix Khatri-Rao products over the descending
        # trailing list, so each one-hole chain is a single extra product
        desc = self.ax[::-1]
        n = prob.n_samples
        tops = [np.ones((1, n))]
        for mat in desc[:-1]:
            tops.append(khatri_rao(tops[-1], mat))
        bots = [np.ones((1, n))]
        for mat in reversed(desc[1:]):
            bots.append(khatri_rao(mat, bots[-1]))
        bots.reverse()
        self._tops, self._bots = tops, bots
        self._pinvs: dict[int, np.ndarray] = {}

    def check(self, prob: HorrrProblem, point: TuckerPoint) -> None:
        if self.prob is not prob or self.point is not point:
            raise ValueError("stale workspace: built for a different problem/point pair")

    def pinv(self, mode: int) -> np.ndarray:
        if mode not in self._pinvs:
            self._pinvs[mode] = core_pinv(self.point, mode)
        return self._pinvs[mode]

    def trailing_holed(self, hole: int) -> np.ndarray:
        """Chain over trailing modes except ``hole``, descending order."""
        pos = self.degree - hole  # position of `hole` in the descending list
        return khatri_rao(self._tops[pos], self._bots[pos])

    def chain(self, hole: int | None, mode0: np.ndarray, replace: dict | None = None) -> np.ndarray:
        """Khatri-Rao chain for a CP unfolding: trailing modes (minus ``hole``,
        with optional per-mode replacements) in descending order, then ``mode0``."""
        if not replace and hole is not None:
            return khatri_rao(self.trailing_holed(hole), mode0)
        mats = []
        replace = replace or {}
        for mode in range(self.degree, 0, -1):
            if mode == hole:
                continue
            mats.append(replace.get(mode, self.ax[mode - 1]))
        mats.append(mode0)
        return kr_chain(mats, n_cols=self.prob.n_samples)


def _workspace(prob, p, ws):
    if ws is None:
        return GradientWorkspace(prob, p)
    ws.check(prob, p)
    return ws


def cost(prob: HorrrProblem, p: TuckerPoint, ws: GradientWorkspace | None = None) -> float:
    """``0.5 (||W X - Y||_F^2 + lambda ||W||_F^2)``; the ridge term uses ``||core||``."""
    if ws is not None:
        ws.check(prob, p)
        resid = ws.r
    else:
        resid = p.apply(prob.x) - prob.y
    return 0.5 * (frob(resid) ** 2 + prob.lam * p.frob_norm() ** 2)


def riemannian_gradient(
    prob: HorrrProblem, p: TuckerPoint, ws: GradientWorkspace | None = None
) -> TangentVector:
    """Gradient of the objective in the gauged tangent parameterization.

    Core part: ``unfold(G, 0) = U_0^T R Z^T + lambda * unfold(C, 0)`` with
    ``Z`` the Khatri-Rao chain of the compressed features.  Factor parts are
    ridge-free one-hole chain products.  Never touches ``X^{kr d}``.
    """
    ws = _workspace(prob, p, ws)
    g0 = ws.u0t_r @ ws.z_chain.T + prob.lam * unfold(p.core, 0)
    g = fold(g0, 0, p.ranks)
    vs = []
    for i in range(p.order):
        if p.is_square_mode(i):
            vs.append(np.zeros_like(p.factors[i]))
        elif i == 0:
            vs.append(_perp(p.factors[0], ws.r @ ws.z_chain.T @ ws.pinv(0)))
        else:
            t = prob.x @ ws.chain(i, ws.u0t_r).T
            vs.append(_perp(p.factors[i], t @ ws.pinv(i)))
    return TangentVector(p, g, vs, enforce_gauge=False)


class _CPGradContractions:
    """Contractions of the Euclidean gradient in its CP form.

    The ridge part of the gradient is tangent at ``p`` and cancels out of
    every curvature formula, so only the data term is represented.
    """

    def __init__(self, ws: GradientWorkspace):
        self.ws = ws

    def half_unfold(self, j: int) -> np.ndarray:
        ws = self.ws
        if j == 0:
            return ws.r @ ws.z_chain.T
        return ws.prob.x @ ws.chain(j, ws.u0t_r).T

    def velocity_unfold(self, i: int, l: int, v_l: np.ndarray) -> np.ndarray:
        ws = self.ws
        if l == 0:
            if i == 0:
                raise ValueError("velocity and unfolding mode coincide")
            return ws.prob.x @ ws.chain(i, v_l.T @ ws.r).T
        b_l = v_l.T @ ws.prob.x
        if i == 0:
            return ws.r @ self._trailing_full({l: b_l}).T
        return ws.prob.x @ ws.chain(i, ws.u0t_r, replace={l: b_l}).T

    def _trailing_full(self, replace: dict) -> np.ndarray:
        ws = self.ws
        mats = [replace.get(mode, ws.ax[mode - 1]) for mode in range(ws.degree, 0, -1)]
        return kr_chain(mats, n_cols=ws.prob.n_samples)


def hessian_vec(
    prob: HorrrProblem,
    p: TuckerPoint,
    z: TangentVector,
    ws: GradientWorkspace | None = None,
) -> TangentVector:
    """Riemannian Hessian applied to ``z``: projected Euclidean Hessian plus curvature.

    The Euclidean Hessian acts as ``Z -> [[1_n; Z X, X, ..., X]] + lambda Z``;
    its projection contributes ``lambda * z`` exactly, so
    ``Hess_lambda[z] - Hess_0[z] = lambda * z`` while the curvature part is
    ridge-independent.
    """
    ws = _workspace(prob, p, ws)
    if z.base is not p:
        raise ValueError("tangent vector is not anchored at the evaluation point")
    d = prob.degree
    # Z X through the tangent structure
    core0 = unfold(p.core, 0)
    zx = p.factors[0] @ (unfold(z.g, 0) @ ws.z_chain)
    for i in range(1, d + 1):
        if np.any(z.vs[i]):
            b_i = z.vs[i].T @ prob.x
            mats = [b_i if mode == i else ws.ax[mode - 1] for mode in range(d, 0, -1)]
            zx += p.factors[0] @ (core0 @ kr_chain(mats, n_cols=prob.n_samples))
    if np.any(z.vs[0]):
        zx += z.vs[0] @ (core0 @ ws.z_chain)

    u0t_zx = p.factors[0].T @ zx
    g_lin = fold(u0t_zx @ ws.z_chain.T, 0, p.ranks) + prob.lam * z.g
    vs_lin = []
    for i in range(p.order):
        if p.is_square_mode(i):
            vs_lin.append(np.zeros_like(p.factors[i]))
        elif i == 0:
            v = _perp(p.factors[0], zx @ ws.z_chain.T @ ws.pinv(0))
            vs_lin.append(v + prob.lam * z.vs[0])
        else:
            t = prob.x @ ws.chain(i, u0t_zx).T
            vs_lin.append(_perp(p.factors[i], t @ ws.pinv(i)) + prob.lam * z.vs[i])
    linear = TangentVector(p, g_lin, vs_lin, enforce_gauge=False)
    curv = curvature_term(p, z, _CPGradContractions(ws))
    return linear.plus(curv)


def residual_condition_gap(
    prob: HorrrProblem, p: TuckerPoint, ws: GradientWorkspace | None = None
) -> float:
    """``||R Z^T + lambda U_0 unfold(C, 0)||_F``; zero is necessary for stationarity."""
    ws = _workspace(prob, p, ws)
    gap = ws.r @ ws.z_chain.T + prob.lam * (p.factors[0] @ unfold(p.core, 0))
    return frob(gap)


def recore(
    prob: HorrrProblem, p: TuckerPoint, ws: GradientWorkspace | None = None
) -> TuckerPoint:
    """Replace the core by the exact minimizer of the objective with factors fixed.

    Solves ``unfold(C, 0) (Z Z^T + lambda I) = U_0^T Y Z^T``; the result
    satisfies the residual condition exactly and never increases the cost.
    With ``lambda = 0`` a (near-)row-rank-deficient chain is an error, not an
    implicit regularization.
    """
    ws = _workspace(prob, p, ws)
    if prob.lam == 0.0:
        s = np.linalg.svd(ws.z_chain, compute_uv=False)
        if s[0] == 0.0 or s[-1] <= RANK_CUTOFF * s[0] or len(s) < ws.z_chain.shape[0]:
            raise DegenerateDataError(
                "compressed feature chain is rank deficient and lambda = 0; cannot recore"
            )
    gram = ws.z_chain @ ws.z_chain.T
    gram[np.diag_indices_from(gram)] += prob.lam
    rhs = p.factors[0].T @ prob.y @ ws.z_chain.T
    new_core0 = np.linalg.solve(gram, rhs.T).T
    return TuckerPoint(fold(new_core0, 0, p.ranks), [f.copy() for f in p.factors])


def stationarity_report(
    prob: HorrrProblem, p: TuckerPoint, ws: GradientWorkspace | None = None
) -> dict:
    """Per-condition residuals of the stationarity characterization.

    A point is stationary iff the core condition
    ``lambda unfold(C,0) = -U_0^T R Z^T`` and, for every trailing mode, the
    factor condition ``lambda U_i = -X (chain_i)^T unfold(C,i)^+`` hold.
    Returns raw and relative residuals plus the (relative) Riemannian
    gradient norm as a cross-check; all residuals are small iff the
    gradient norm is.
    """
    ws = _workspace(prob, p, ws)
    core0 = unfold(p.core, 0)
    core_res = frob(prob.lam * core0 + ws.u0t_r @ ws.z_chain.T)
    core_scale = frob(p.factors[0].T @ prob.y @ ws.z_chain.T) + prob.lam * frob(core0)
    factor_res, factor_rel = [], []
    for i in range(1, p.order):
        t = prob.x @ ws.chain(i, ws.u0t_r).T @ ws.pinv(i)
        res = frob(prob.lam * p.factors[i] + t)
        factor_res.append(res)
        factor_rel.append(res / max(1.0, frob(t) + prob.lam))
    grad = riemannian_gradient(prob, p, ws)
    gscale = gradient_scale(prob)
    return {
        "core_residual": core_res,
        "core_relative": core_res / max(core_scale, np.finfo(float).tiny),
        "factor_residuals": factor_res,
        "factor_relatives": factor_rel,
        "grad_norm": grad.norm(),
        "grad_relative": grad.norm() / gscale,
    }


def gradient_scale(prob: HorrrProblem) -> float:
    """Natural magnitude of the gradient: ``||Y||_F * max(1, ||X||_2)^d``."""
    return frob(prob.y) * max(1.0, float(np.linalg.norm(prob.x, 2))) ** prob.degree


def regularized_cost(
    prob: HorrrProblem,
    p: TuckerPoint,
    tau: float,
    ws: GradientWorkspace | None = None,
) -> float:
    """Objective plus a boundary penalty on the matricization singular values.

    Adds ``tau^2 * sum_i (||W_(i)||_F^2 + ||W_(i)^+||_F^2)``; by factor
    orthonormality both norms are read off the singular values of the core
    unfoldings.  Singular values below the rank cutoff are excluded from the
    pseudo-inverse norm (keeping the value finite) and reported via a
    warning: the point is effectively on the manifold boundary.
    """
    if tau <= 0:
        raise ValueError("tau must be positive")
    base = cost(prob, p, ws)
    penalty = 0.0
    core_norm_sq = p.frob_norm() ** 2
    for i in range(p.order):
        s = np.linalg.svd(unfold(p.core, i), compute_uv=False)
        keep = s > RANK_CUTOFF * s[0] if s[0] > 0 else np.zeros_like(s, dtype=bool)
        if not np.all(keep) and not p.is_square_mode(i):
            import warnings

            warnings.warn(
                f"core unfolding {i} numerically rank deficient in regularized cost",
                RuntimeWarning,
                stacklevel=2,
            )
        penalty += core_norm_sq + float(np.sum(s[keep] ** -2.0))
    return base + tau**2 * penalty


def boundary_penalty_gradient(p: TuckerPoint, tau: float) -> TangentVector:
    """Riemannian gradient of the boundary penalty term.

    The penalty's Euclidean gradient is a Tucker tensor on the *same*
    factors as ``p``, so its tangent projection has no factor-velocity
    component: only the core part ``2 tau^2 sum_i fold_i(C_(i) -
    (C_(i) C_(i)^T)^{-2} C_(i))`` survives.
    """
    g = np.zeros(p.ranks)
    for i in range(p.order):
        ci = unfold(p.core, i)
        u, s, vt = np.linalg.svd(ci, full_matrices=False)
        inv3 = np.where(s > RANK_CUTOFF * s[0], s**-3.0, 0.0) if s[0] > 0 else s * 0.0
        g += fold(ci - (u * inv3) @ vt, i, p.ranks)
    g *= 2.0 * tau**2
    return TangentVector(p, g, [np.zeros_like(f) for f in p.factors], enforce_gauge=False)


def dense_euclidean_gradient(prob: HorrrProblem, w_dense: np.ndarray) -> np.ndarray:
    """Oracle-grade dense gradient ``fold(R (X^{kr d})^T + lambda W_(0), 0)``.

    Materializes ``X^{kr d}``; desk scale only.
    """
    from horrr.tensors import apply_dense

    w_dense = np.asarray(w_dense, dtype=float)
    resid = apply_dense(w_dense, prob.x) - prob.y
    g0 = resid @ kr_power(prob.x, prob.degree).T + prob.lam * unfold(w_dense, 0)
    return fold(g0, 0, w_dense.shape)
