"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the per-criterion
lines as they complete.  Seeds are fixed so the suite is reproducible
within one build.
"""

import time

import numpy as np
import pytest

from horrr.experiments import (
    SyntheticSpec,
    classify_eval,
    digits_problem,
    generate_synthetic,
    kernel_baseline,
    load_digits,
    rre,
)
from horrr.manifold import (
    TangentVector,
    TuckerPoint,
    project_to_tangent,
    random_point,
    retract_hosvd,
    tangent_to_ambient,
)
from horrr.objective import (
    GradientWorkspace,
    HorrrProblem,
    cost,
    dense_euclidean_gradient,
    hessian_vec,
    recore,
    residual_condition_gap,
    riemannian_gradient,
    stationarity_report,
)
from horrr.optimizer import (
    OptimizerConfig,
    minimize,
    semi_symmetric_init,
    spectral_init,
)
from horrr.stationary import (
    CertificateUnavailable,
    b_eigen_residual,
    b_eigenvalue,
    build_w_from_b_eigvec,
    cost_eigen_order_check,
    matrix_to_tucker,
    negativity_certificate_d1,
    orthogonalize_problem,
    pencil_stationary_points_d1,
    rrr_closed_form,
)
from horrr.tensors import frob, semi_symmetry_defect


def _verdict(name, ok, detail=""):
    print(f"\n{'PASS' if ok else 'FAIL'}  {name}: {detail}")
    assert ok, f"{name}: {detail}"


def _random_tangent(p, seed):
    g = np.random.default_rng(seed)
    z = TangentVector(p, g.standard_normal(p.ranks), [g.standard_normal(f.shape) for f in p.factors])
    return z.scaled(1.0 / z.norm())


def _slope(ts, errs):
    return float(np.polyfit(np.log(ts), np.log(np.maximum(errs, 1e-300)), 1)[0])


def test_criterion_1_gradient_oracle_equivalence():
    t0 = time.perf_counter()
    g = np.random.default_rng(12345)
    worst = 0.0
    count = 0
    while count < 50:
        d = int(g.integers(1, 4))
        r = int(g.integers(1, 4))
        k = int(g.integers(1, 6))
        m = int(g.integers(max(r, 2), 9))
        n = int(g.integers(10, 51))
        lam = [0.0, 1e-3, 1.0][count % 3]
        prob = HorrrProblem(
            g.standard_normal((m, n)), g.standard_normal((k, n)), lam=lam, degree=d, rank=r
        )
        if g.integers(0, 2) == 0 or r**d < k:
            r0 = min(k, r**d)
            core = g.standard_normal((r0,) + (r,) * d)
            factors = [np.linalg.qr(g.standard_normal((k, r0)))[0]] + [
                np.linalg.qr(g.standard_normal((m, r)))[0] for _ in range(d)
            ]
            point = TuckerPoint(core, factors)
        else:
            point = random_point(k, m, r, d, seed=int(g.integers(0, 2**31)))
        eff = riemannian_gradient(prob, point)
        dense = project_to_tangent(point, dense_euclidean_gradient(prob, point.densify()))
        scale = max(1.0, eff.norm(), dense.norm())
        worst = max(worst, eff.plus(dense.scaled(-1.0)).norm() / scale)
        count += 1
    elapsed = time.perf_counter() - t0
    _verdict(
        "criterion 1 (gradient oracle equivalence)",
        worst <= 1e-10 and elapsed < 60.0,
        f"worst relative error {worst:.2e} over 50 instances, {elapsed:.1f}s",
    )


def test_criterion_2_finite_difference_orders():
    prob, _ = generate_synthetic(SyntheticSpec(k=3, m=6, n=40, d=2, r=2, noise=0.1, seed=2, lam=0.05))
    point = random_point(3, 6, 2, 2, seed=3)
    z = _random_tangent(point, 4)
    ts = [1e-2, 1e-3, 1e-4, 1e-5]

    grad = riemannian_gradient(prob, point)
    f0 = cost(prob, point)
    dd = grad.inner(z)
    g_errs = [abs((cost(prob, retract_hosvd(point, z, t)) - f0) / t - dd) for t in ts]
    g_slope = _slope(ts, g_errs)

    hz = hessian_vec(prob, point, z)
    h_errs = []
    for t in ts:
        moved = retract_hosvd(point, z, t)
        gm = riemannian_gradient(prob, moved)
        fd = project_to_tangent(point, (tangent_to_ambient(gm) - tangent_to_ambient(grad)) / t)
        h_errs.append(fd.plus(hz.scaled(-1.0)).norm())
    h_slope = _slope(ts, h_errs)
    _verdict(
        "criterion 2 (finite-difference orders)",
        g_slope >= 0.9 and h_slope >= 0.9,
        f"gradient slope {g_slope:.2f}, hessian slope {h_slope:.2f} (nominal 1)",
    )


def test_criterion_3_d1_stationary_suite():
    worst_grad = 0.0
    worst_rrr_gap = 0.0
    worst_sample = 0.0
    for seed in range(10):
        g = np.random.default_rng(100 + seed)
        x = g.standard_normal((6, 40))
        y = g.standard_normal((4, 40))
        prob = HorrrProblem(x, y, lam=0.0, degree=1, rank=1)
        points = pencil_stationary_points_d1(x, y, 0.0)
        assert len(points) == 4  # min(k, m) finite eigenpairs for generic data
        from horrr.objective import gradient_scale

        gscale = gradient_scale(prob)
        for w, _ in points:
            gn = riemannian_gradient(prob, matrix_to_tucker(w, 1)).norm() / gscale
            worst_grad = max(worst_grad, gn)
        w_rrr = rrr_closed_form(x, y, 1, 0.0)
        worst_rrr_gap = max(
            worst_rrr_gap, frob(points[0][0] - w_rrr) / max(1.0, frob(w_rrr))
        )
        # certificates on the orthonormalized surrogate
        q, _ = orthogonalize_problem(x, y)
        s_points = pencil_stationary_points_d1(q, y, 0.0)
        for idx, (w, _) in enumerate(s_points):
            if idx == 0:
                with pytest.raises(CertificateUnavailable):
                    negativity_certificate_d1(q, y, w)
            else:
                _, value = negativity_certificate_d1(q, y, w)
                assert value < 0
        # sampling at the RRR point
        point = matrix_to_tucker(w_rrr, 1)
        for s in range(200):
            z = _random_tangent(point, 10_000 * seed + s)
            worst_sample = min(worst_sample, hessian_vec(prob, point, z).inner(z))
    ok = worst_grad <= 1e-8 and worst_rrr_gap <= 1e-8 and worst_sample >= -1e-8
    _verdict(
        "criterion 3 (d=1 stationary suite)",
        ok,
        f"worst rel grad {worst_grad:.2e}, rrr gap {worst_rrr_gap:.2e}, "
        f"most negative sampled form {worst_sample:.2e}",
    )


def test_criterion_4_planted_recovery():
    t0 = time.perf_counter()
    spec0 = SyntheticSpec(k=10, m=12, n=2000, d=2, r=3, noise=0.0, seed=0)
    prob, w_true = generate_synthetic(spec0)
    cfg = OptimizerConfig(algorithm="rcg", max_iters=500, grad_tol=1e-12)
    point, trace = minimize(prob, spectral_init(prob), cfg)
    noiseless_rre = rre(point, w_true, prob.x)
    assert trace.iterations <= 500

    prob_n, w_true_n = generate_synthetic(
        SyntheticSpec(k=10, m=12, n=2000, d=2, r=3, noise=1e-3, seed=0)
    )
    point_n, _ = minimize(prob_n, spectral_init(prob_n), cfg)
    noisy_rre = rre(point_n, w_true_n, prob_n.x)

    medians = []
    for a in (1e-3, 1e-2, 1e-1):
        finals = []
        for seed in range(5):
            p_a, w_a = generate_synthetic(
                SyntheticSpec(k=10, m=12, n=2000, d=2, r=3, noise=a, seed=seed)
            )
            pt_a, _ = minimize(
                p_a, spectral_init(p_a), OptimizerConfig(algorithm="rcg", max_iters=200, grad_tol=1e-10)
            )
            finals.append(rre(pt_a, w_a, p_a.x))
        medians.append(float(np.median(finals)))
    elapsed = time.perf_counter() - t0
    ok = (
        noiseless_rre <= 1e-6
        and noisy_rre <= 1e-2
        and medians[0] < medians[1] < medians[2]
        and elapsed < 300.0
    )
    _verdict(
        "criterion 4 (planted recovery)",
        ok,
        f"a=0 rre {noiseless_rre:.2e} ({trace.iterations} iters), a=1e-3 rre {noisy_rre:.2e}, "
        f"medians {medians[0]:.2e} < {medians[1]:.2e} < {medians[2]:.2e}, {elapsed:.0f}s",
    )


def test_criterion_5_recore_properties():
    # exact residual solve and monotone cost on 20 random points
    worst_gap = 0.0
    for seed in range(20):
        lam = 0.0 if seed % 2 == 0 else 10.0 ** float(-seed % 3)
        g = np.random.default_rng(500 + seed)
        prob = HorrrProblem(
            g.standard_normal((6, 80)), g.standard_normal((4, 80)), lam=lam, degree=2, rank=2
        )
        point = random_point(4, 6, 2, 2, seed=seed)
        out = recore(prob, point)
        worst_gap = max(worst_gap, residual_condition_gap(prob, out) / frob(prob.y))
        assert cost(prob, out) <= cost(prob, point) + 1e-12

    # acceleration: median iterations to an RRE threshold, recore-midway vs none
    threshold = 3e-3
    plain_iters, recore_iters = [], []
    recore_events = 0
    for seed in range(5):
        p_a, w_a = generate_synthetic(
            SyntheticSpec(k=10, m=12, n=2000, d=2, r=3, noise=1e-3, seed=seed)
        )
        monitor = lambda pt: {"rre": rre(pt, w_a, p_a.x)}  # noqa: B023
        base = dict(algorithm="rgd", max_iters=200, grad_tol=1e-12)
        init = spectral_init(p_a)
        _, tr_plain = minimize(p_a, init, OptimizerConfig(**base), monitor=monitor)
        _, tr_rec = minimize(
            p_a, init, OptimizerConfig(**base, recore_at=(100,)), monitor=monitor
        )
        recore_events += sum(1 for rec in tr_rec.records if rec["recore"])

        def first_hit(tr):
            for rec in tr.records:
                if rec["rre"] <= threshold:
                    return rec["iter"]
            return np.inf

        plain_iters.append(first_hit(tr_plain))
        recore_iters.append(first_hit(tr_rec))
    med_plain = float(np.median(plain_iters))
    med_rec = float(np.median(recore_iters))
    ok = worst_gap <= 1e-10 and med_rec <= med_plain and recore_events > 0
    _verdict(
        "criterion 5 (recore properties)",
        ok,
        f"worst residual gap {worst_gap:.2e}; iterations to rre<={threshold}: "
        f"median recore-midway {med_rec} vs plain {med_plain} "
        f"({recore_events} recore events fired)",
    )


def test_criterion_6_semi_symmetry_preservation():
    # semi-symmetric truth of matching rank, so the class contains the
    # optimum; ill-conditioned features slow descent down enough that all
    # 50 iterations take genuine steps.  No defensive correction may fire.
    g = np.random.default_rng(6)
    scales = np.logspace(0, -2, 8)
    x = scales[:, None] * g.standard_normal((8, 600))
    w_true = semi_symmetric_init(5, 8, 2, 2, seed=60)
    prob = HorrrProblem(x, w_true.apply(x), lam=0.0, degree=2, rank=2)
    init = semi_symmetric_init(5, 8, 2, 2, seed=61)
    cfg = OptimizerConfig(algorithm="rgd", max_iters=50, grad_tol=1e-16, semi_symmetric=True)
    point, trace = minimize(prob, init, cfg)
    fixes = [r["sym_fix"] for r in trace.records if r["sym_fix"]]
    drift = semi_symmetry_defect(point.densify())
    ok = drift <= 1e-10 and not fixes and trace.iterations == 50
    _verdict(
        "criterion 6 (semi-symmetry preservation)",
        ok,
        f"drift {drift:.2e} after {trace.iterations} RGD iterations, "
        f"{len(fixes)} defensive corrections",
    )


def test_criterion_7_d2_r1_theorem_round_trip():
    worst_resid = 0.0
    worst_grad = 0.0
    located = []
    prob0, _ = generate_synthetic(SyntheticSpec(k=3, m=5, n=200, d=2, r=1, noise=0.0, seed=7))
    prob = HorrrProblem(prob0.x, prob0.y, lam=0.0, degree=2, rank=1)
    for s in range(3):
        init = semi_symmetric_init(3, 5, 1, 2, seed=70 + s)
        point, trace = minimize(
            prob, init, OptimizerConfig(algorithm="rgd", max_iters=400, grad_tol=1e-12, semi_symmetric=True)
        )
        u = point.factors[1][:, 0]
        worst_resid = max(worst_resid, b_eigen_residual(prob.x, prob.y, u))
        built = build_w_from_b_eigvec(prob.x, prob.y, u)
        worst_grad = max(worst_grad, stationarity_report(prob, built)["grad_relative"])
        if all(abs(abs(float(u @ v))) < 1 - 1e-6 for v in located):
            located.append(u)
    order_ok = cost_eigen_order_check(
        prob.x,
        prob.y,
        [(build_w_from_b_eigvec(prob.x, prob.y, u), b_eigenvalue(prob.x, prob.y, u)) for u in located],
    )

    # planted orthogonal design: every axis is an eigenpair, so the ordering
    # and the cost identity get exercised across several distinct points
    m = 4
    x_axes = np.eye(m)
    y_axes = np.random.default_rng(71).standard_normal((3, m))
    axis_points = []
    for i in range(m):
        u = np.eye(m)[i]
        assert b_eigen_residual(x_axes, y_axes, u) <= 1e-12
        axis_points.append(
            (build_w_from_b_eigvec(x_axes, y_axes, u), b_eigenvalue(x_axes, y_axes, u))
        )
    axes_ok = cost_eigen_order_check(x_axes, y_axes, axis_points, rel_tol=1e-8)
    ok = worst_resid <= 1e-6 and worst_grad <= 1e-6 and order_ok and axes_ok
    _verdict(
        "criterion 7 (d=2 r=1 theorem round-trip)",
        ok,
        f"worst B-eigen residual {worst_resid:.2e}, worst constructed grad {worst_grad:.2e}, "
        f"ordering ok on {len(located)} found + {m} planted points",
    )


def test_criterion_8_classification_parity():
    t0 = time.perf_counter()
    data = load_digits(test_fraction=0.2, seed=0)
    prob = digits_problem(data, d=2, lam=1e-2, r=10)
    baseline = kernel_baseline(prob.x, prob.y, 2, 1e-2)
    kernel_err = classify_eval(baseline, data)
    cfg = OptimizerConfig(algorithm="rcg", max_iters=150, grad_tol=1e-10, recore_at=(75,))
    point, _ = minimize(prob, spectral_init(prob), cfg)
    horrr_err = classify_eval(point, data)
    elapsed = time.perf_counter() - t0
    gap = abs(horrr_err - kernel_err)
    _verdict(
        "criterion 8 (classification parity)",
        gap <= 0.02 and elapsed < 600.0,
        f"horrr {horrr_err:.4f} vs kernel {kernel_err:.4f} (gap {100 * gap:.2f}pp), {elapsed:.0f}s",
    )


def test_criterion_9_linear_transform_correspondence():
    worst_stationary = 0.0
    ok_nonstationary = True
    for seed in range(10):
        g = np.random.default_rng(900 + seed)
        x = g.standard_normal((6, 40))
        y = g.standard_normal((4, 40))
        q, el = orthogonalize_problem(x, y)
        prob_x = HorrrProblem(x, y, lam=0.0, degree=1, rank=1)
        prob_q = HorrrProblem(q, y, lam=0.0, degree=1, rank=1)
        from horrr.objective import gradient_scale

        for w, _ in pencil_stationary_points_d1(x, y, 0.0):
            gn = riemannian_gradient(prob_q, matrix_to_tucker(w @ el, 1)).norm()
            worst_stationary = max(worst_stationary, gn / gradient_scale(prob_q))
        for w, _ in pencil_stationary_points_d1(q, y, 0.0):
            gn = riemannian_gradient(prob_x, matrix_to_tucker(w @ np.linalg.inv(el), 1)).norm()
            worst_stationary = max(worst_stationary, gn / gradient_scale(prob_x))
        w_rand = np.outer(g.standard_normal(4), g.standard_normal(6))
        gx = riemannian_gradient(prob_x, matrix_to_tucker(w_rand, 1)).norm() / gradient_scale(prob_x)
        gq = riemannian_gradient(prob_q, matrix_to_tucker(w_rand @ el, 1)).norm() / gradient_scale(prob_q)
        ok_nonstationary = ok_nonstationary and gx > 1e-6 and gq > 1e-6
    ok = worst_stationary <= 1e-10 and ok_nonstationary
    _verdict(
        "criterion 9 (linear transform correspondence)",
        ok,
        f"worst transformed stationary rel grad {worst_stationary:.2e}; "
        f"non-stationary points stay non-stationary on both sides",
    )
