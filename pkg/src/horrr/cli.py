"""Experiment driver.

Subcommands::

    synth        generate a problem directory (planted gaussian or digits)
    fit          run the Riemannian solver on a problem directory
    eval         recovery error / test error of a finished run
    analyze-d1   matrix-case stationary point analysis (pencil suite)
    verify-d2r1  degree-2 rank-1 B-eigenpair verification
    baseline-krr exact polynomial-kernel ridge baseline
    report       aggregate traces across runs into CSV and figures

Exit codes: 0 success, 1 usage error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from horrr.errors import HorrrError

_USAGE_EXIT = 1
_NUMERICAL_EXIT = 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(_USAGE_EXIT)


def _common(sub):
    sub.add_argument("--seed", type=int, default=0, help="base random seed")
    sub.add_argument("--out", type=str, default=None, help="output directory or file")
    sub.add_argument("--config", type=str, default=None, help="JSON file with optimizer settings")


def build_parser() -> _Parser:
    parser = _Parser(prog="horrr", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("synth", help="generate a problem directory")
    _common(p)
    p.add_argument("--dataset", choices=("gaussian", "digits"), default="gaussian")
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--m", type=int, default=12)
    p.add_argument("--n", type=int, default=2000)
    p.add_argument("--d", type=int, default=2)
    p.add_argument("--r", "--rank", dest="r", type=int, default=3)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--lambda", dest="lam", type=float, default=0.0)
    p.add_argument("--test-fraction", type=float, default=0.2, help="digits only")
    p.set_defaults(func=cmd_synth)

    p = subs.add_parser("fit", help="run the solver on a problem directory")
    _common(p)
    p.add_argument("--in", dest="indir", required=True)
    p.add_argument("--algo", choices=("rcg", "rgd"), default=None)
    p.add_argument("--rank", type=int, default=None)
    p.add_argument("--lambda", dest="lam", type=float, default=None)
    p.add_argument("--max-iters", type=int, default=None)
    p.add_argument("--grad-tol", type=float, default=None)
    p.add_argument("--recore-every", type=int, default=None)
    p.add_argument("--recore-at", type=int, nargs="*", default=None)
    p.add_argument("--semi-symmetric", action="store_true", default=None)
    p.add_argument("--init", choices=("spectral", "random", "semi-symmetric"), default="spectral")
    p.set_defaults(func=cmd_fit)

    p = subs.add_parser("eval", help="evaluate a finished run")
    _common(p)
    p.add_argument("--in", dest="indir", required=True)
    p.add_argument("--against-true", action="store_true", help="report RRE against the planted truth")
    p.set_defaults(func=cmd_eval)

    p = subs.add_parser("analyze-d1", help="pencil analysis of the matrix case")
    _common(p)
    p.add_argument("--in", dest="indir", required=True)
    p.set_defaults(func=cmd_analyze_d1)

    p = subs.add_parser("verify-d2r1", help="B-eigenpair verification of degree-2 rank-1 runs")
    _common(p)
    p.add_argument("--in", dest="indir", required=True)
    p.add_argument("--runs", type=int, default=3, help="number of semi-symmetric fits")
    p.add_argument("--max-iters", type=int, default=400)
    p.set_defaults(func=cmd_verify_d2r1)

    p = subs.add_parser("baseline-krr", help="exact polynomial-kernel baseline")
    _common(p)
    p.add_argument("--in", dest="indir", required=True)
    p.set_defaults(func=cmd_baseline_krr)

    p = subs.add_parser("report", help="aggregate run traces into CSV and figures")
    _common(p)
    p.add_argument("runs", nargs="+", help="run directories to aggregate")
    p.set_defaults(func=cmd_report)

    return parser


# ------------------------------------------------------------------ helpers


def _require_out(args, default=None) -> Path:
    if args.out is not None:
        return Path(args.out)
    if default is not None:
        return Path(default)
    print("error: --out is required for this command", file=sys.stderr)
    raise SystemExit(_USAGE_EXIT)


def _load_optimizer_config(args) -> "OptimizerConfig":
    from horrr.optimizer import OptimizerConfig

    data = {}
    if args.config:
        data.update(json.loads(Path(args.config).read_text()))
    overrides = {
        "algorithm": getattr(args, "algo", None),
        "max_iters": getattr(args, "max_iters", None),
        "grad_tol": getattr(args, "grad_tol", None),
        "recore_every": getattr(args, "recore_every", None),
        "recore_at": getattr(args, "recore_at", None),
        "semi_symmetric": getattr(args, "semi_symmetric", None),
        "seed": getattr(args, "seed", None),
    }
    for key, val in overrides.items():
        if val is not None:
            data[key] = val
    # config-file convenience: "recore_midway": true puts a single recore at
    # half the iteration budget
    midway = data.pop("recore_midway", False)
    cfg = OptimizerConfig.from_dict(data)
    if midway and cfg.recore_every == 0 and not cfg.recore_at:
        cfg.recore_at = (cfg.max_iters // 2,)
    return cfg


# ----------------------------------------------------------------- commands


def cmd_synth(args) -> int:
    from horrr import io
    from horrr.experiments import (
        RNG_ALGORITHM,
        SyntheticSpec,
        digits_problem,
        generate_synthetic,
        load_digits,
    )

    out = _require_out(args)
    if args.dataset == "gaussian":
        spec = SyntheticSpec(
            k=args.k, m=args.m, n=args.n, d=args.d, r=args.r,
            noise=args.noise, seed=args.seed, lam=args.lam,
        )
        prob, w_true = generate_synthetic(spec)
        io.save_problem(
            out, prob,
            extra={"kind": "synthetic", "noise": spec.noise, "seed": spec.seed, "rng": RNG_ALGORITHM},
        )
        io.save_point(out / "w_true", w_true, metadata={"role": "planted truth", "seed": spec.seed})
    else:
        data = load_digits(test_fraction=args.test_fraction, seed=args.seed)
        prob = digits_problem(data, d=args.d, lam=args.lam, r=args.r)
        io.save_problem(
            out, prob,
            extra={
                "kind": "digits",
                "test_fraction": args.test_fraction,
                "split_seed": args.seed,
                "rng": RNG_ALGORITHM,
            },
        )
        io.write_tensor(out / "X_test.hort", data.x_test)
        np.savetxt(out / "labels_test.csv", data.labels[data.test_idx], fmt="%d")
    print(f"wrote problem to {out}")
    return 0


def _initial_point(prob, kind: str, seed: int):
    from horrr.manifold import random_point
    from horrr.optimizer import semi_symmetric_init, spectral_init

    if kind == "spectral":
        return spectral_init(prob)
    if kind == "semi-symmetric":
        return semi_symmetric_init(prob.n_outputs, prob.n_features, prob.rank, prob.degree, seed)
    return random_point(prob.n_outputs, prob.n_features, prob.rank, prob.degree, seed)


def cmd_fit(args) -> int:
    from horrr import io
    from horrr.experiments import rre
    from horrr.objective import HorrrProblem, cost
    from horrr.optimizer import minimize

    indir = Path(args.indir)
    prob, manifest = io.load_problem(indir)
    if args.rank is not None or args.lam is not None:
        prob = HorrrProblem(
            prob.x, prob.y,
            lam=prob.lam if args.lam is None else args.lam,
            degree=prob.degree,
            rank=prob.rank if args.rank is None else args.rank,
        )
    cfg = _load_optimizer_config(args)
    if args.init == "semi-symmetric":
        cfg.semi_symmetric = True

    monitor = None
    w_true = None
    if (indir / "w_true").is_dir():
        w_true = io.load_point(indir / "w_true")
        monitor = lambda pt: {"rre": rre(pt, w_true, prob.x)}  # noqa: E731

    init = _initial_point(prob, args.init, args.seed)
    point, trace = minimize(prob, init, cfg, monitor=monitor)

    out = _require_out(args, default=indir / "run")
    out.mkdir(parents=True, exist_ok=True)
    io.save_point(out / "final", point, metadata={"problem": str(indir)})
    trace.checkpoint = str(out / "final")
    trace.write_jsonl(out / "trace.jsonl")
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2))
    summary = trace.summary()
    summary.update({"problem": str(indir), "init": args.init, "final_cost": cost(prob, point)})
    if w_true is not None:
        summary["final_rre"] = rre(point, w_true, prob.x)
    (out / "manifest.json").write_text(json.dumps(summary, indent=2))
    print(
        f"fit: {trace.iterations} iterations ({trace.termination}), "
        f"cost {summary['final_cost']:.6e}"
        + (f", rre {summary['final_rre']:.3e}" if "final_rre" in summary else "")
    )
    return 0


def cmd_eval(args) -> int:
    from horrr import io
    from horrr.experiments import rre
    from horrr.objective import cost

    rundir = Path(args.indir)
    run_manifest = json.loads((rundir / "manifest.json").read_text())
    probdir = Path(run_manifest["problem"])
    prob, prob_manifest = io.load_problem(probdir)
    point = io.load_point(rundir / "final")
    result = {"cost": cost(prob, point)}

    if args.against_true:
        if not (probdir / "w_true").is_dir():
            print("error: problem has no planted truth", file=sys.stderr)
            return _USAGE_EXIT
        w_true = io.load_point(probdir / "w_true")
        result["rre"] = rre(point, w_true, prob.x)
        print(f"rre {result['rre']:.6e}")
    if prob_manifest.get("kind") == "digits":
        x_test = io.read_tensor(probdir / "X_test.hort")
        labels = np.loadtxt(probdir / "labels_test.csv", dtype=int)
        pred = np.argmax(point.apply(x_test), axis=0)
        result["test_error"] = float(np.mean(pred != labels))
        print(f"test error {result['test_error']:.4f}")
    print(f"cost {result['cost']:.6e}")
    (rundir / "eval.json").write_text(json.dumps(result, indent=2))
    return 0


def cmd_analyze_d1(args) -> int:
    from horrr import io
    from horrr.objective import HorrrProblem, stationarity_report
    from horrr.stationary import (
        CertificateUnavailable,
        matrix_to_tucker,
        negativity_certificate_d1,
        orthogonalize_problem,
        pencil_stationary_points_d1,
        rrr_closed_form,
    )
    from horrr.tensors import frob

    prob, manifest = io.load_problem(Path(args.indir))
    if prob.degree != 1:
        print("error: analyze-d1 needs a degree-1 problem", file=sys.stderr)
        return _USAGE_EXIT
    points = pencil_stationary_points_d1(prob.x, prob.y, prob.lam)
    w_rrr = rrr_closed_form(prob.x, prob.y, 1, prob.lam)
    q, el = orthogonalize_problem(prob.x, prob.y)
    surrogate = [w for w, _ in pencil_stationary_points_d1(q, prob.y, 0.0)] if prob.lam == 0.0 else []

    entries = []
    for idx, (w, pair) in enumerate(points):
        rep = stationarity_report(prob, matrix_to_tucker(w, 1))
        entry = {
            "gamma": pair.gamma,
            "eigvec": pair.v.tolist(),
            "grad_relative": rep["grad_relative"],
            "cost": 0.5 * frob(w @ prob.x - prob.y) ** 2 + 0.5 * prob.lam * frob(w) ** 2,
        }
        if prob.lam == 0.0 and idx < len(surrogate):
            try:
                _, value = negativity_certificate_d1(q, prob.y, surrogate[idx])
                entry["negative_curvature"] = value
            except CertificateUnavailable:
                entry["negative_curvature"] = None  # the RRR point
        entries.append(entry)

    costs = [e["cost"] for e in entries]
    report = {
        "count": len(entries),
        "points": entries,
        "min_gamma_matches_rrr": bool(
            points and frob(points[0][0] - w_rrr) <= 1e-8 * max(1.0, frob(w_rrr))
        ),
        "cost_ordering_matches_gamma": bool(
            np.array_equal(np.argsort(costs), np.arange(len(costs)))
        ),
    }
    out = _require_out(args, default=Path(args.indir) / "analysis-d1.json")
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(report, indent=2))
    print(f"analyzed {report['count']} stationary points -> {out}")
    return 0


def cmd_verify_d2r1(args) -> int:
    from horrr import io
    from horrr.objective import HorrrProblem, stationarity_report
    from horrr.optimizer import OptimizerConfig, minimize, semi_symmetric_init
    from horrr.stationary import (
        BEigenpair,
        b_eigen_residual,
        b_eigenvalue,
        build_w_from_b_eigvec,
        cost_eigen_order_check,
    )

    prob, manifest = io.load_problem(Path(args.indir))
    if prob.degree != 2:
        print("error: verify-d2r1 needs a degree-2 problem", file=sys.stderr)
        return _USAGE_EXIT
    prob = HorrrProblem(prob.x, prob.y, lam=0.0, degree=2, rank=1)

    runs = []
    located = []
    for s in range(args.runs):
        init = semi_symmetric_init(prob.n_outputs, prob.n_features, 1, 2, seed=args.seed + s)
        cfg = OptimizerConfig(
            algorithm="rgd", max_iters=args.max_iters, grad_tol=1e-12, semi_symmetric=True
        )
        point, trace = minimize(prob, init, cfg)
        u = point.factors[1][:, 0]
        resid = b_eigen_residual(prob.x, prob.y, u)
        built = build_w_from_b_eigvec(prob.x, prob.y, u)
        rep = stationarity_report(prob, built)
        gamma = b_eigenvalue(prob.x, prob.y, u)
        runs.append(
            {
                "seed": args.seed + s,
                "iterations": trace.iterations,
                "termination": trace.termination,
                "b_eigen_residual": resid,
                "constructed_grad_relative": rep["grad_relative"],
                "gamma": gamma,
            }
        )
        if all(abs(abs(float(u @ pair.u)) - 1.0) > 1e-6 for pair in located):
            located.append(BEigenpair(gamma=gamma, u=u))
    pts = [(build_w_from_b_eigvec(prob.x, prob.y, pair.u), pair.gamma) for pair in located]
    report = {
        "runs": runs,
        "distinct_points": len(located),
        "eigenpairs": [{"gamma": pair.gamma, "u": pair.u.tolist()} for pair in located],
        "cost_eigen_order_ok": bool(cost_eigen_order_check(prob.x, prob.y, pts)),
    }
    out = _require_out(args, default=Path(args.indir) / "verify-d2r1.json")
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(report, indent=2))
    worst = max(r["b_eigen_residual"] for r in runs)
    print(f"{args.runs} runs, worst B-eigen residual {worst:.3e} -> {out}")
    return 0


def cmd_baseline_krr(args) -> int:
    from horrr import io
    from horrr.experiments import kernel_baseline

    probdir = Path(args.indir)
    prob, manifest = io.load_problem(probdir)
    predictor = kernel_baseline(prob.x, prob.y, prob.degree, prob.lam)
    result = {"training_cost": predictor.training_cost(prob.y)}
    if manifest.get("kind") == "digits":
        x_test = io.read_tensor(probdir / "X_test.hort")
        labels = np.loadtxt(probdir / "labels_test.csv", dtype=int)
        pred = np.argmax(predictor(x_test), axis=0)
        result["test_error"] = float(np.mean(pred != labels))
        print(f"kernel test error {result['test_error']:.4f}")
    print(f"kernel training cost {result['training_cost']:.6e}")
    out = _require_out(args, default=probdir / "baseline-krr.json")
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(result, indent=2))
    return 0


def cmd_report(args) -> int:
    from horrr.optimizer import RunTrace

    traces = []
    for rundir in args.runs:
        path = Path(rundir) / "trace.jsonl"
        if not path.exists():
            print(f"error: {path} not found", file=sys.stderr)
            return _USAGE_EXIT
        traces.append(RunTrace.read_jsonl(path))
    out = _require_out(args, default=Path("report"))
    out.mkdir(parents=True, exist_ok=True)

    n_iter = min(t.iterations for t in traces)
    have_rre = all("rre" in t.records[0] for t in traces)
    cols = {"iter": np.arange(n_iter)}
    cost_mat = np.array([[t.records[i]["cost"] for i in range(n_iter)] for t in traces])
    cols["cost_mean"] = cost_mat.mean(axis=0)
    cols["cost_min"] = cost_mat.min(axis=0)
    cols["cost_max"] = cost_mat.max(axis=0)
    if have_rre:
        rre_mat = np.array([[t.records[i]["rre"] for i in range(n_iter)] for t in traces])
        cols["rre_mean"] = rre_mat.mean(axis=0)
        cols["rre_min"] = rre_mat.min(axis=0)
        cols["rre_max"] = rre_mat.max(axis=0)

    header = ",".join(cols)
    table = np.column_stack(list(cols.values()))
    np.savetxt(out / "summary.csv", table, delimiter=",", header=header, comments="")

    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    figures = []
    quantities = [("cost", cost_mat)] + ([("rre", rre_mat)] if have_rre else [])
    for name, mat in quantities:
        fig, ax = plt.subplots(figsize=(6, 4))
        it = np.arange(n_iter)
        ax.plot(it, mat.mean(axis=0), label=f"mean ({len(traces)} runs)")
        ax.fill_between(it, mat.min(axis=0), mat.max(axis=0), alpha=0.25, label="min / max")
        ax.set_xlabel("iteration")
        ax.set_ylabel(name)
        if np.all(mat > 0):
            ax.set_yscale("log")
        ax.legend()
        fig.tight_layout()
        fig_path = out / f"{name}_vs_iterations.png"
        fig.savefig(fig_path, dpi=150)
        plt.close(fig)
        figures.append(str(fig_path))

    print(f"report over {len(traces)} runs -> {out / 'summary.csv'}; figures: {', '.join(figures)}")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse uses its own codes; normalize usage errors
        code = exc.code if isinstance(exc.code, int) else _USAGE_EXIT
        return _USAGE_EXIT if code not in (0,) else 0
    try:
        return args.func(args)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else _USAGE_EXIT
    except (HorrrError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return _NUMERICAL_EXIT
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return _USAGE_EXIT


if __name__ == "__main__":
    sys.exit(main())
