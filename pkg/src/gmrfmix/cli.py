"""Command-line entry point for reproducible experiment pipelines.

Subcommands: generate, fit, eval, bias-report, lambda-sweep. Every command
writes a run manifest next to its outputs; all randomness flows from
--seed. Exit codes: 0 success, 2 usage error, 3 I/O failure, 4 numerical
failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

import numpy as np

from . import __version__
from .errors import GmrfError
from .evaluation import bias_report, nmi, save_eigenvalue_csv, vi
from .glasso import GlassoConfig, debias, glasso_solve
from .matrices import SparseSpd, SupportPattern, load_dense_csv, write_atomic_text
from .mixture import (
    BaselineEstimator,
    DebiasedEstimator,
    EmConfig,
    GlassoEstimator,
    KnownSupportEstimator,
    MixtureModel,
    e_step,
    fit_em,
    predict,
)
from .mle import MleConfig, dense_mle, estimate_known_support, neg_log_likelihood
from .synthetic import (
    DiffusionSpec,
    LatticeSpec,
    laplacian2d_precision,
    make_clustering_dataset,
    sample_gmrf,
    save_dataset,
)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_NUMERIC = 4


class UsageError(Exception):
    pass


def _write_manifest(out_dir: str, command: str, config: dict, duration: float):
    manifest = {
        "command": command,
        "config": {k: v for k, v in config.items() if k != "func"},
        "artifact_version": __version__,
        "duration_seconds": duration,
    }
    path = os.path.join(out_dir, f"manifest-{command}.json")
    write_atomic_text(path, json.dumps(manifest, indent=2, sort_keys=True))


def _empirical_cov(data: np.ndarray) -> np.ndarray:
    """Zero-mean (1/N) covariance of the rows."""
    s = data.T @ data / data.shape[0]
    return 0.5 * (s + s.T)


# ---------------------------------------------------------------------------
# generate


def cmd_generate(args) -> int:
    t0 = time.monotonic()
    os.makedirs(args.out_dir, exist_ok=True)
    if args.kind == "laplacian2d":
        if args.samples is None:
            raise UsageError("--samples is required for laplacian2d")
        q = laplacian2d_precision(LatticeSpec(args.rows, args.cols))
        data = sample_gmrf(q, None, args.samples, seed=args.seed)
        meta = {
            "kind": "laplacian2d",
            "rows": args.rows,
            "cols": args.cols,
            "samples": args.samples,
            "seed": args.seed,
        }
        save_dataset(args.out_dir, data, None, [q], meta)
    elif args.kind == "diffusion-mixture":
        if args.samples_range is None:
            raise UsageError("--samples-range is required for diffusion-mixture")
        lo, hi = args.samples_range
        spec = DiffusionSpec(args.rows, args.cols, args.coeff_low, args.coeff_high)
        data, labels, precisions = make_clustering_dataset(
            args.k, spec, lo, hi, seed=args.seed
        )
        meta = {
            "kind": "diffusion-mixture",
            "rows": args.rows,
            "cols": args.cols,
            "k": args.k,
            "samples_range": [lo, hi],
            "coeff_range": [args.coeff_low, args.coeff_high],
            "edge_coefficients": "arithmetic-mean",
            "seed": args.seed,
        }
        save_dataset(args.out_dir, data, labels, precisions, meta)
    else:
        raise UsageError(f"unknown --kind {args.kind!r}")
    _write_manifest(args.out_dir, "generate", vars(args), time.monotonic() - t0)
    return EXIT_OK


# ---------------------------------------------------------------------------
# fit


def _build_estimator(args):
    if args.estimator == "baseline":
        return BaselineEstimator()
    if args.estimator in ("glasso", "debiased"):
        if args.lam is None:
            raise UsageError(f"--lambda is required for {args.estimator}")
        gcfg = GlassoConfig(lam=args.lam)
        if args.estimator == "glasso":
            return GlassoEstimator(gcfg)
        return DebiasedEstimator(gcfg, MleConfig())
    if args.estimator == "known-support":
        if args.support is None:
            raise UsageError("--support (pattern JSON) is required for known-support")
        with open(args.support) as fh:
            obj = json.load(fh)
        objs = obj if isinstance(obj, list) else [obj]
        patterns = [
            SupportPattern(o["n"], [(i, j) for i, j, _ in o["triplets"]]) for o in objs
        ]
        return KnownSupportEstimator(patterns, MleConfig())
    raise UsageError(f"unknown --estimator {args.estimator!r}")


def cmd_fit(args) -> int:
    t0 = time.monotonic()
    data = load_dense_csv(args.data)
    cfg = EmConfig(
        estimator=_build_estimator(args),
        k=args.k,
        fix_means_to_zero=args.zero_means,
    )
    model, ll_trace, _ = fit_em(data, cfg, seed=args.seed)
    out_dir = os.path.dirname(os.path.abspath(args.out)) or "."
    os.makedirs(out_dir, exist_ok=True)
    model.save(args.out)
    trace_path = os.path.splitext(args.out)[0] + "_ll_trace.csv"
    np.savetxt(trace_path, np.asarray(ll_trace), fmt="%.17g")
    _write_manifest(out_dir, "fit", vars(args), time.monotonic() - t0)
    return EXIT_OK


# ---------------------------------------------------------------------------
# eval


def cmd_eval(args) -> int:
    t0 = time.monotonic()
    model = MixtureModel.load(args.model)
    data = load_dense_csv(args.data)
    labels = np.loadtxt(args.labels, dtype=int)
    if labels.shape[0] != data.shape[0]:
        raise UsageError(
            f"labels length {labels.shape[0]} differs from data rows {data.shape[0]}"
        )
    pred = predict(model, data)
    _, total_ll = e_step(model, data)
    counts = np.bincount(pred, minlength=model.k).tolist()
    metrics = {
        "nmi": nmi(labels, pred),
        "vi": vi(labels, pred),
        "component_counts": counts,
        "mean_negative_log_likelihood": -total_ll / data.shape[0],
    }
    write_atomic_text(args.out, json.dumps(metrics, indent=2))
    out_dir = os.path.dirname(os.path.abspath(args.out)) or "."
    _write_manifest(out_dir, "eval", vars(args), time.monotonic() - t0)
    return EXIT_OK


# ---------------------------------------------------------------------------
# bias-report


def cmd_bias_report(args) -> int:
    t0 = time.monotonic()
    q_true = SparseSpd.load(args.truth)
    data = load_dense_csv(args.data)
    s = _empirical_cov(data)
    names = [e.strip() for e in args.estimators.split(",") if e.strip()]
    estimates = {}
    gcfg = GlassoConfig(lam=args.lam)
    glasso_q = None
    for name in names:
        if name == "known-support":
            estimates[name] = estimate_known_support(s, q_true.pattern).q
        elif name == "glasso":
            glasso_q = glasso_solve(s, gcfg).q
            estimates[name] = glasso_q
        elif name == "debiased":
            estimates[name] = debias(s, gcfg).q
        elif name == "baseline":
            estimates[name] = dense_mle(s)
        else:
            raise UsageError(f"unknown estimator {name!r}")
    report = bias_report(q_true, s, estimates, args.lam)
    os.makedirs(args.out_dir, exist_ok=True)
    report.save(os.path.join(args.out_dir, "bias_report.json"))
    save_eigenvalue_csv(report, os.path.join(args.out_dir, "eigenvalues.csv"))
    _write_manifest(args.out_dir, "bias-report", vars(args), time.monotonic() - t0)
    return EXIT_OK


# ---------------------------------------------------------------------------
# lambda-sweep


def cmd_lambda_sweep(args) -> int:
    t0 = time.monotonic()
    data = load_dense_csv(args.data)
    rng = np.random.default_rng(args.seed)
    perm = rng.permutation(data.shape[0])
    n_train = int(round(args.split * data.shape[0]))
    if n_train < 2 or n_train >= data.shape[0]:
        raise UsageError("--split leaves too few train or test rows")
    train, test = data[perm[:n_train]], data[perm[n_train:]]
    s_train = _empirical_cov(train)
    s_test = _empirical_cov(test)

    rows = []
    for lam in args.lambda_grid:
        if lam == 0.0:
            q = dense_mle(s_train)
            rows.append(("glasso", lam, q, s_test))
            rows.append(("debiased", lam, q, s_test))
            continue
        gcfg = GlassoConfig(lam=lam)
        g_res = glasso_solve(s_train, gcfg)
        d_res = debias(s_train, gcfg)
        rows.append(("glasso", lam, g_res.q, s_test))
        rows.append(("debiased", lam, d_res.q, s_test))

    lines = ["estimator,lambda,nnz_per_row,heldout_mean_nll"]
    for name, lam, q, s_t in rows:
        nnz_per_row = (2 * len(q.pattern) - q.n) / q.n
        nll = neg_log_likelihood(q, s_t)
        lines.append(f"{name},{lam:.17g},{nnz_per_row:.17g},{nll:.17g}")
    write_atomic_text(args.out, "\n".join(lines) + "\n")
    out_dir = os.path.dirname(os.path.abspath(args.out)) or "."
    _write_manifest(out_dir, "lambda-sweep", vars(args), time.monotonic() - t0)
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gmrfmix", description="GMRF mixture estimation pipelines"
    )
    parser.add_argument("--config", help="JSON config file; flags override its values")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="generate a synthetic dataset")
    g.add_argument("--kind", required=True, choices=["laplacian2d", "diffusion-mixture"])
    g.add_argument("--rows", type=int, default=10)
    g.add_argument("--cols", type=int, default=10)
    g.add_argument("--k", type=int, default=1)
    g.add_argument("--samples", type=int)
    g.add_argument("--samples-range", type=int, nargs=2)
    g.add_argument("--coeff-low", type=float, default=0.1)
    g.add_argument("--coeff-high", type=float, default=1.0)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out-dir", required=True)
    g.set_defaults(func=cmd_generate)

    f = sub.add_parser("fit", help="fit a mixture model by EM")
    f.add_argument("--data", required=True)
    f.add_argument("--k", type=int, required=True)
    f.add_argument(
        "--estimator",
        required=True,
        choices=["baseline", "glasso", "debiased", "known-support"],
    )
    f.add_argument("--lambda", dest="lam", type=float)
    f.add_argument("--support", help="pattern JSON (known-support only)")
    f.add_argument("--zero-means", action="store_true")
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--out", required=True)
    f.set_defaults(func=cmd_fit)

    e = sub.add_parser("eval", help="score a fitted model against labels")
    e.add_argument("--model", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--labels", required=True)
    e.add_argument("--out", default="metrics.json")
    e.set_defaults(func=cmd_eval)

    b = sub.add_parser("bias-report", help="spectral bias diagnostics")
    b.add_argument("--truth", required=True, help="true precision, SparseSpd JSON")
    b.add_argument("--data", required=True)
    b.add_argument("--lambda", dest="lam", type=float, required=True)
    b.add_argument("--estimators", required=True, help="comma-separated list")
    b.add_argument("--out-dir", required=True)
    b.set_defaults(func=cmd_bias_report)

    l = sub.add_parser("lambda-sweep", help="held-out NLL across a lambda grid")
    l.add_argument("--data", required=True)
    l.add_argument("--lambda-grid", type=float, nargs="+", required=True)
    l.add_argument("--split", type=float, default=0.8)
    l.add_argument("--seed", type=int, default=0)
    l.add_argument("--out", default="lambda_sweep.csv")
    l.set_defaults(func=cmd_lambda_sweep)
    return parser


def _apply_config_file(parser, argv):
    """Pre-parse --config and inject its values as parser defaults."""
    if "--config" not in argv:
        return argv
    idx = argv.index("--config")
    path = argv[idx + 1]
    with open(path) as fh:
        cfg = json.load(fh)
    for action in parser._subparsers._group_actions[0].choices.values():
        action.set_defaults(**{k.replace("-", "_"): v for k, v in cfg.items()})
    return argv[:idx] + argv[idx + 2 :]


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        argv = _apply_config_file(parser, argv)
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except GmrfError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
