"""Command-line interface: ``mdfa {fit,simulate,asymptotics,report}``.

Exit codes: 0 success, 2 usage or input error, 3 computational failure.
"""

import argparse
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import io as mio
from .asymptotics import NormalityConfig, normality_study
from .errors import DimensionError, InvalidInput, InvalidSpec, MDFAError, NotIdentifiable, NotIdentified
from .estimator import FitOptions, fit_mdfa, fit_mdfa_cov
from .model import Denominator, center_columns, covariance
from .report import METRIC_LABELS, render_svg
from .simulation import (
    get_setting,
    read_records_csv,
    records_to_csv,
    records_to_jsonl,
    run_replications,
    summarize,
    summary_to_csv,
)

EXIT_OK, EXIT_USAGE, EXIT_COMPUTE = 0, 2, 3
DESK_GRID = (100, 400, 1600, 6400)
FULL_GRID = tuple(range(100, 1001, 100))


class UsageError(Exception):
    pass


def _existing_file(text):
    if not Path(text).is_file():
        raise argparse.ArgumentTypeError(f"no such file: {text}")
    return text


def _int_list(text):
    try:
        vals = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not vals or any(v <= 0 for v in vals):
        raise argparse.ArgumentTypeError("expected positive integers")
    return vals


def _float_list(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _default_seed():
    env = os.environ.get("MDFA_SEED")
    if env is None:
        return 0
    try:
        return int(env)
    except ValueError:
        raise UsageError(f"MDFA_SEED must be an integer, got {env!r}") from None


def build_parser():
    parser = argparse.ArgumentParser(prog="mdfa", description="Matrix decomposition factor analysis.")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="master seed (default: $MDFA_SEED or 0)")
    common.add_argument("--workers", type=int, default=1)

    fit = sub.add_parser("fit", parents=[common], help="fit a factor model to a data matrix")
    fit.add_argument("--input", required=True, type=_existing_file)
    fit.add_argument("--output", default="-", help="JSON output path (default: stdout)")
    fit.add_argument("--factors", "-m", type=int, required=True)
    fit.add_argument("--format", choices=("csv", "json"), help="input format (default: from extension)")
    fit.add_argument("--header", action="store_true", help="CSV input has a header row")
    fit.add_argument("--ic5", action="store_true", help="lower-trapezoid identified loadings")
    fit.add_argument("--sparse-k", type=int, default=None, help="keep at most K nonzero loadings")
    fit.add_argument("--cov-only", action="store_true", help="iterate on the covariance matrix only")
    fit.add_argument("--denominator", choices=("n", "n-1"), default="n-1")
    fit.add_argument("--init", choices=("pca", "random"), default="pca")
    fit.add_argument("--max-iter", type=int, default=5000)
    fit.add_argument("--tol", type=float, default=1e-9)
    fit.add_argument("--scores", action="store_true", help="include factor scores in the output")

    sim = sub.add_parser("simulate", parents=[common], help="run a Monte Carlo study")
    sim.add_argument("--setting", default="1", help="setting ids 1-4, comma-separated")
    sim.add_argument("--n-grid", type=_int_list, default=None)
    sim.add_argument("--reps", type=int, default=None)
    sim.add_argument("--estimators", default="mdfa,pca,ols")
    sim.add_argument("--paper-scale", action="store_true", help="use the full published sizes")
    sim.add_argument("--denominator", choices=("n", "n-1"), default="n-1")
    sim.add_argument("--timing", action="store_true", help="record wall-clock runtimes (not reproducible)")
    sim.add_argument("--output", required=True, help="output directory")

    asy = sub.add_parser("asymptotics", parents=[common], help="asymptotic covariance and its Monte Carlo check")
    asy.add_argument("--input", type=_existing_file, help='JSON {"loadings": [[...]], "psi2": [...]}')
    asy.add_argument("--loadings", type=_float_list, default=None,
                     help="single-factor loadings, comma-separated (default 0.8,0.7,0.6,0.5,0.4)")
    asy.add_argument("--psi2", type=_float_list, default=None, help="unique variances (default: 1 - communality)")
    asy.add_argument("--n", type=int, default=20000)
    asy.add_argument("--reps", type=int, default=2000, help="Monte Carlo replications (0 skips the study)")
    asy.add_argument("--gamma", choices=("normal", "empirical"), default="normal")
    asy.add_argument("--output", default="-")

    rep = sub.add_parser("report", help="render SVG charts from a replication table")
    rep.add_argument("--input", required=True, type=_existing_file)
    rep.add_argument("--output", required=True, help="output directory")
    rep.add_argument("--metric", choices=sorted(METRIC_LABELS), default="mean_se_lambda")
    return parser


def _write_text(path, text):
    if path == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def _denominator(text):
    return Denominator.N if text == "n" else Denominator.N_MINUS_1


def cmd_fit(args):
    try:
        X = mio.read_matrix(args.input, args.format, header=args.header)
    except InvalidInput as exc:
        raise UsageError(str(exc)) from None
    n, p = X.shape
    m = args.factors
    if not 1 <= m < p:
        raise UsageError(f"dimension error: need 1 <= factors < p, got factors={m}, p={p}")
    if n <= m + p:
        raise UsageError(f"dimension error: need n > factors + p, got n={n}")
    if args.sparse_k is not None and not 1 <= args.sparse_k <= p * m:
        raise UsageError(f"--sparse-k must lie in [1, {p * m}]")
    try:
        opts = FitOptions(max_iter=args.max_iter, tol=args.tol, denominator=_denominator(args.denominator),
                          init=args.init, seed=args.seed, ic5=args.ic5, sparsity_k=args.sparse_k)
    except InvalidInput as exc:
        raise UsageError(str(exc)) from None
    if args.cov_only:
        res = fit_mdfa_cov(covariance(center_columns(X), opts.denominator), m, opts)
    else:
        res = fit_mdfa(X, m, replace(opts, keep_scores=args.scores))
    out = {
        "lambda": res.params.loadings.tolist(),
        "psi2": res.params.psi2.tolist(),
        "loss_trace": res.loss_trace.tolist(),
        "iterations": res.iterations,
        "converged": res.converged,
        "denominator": opts.denominator.value,
        "method": "covariance" if args.cov_only else "data",
    }
    if args.scores and res.scores is not None:
        out["scores"] = {"f": res.scores.f.tolist(), "e": res.scores.e.tolist()}
    _write_text(args.output, json.dumps(out) + "\n")
    return EXIT_OK


def cmd_simulate(args):
    try:
        settings = [get_setting(s.strip(), args.paper_scale) for s in args.setting.split(",") if s.strip()]
    except InvalidSpec as exc:
        raise UsageError(str(exc)) from None
    n_grid = args.n_grid or (FULL_GRID if args.paper_scale else DESK_GRID)
    reps = args.reps if args.reps is not None else (100 if args.paper_scale else 50)
    if reps < 1:
        raise UsageError("--reps must be positive")
    estimators = [e.strip() for e in args.estimators.split(",") if e.strip()]
    opts = FitOptions(denominator=_denominator(args.denominator))
    try:
        records = run_replications(settings, n_grid, reps, estimators, args.seed, workers=args.workers,
                                   options=opts, timing=args.timing)
    except (InvalidInput, InvalidSpec) as exc:
        raise UsageError(str(exc)) from None
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    (out / "replications.csv").write_text(records_to_csv(records))
    (out / "replications.jsonl").write_text(records_to_jsonl(records))
    (out / "summary.csv").write_text(summary_to_csv(summarize(records)))
    return EXIT_OK


def cmd_asymptotics(args):
    if args.input:
        try:
            obj = json.loads(Path(args.input).read_text())
            loadings = np.array(obj["loadings"], dtype=float)
            psi2 = obj.get("psi2")
        except (ValueError, KeyError, TypeError) as exc:
            raise UsageError(f"{args.input}: {exc}") from None
    else:
        loadings = np.array(args.loadings or [0.8, 0.7, 0.6, 0.5, 0.4], dtype=float)[:, None]
        psi2 = None
    if args.psi2 is not None:
        psi2 = args.psi2
    if loadings.ndim != 2:
        raise UsageError("loadings must be a matrix")
    psi2 = 1.0 - np.sum(loadings**2, axis=1) if psi2 is None else np.asarray(psi2, dtype=float)
    if psi2.shape != (loadings.shape[0],):
        raise UsageError("psi2 must have one entry per variable")
    if args.reps < 0 or args.n < 2:
        raise UsageError("--reps must be >= 0 and --n >= 2")
    cfg = NormalityConfig(loadings, psi2, n=args.n, replications=args.reps, seed=args.seed,
                          gamma=args.gamma, workers=args.workers)
    try:
        report = normality_study(cfg)
    except (NotIdentifiable, NotIdentified, InvalidInput, DimensionError) as exc:
        raise UsageError(str(exc)) from None
    _write_text(args.output, report.to_json() + "\n")
    return EXIT_OK


def cmd_report(args):
    try:
        records = read_records_csv(Path(args.input).read_text())
    except (InvalidInput, UnicodeDecodeError) as exc:
        raise UsageError(f"{args.input}: {exc}") from None
    rows = summarize(records)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    for setting in sorted({r["setting"] for r in rows}):
        (out / f"{setting}.svg").write_text(render_svg(rows, setting, args.metric))
    return EXIT_OK


COMMANDS = {"fit": cmd_fit, "simulate": cmd_simulate, "asymptotics": cmd_asymptotics, "report": cmd_report}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    try:
        if hasattr(args, "seed") and args.seed is None:
            args.seed = _default_seed()
        if getattr(args, "workers", 1) < 1:
            raise UsageError("--workers must be positive")
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"mdfa {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (MDFAError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"mdfa {args.command}: computation failed: {exc}", file=sys.stderr)
        return EXIT_COMPUTE
    except OSError as exc:
        print(f"mdfa {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
