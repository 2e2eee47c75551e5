"""``skewlap`` command-line interface.

Exit codes: 0 on success, 2 on argument or precondition errors, 3 on
numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import subprocess
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from . import experiments as ex
from . import logistic as lg
from . import multinomial as mn
from .diagnostics import assemble_report
from .laplace import find_mode, fit_laplace
from .model import DomainError, NotPositiveDefinite, SkewLapError, UnsupportedError
from .skew import build_skew, corrected_covariance

log = logging.getLogger("skewlap")

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 2, 3


class UsageError(Exception):
    pass


def _int_list(text: str) -> list[int]:
    try:
        vals = [int(v) for v in text.replace(" ", "").split(",") if v]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not vals or any(v <= 0 for v in vals):
        raise argparse.ArgumentTypeError("list must be non-empty and positive")
    return vals


def _counts(text: str) -> np.ndarray:
    """Comma-separated integers, or the path of a one-column CSV."""
    if Path(text).is_file():
        return mn.read_counts(text)
    try:
        return np.array([int(v) for v in text.split(",") if v.strip()])
    except ValueError:
        raise argparse.ArgumentTypeError(f"--counts expects integers or a CSV path, got {text!r}") from None


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        # JSON has no infinities; keep them readable instead of dropping them
        return x if math.isfinite(x) else ("inf" if x > 0 else "-inf" if x < 0 else "nan")
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _git_revision() -> str:
    try:
        out = subprocess.run(
            ["git", "rev-parse", "HEAD"], capture_output=True, text=True, timeout=5,
            cwd=Path(__file__).resolve().parent,
        )
        return out.stdout.strip() or "unknown"
    except (OSError, subprocess.SubprocessError):
        return "unknown"


def _emit(payload: dict, args, started: float) -> None:
    payload = dict(payload)
    payload["metadata"] = {
        "seed": getattr(args, "seed", None),
        "git_revision": _git_revision(),
        "wall_time_s": time.perf_counter() - started,
        "version": __version__,
        "command": " ".join(sys.argv[1:]),
    }
    text = json.dumps(_jsonable(payload), indent=2, sort_keys=False)
    if getattr(args, "json", None):
        Path(args.json).write_text(text + "\n")
    print(text)


def _load_model(args):
    """Model from ``--counts`` (Dirichlet) or ``--data`` (logistic regression)."""
    if args.counts is not None and args.data is not None:
        raise UsageError("give either --counts or --data, not both")
    if args.counts is not None:
        mp = mn.build(args.counts)
        return mp.model, np.full(mp.dim, 1.0 / (mp.dim + 1)), {"model": "dirichlet", "counts": mp.counts}
    if args.data is not None:
        post = lg.build_posterior(lg.read_dataset(args.data), args.prior_precision)
        return post.model, np.zeros(post.model.dim), {
            "model": "logistic", "n": post.dataset.n, "d": post.dataset.dim,
            "prior_precision": args.prior_precision,
        }
    raise UsageError("a model is required: --counts or --data")


def _fit(model, x0):
    res = find_mode(model, x0)
    if res.diverged:
        raise SkewLapError("mode search diverged (no finite MAP, e.g. separable data under a flat prior)")
    if not res.converged:
        raise SkewLapError(f"mode search did not converge (gradient norm {res.grad_norm:.3g})")
    return res, fit_laplace(model, res.mode)


def cmd_check_derivs(args, started):
    if args.counts is not None or args.data is not None:
        model, x0, info = _load_model(args)
        rng = np.random.default_rng(args.seed)
        res, fit = _fit(model, x0)
        pts = [res.mode] + [fit.unwhiten(0.5 * rng.standard_normal(model.dim)) for _ in range(args.points - 1)]
        from .model import check_derivatives

        reports = [(info["model"], check_derivatives(model, p, tol=args.tol, seed=args.seed + i))
                   for i, p in enumerate(pts)]
    else:
        reports = ex.derivative_check_suite(args.points, args.seed, args.tol)
    passed = all(r.passed for _, r in reports)
    _emit({"passed": passed, "checks": [{"model": name, **r.to_dict()} for name, r in reports]}, args, started)
    return EXIT_OK if passed else EXIT_NUMERIC


def cmd_fit(args, started):
    model, x0, info = _load_model(args)
    res, fit = _fit(model, x0)
    sc = build_skew(model, fit)
    _emit({
        **info,
        "mode": fit.mode, "iterations": res.iterations, "converged": res.converged,
        "fallbacks": res.fallbacks, "covariance": fit.covariance(), "log_det_hess": fit.log_det_hess,
        "delta_mode": sc.delta_mode, "corrected_mean": fit.mode + sc.delta_mode,
        "corrected_covariance": corrected_covariance(model, fit), "eps_bar3": sc.eps_bar3,
    }, args, started)
    return EXIT_OK


def cmd_diagnose(args, started):
    model, x0, info = _load_model(args)
    _, fit = _fit(model, x0)
    sc = build_skew(model, fit)
    rep = assemble_report(
        model, fit, sc, s=args.radius, restarts=args.restarts, mc_count=args.mc_count,
        growth_coeff=args.growth_coeff, seed=args.seed,
    )
    _emit({**rep.to_dict(), "input": info}, args, started)
    return EXIT_OK


def _table_out(result: ex.ExperimentResult, args, started, series=None, title="", ylabel=""):
    if args.out:
        ex.write_table(result.rows, args.out)
    if args.svg and series:
        ex.render_loglog_svg(series, args.svg, title, "n" if "n" in title else "d", ylabel)
    _emit(result.to_dict(), args, started)
    return EXIT_OK


def _rate_series(rows, xkey="n"):
    x = [r[xkey] for r in rows]
    return [
        {"label": "Laplace", "x": x, "y": [r["err_uncorrected"] for r in rows],
         "lo": [r["err_uncorrected_q25"] for r in rows], "hi": [r["err_uncorrected_q75"] for r in rows]},
        {"label": "skew-corrected", "x": x, "y": [r["err_corrected"] for r in rows],
         "lo": [r["err_corrected_q25"] for r in rows], "hi": [r["err_corrected_q75"] for r in rows]},
    ]


def cmd_exp(args, started):
    kind = args.kind
    if kind == "mean-rate":
        res = ex.run_mean_rate(args.n_list or ex.DESK_N_LIST, args.replicates or 10, args.seed,
                               prior_precision=args.prior_precision, workers=args.workers)
        return _table_out(res, args, started, _rate_series(res.rows), "mean error vs n", "whitened error")
    if kind == "prob-rate":
        res = ex.run_prob_rate(args.n_list or ex.DESK_N_LIST, args.replicates or 10, args.seed,
                               mc_count=args.mc_count or 1_000_000, antithetic=not args.plain_mc,
                               prior_precision=args.prior_precision, workers=args.workers)
        return _table_out(res, args, started, _rate_series(res.rows), "P(b1 >= mode1) error vs n", "error")
    if kind == "dim-scan":
        d_list = args.d_list or (ex.FULL_D_LIST if args.full_scale else ex.DESK_D_LIST)
        res = ex.run_dim_scan(d_list, args.replicates or 20, args.seed, mc_count=args.mc_count or 20_000,
                              prior_precision=args.prior_precision, workers=args.workers)
        series = []
        for regime in ex.REGIMES:
            rows = [r for r in res.rows if r["regime"] == regime]
            series.append({"label": f"L_TV, n={regime}", "x": [r["d"] for r in rows], "y": [r["ltv"] for r in rows],
                           "lo": [r["ltv_q10"] for r in rows], "hi": [r["ltv_q90"] for r in rows]})
        return _table_out(res, args, started, series, "leading terms vs d", "L_TV")
    if kind == "multinomial":
        if args.counts is None:
            raise UsageError("exp multinomial needs --counts")
        if args.n_list:
            p = mn.build(args.counts).freqs
            res = ex.run_multinomial_scan(p, args.n_list)
            series = [{"label": "TV(pi, Laplace)", "x": [r["n"] for r in res.rows], "y": [r["tv_laplace"] for r in res.rows]},
                      {"label": "TV(pi, corrected)", "x": [r["n"] for r in res.rows],
                       "y": [r["tv_skew_corrected"] for r in res.rows]}]
            return _table_out(res, args, started, series, "TV vs n", "TV")
        out = ex.run_multinomial_exact(args.counts, mc_count=args.mc_count or 100_000, seed=args.seed)
        _emit(out, args, started)
        return EXIT_OK
    raise UsageError(f"unknown experiment {kind!r}")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--counts", type=_counts, help="multinomial counts: 'N0,N1,...' or a one-column CSV")
    common.add_argument("--data", help="logistic-regression CSV with columns y,x1..xd")
    common.add_argument("--prior-precision", type=float, default=0.0, help="Gaussian prior precision kappa (kappa*I)")
    common.add_argument("--mc-count", type=int, default=None)
    common.add_argument("--json", help="also write the JSON payload here")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="skewlap", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("check-derivs", parents=[common], help="finite-difference derivative checks")
    c.add_argument("--points", type=int, default=20)
    c.add_argument("--tol", type=float, default=1e-4)
    c.set_defaults(func=cmd_check_derivs)

    c = sub.add_parser("fit", parents=[common], help="Laplace fit and skew correction")
    c.set_defaults(func=cmd_fit)

    c = sub.add_parser("diagnose", parents=[common], help="error diagnostics report")
    c.add_argument("--restarts", type=int, default=20)
    c.add_argument("--radius", type=float, default=None)
    c.add_argument("--growth-coeff", type=float, default=1.0)
    c.set_defaults(func=cmd_diagnose)

    c = sub.add_parser("exp", parents=[common], help="reproduce an experiment")
    c.add_argument("kind", choices=["mean-rate", "prob-rate", "dim-scan", "multinomial"])
    c.add_argument("--n-list", type=_int_list)
    c.add_argument("--d-list", type=_int_list)
    c.add_argument("--replicates", type=int)
    c.add_argument("--workers", type=int, default=1)
    c.add_argument("--plain-mc", action="store_true", help="prob-rate: plain instead of antithetic draws")
    c.add_argument("--out", help="CSV table path")
    c.add_argument("--svg", help="SVG plot path")
    c.add_argument("--full-scale", action="store_true", help="full ranges: d up to 80 (slow)")
    c.set_defaults(func=cmd_exp)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if getattr(args, "mc_count", None) is not None and args.mc_count < 2:
        parser.error("--mc-count must be >= 2")
    started = time.perf_counter()
    try:
        return args.func(args, started)
    except (UsageError, ValueError, UnsupportedError, DomainError, FileNotFoundError) as exc:
        print(f"skewlap: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NotPositiveDefinite, SkewLapError, MemoryError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"skewlap: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
