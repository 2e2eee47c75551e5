"""Rate experiments for the logistic and multinomial examples, plus table/plot output."""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import logistic as lg
from . import multinomial as mn
from .diagnostics import eps_from_opnorm, ltv_mc, weighted_opnorm
from .laplace import find_mode, fit_laplace, whitened_third
from .model import SkewLapError, UnsupportedError
from .quadrature import QuadratureGrid, halfspace_probability, ltv_quadrature, true_mean, true_tv
from .skew import build_skew, corrected_integral_mc, mean_shift

DESK_N_LIST = (20, 40, 80, 160, 320, 640)
DESK_D_LIST = (10, 14, 20, 28, 40)
FULL_D_LIST = (10, 14, 20, 28, 40, 56, 80)
MAX_REDRAWS = 50


def loglog_slope(points) -> float:
    """Least-squares slope of ``log y`` against ``log x``."""
    pts = [(float(x), float(y)) for x, y in points]
    if len(pts) < 2:
        raise ValueError("need at least two points")
    if any(x <= 0 or y <= 0 or not (math.isfinite(x) and math.isfinite(y)) for x, y in pts):
        raise ValueError("points must be positive and finite")
    lx = np.log([p[0] for p in pts])
    ly = np.log([p[1] for p in pts])
    if np.ptp(lx) == 0:
        raise ValueError("x values must not all be equal")
    return float(np.polyfit(lx, ly, 1)[0])


def replicate_seed(seed: int, *keys: int) -> int:
    """Stable 63-bit seed derived from ``(seed, *keys)``."""
    state = np.random.SeedSequence([int(seed), *map(int, keys)]).generate_state(2, np.uint32)
    return int(state[0]) << 31 | int(state[1]) >> 1


def _map(fn, items, workers: int):
    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            return list(ex.map(fn, items))
    return [fn(i) for i in items]


def _band(values, lo=0.25, hi=0.75):
    v = np.asarray(values, dtype=float)
    return float(np.quantile(v, lo)), float(np.quantile(v, hi))


@dataclass
class ExperimentResult:
    """Rows of a results table plus fitted slopes and bookkeeping notes."""

    kind: str
    rows: list[dict]
    slopes: dict = field(default_factory=dict)
    notes: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "rows": self.rows, "slopes": self.slopes, "notes": self.notes}


# ---------------------------------------------------------------------------
# logistic regression replicates
# ---------------------------------------------------------------------------


@dataclass
class Replicate:
    post: lg.LogRegPosterior
    fit: object
    attempts: int


def logistic_replicate(n: int, d: int, seed: int, rep: int, prior_precision: float = 0.0) -> Replicate:
    """Draw ``n`` samples with ``beta = e_1`` and ``M = I``; redraw while the MAP does not exist.

    Under a flat prior a finite mode exists only without complete
    separation.  Failing draws are replaced by the next attempt seed and
    the number of attempts is recorded.
    """
    beta = np.zeros(d)
    beta[0] = 1.0
    for attempt in range(MAX_REDRAWS):
        ds = lg.generate_data(n, d, beta, seed=replicate_seed(seed, n, d, rep, attempt))
        post = lg.build_posterior(ds, prior_precision)
        res = find_mode(post.model, np.zeros(d))
        if res.converged and not res.diverged:
            return Replicate(post, fit_laplace(post.model, res.mode), attempt + 1)
    raise SkewLapError(f"no finite mode in {MAX_REDRAWS} draws (n={n}, d={d})")


def _redraw_note(reps, label):
    extra = sum(r.attempts - 1 for r in reps)
    return f"{label}: {extra} redraw(s) for datasets without a finite mode" if extra else None


def run_mean_rate(
    n_list=DESK_N_LIST,
    replicates: int = 10,
    seed: int = 0,
    d: int = 2,
    prior_precision: float = 0.0,
    nodes_per_axis: int | None = None,
    half_width: float = 12.0,
    workers: int = 1,
) -> ExperimentResult:
    """Whitened mean error of the mode and of the skew-corrected mean against quadrature."""
    if d > 3:
        raise UnsupportedError("mean-rate needs the quadrature oracle (d <= 3)")
    rows, notes = [], []
    for n in n_list:
        def one(rep):
            r = logistic_replicate(n, d, seed, rep, prior_precision)
            grid = QuadratureGrid.build(d, nodes_per_axis, half_width)
            truth = true_mean(r.post.model, r.fit, grid)
            delta = mean_shift(r.post.model, r.fit)
            return r, r.fit.hnorm(truth - r.fit.mode), r.fit.hnorm(truth - r.fit.mode - delta)

        out = _map(one, range(replicates), workers)
        unc = [o[1] for o in out]
        cor = [o[2] for o in out]
        note = _redraw_note([o[0] for o in out], f"n={n}")
        if note:
            notes.append(note)
        rows.append(_rate_row(n, unc, cor))
    return ExperimentResult("mean-rate", rows, _rate_slopes(rows), notes)


def run_prob_rate(
    n_list=DESK_N_LIST,
    replicates: int = 10,
    seed: int = 0,
    d: int = 2,
    mc_count: int = 1_000_000,
    antithetic: bool = True,
    prior_precision: float = 0.0,
    nodes_per_axis: int | None = None,
    half_width: float = 12.0,
    workers: int = 1,
) -> ExperimentResult:
    """Error in ``P(b_1 >= b_hat_1)``: quadrature truth vs 1/2 and vs the Monte Carlo ``gamma_S`` value.

    ``antithetic`` pairs ``z`` with ``-z``.  For this event the pair average
    is ``1/2 + sign(z_1) S(z) / 2``, which removes the Bernoulli variance
    that otherwise puts the Monte Carlo noise floor above the corrected
    error for ``n >= 160`` at ``10^6`` draws.
    """
    if d > 3:
        raise UnsupportedError("prob-rate needs the quadrature oracle (d <= 3)")
    e1 = np.zeros(d)
    e1[0] = 1.0
    rows, notes = [], []
    for n in n_list:
        def one(rep):
            r = logistic_replicate(n, d, seed, rep, prior_precision)
            model, fit = r.post.model, r.fit
            p_true = halfspace_probability(model, fit, e1, nodes_per_axis=nodes_per_axis, half_width=half_width)
            sc = build_skew(model, fit, "dense")
            b1 = fit.mode[0]
            mc = corrected_integral_mc(
                sc, lambda X: (X[:, 0] >= b1).astype(float), mc_count,
                replicate_seed(seed, n, rep, 1 << 20), antithetic=antithetic,
            )
            return r, abs(p_true - 0.5), abs(p_true - mc.estimate), mc.std_error

        out = _map(one, range(replicates), workers)
        note = _redraw_note([o[0] for o in out], f"n={n}")
        if note:
            notes.append(note)
        row = _rate_row(n, [o[1] for o in out], [o[2] for o in out])
        row["mc_std_error"] = float(np.mean([o[3] for o in out]))
        rows.append(row)
    return ExperimentResult("prob-rate", rows, _rate_slopes(rows), notes)


def _rate_row(n, unc, cor) -> dict:
    ulo, uhi = _band(unc)
    clo, chi = _band(cor)
    return {
        "n": int(n),
        "err_uncorrected": float(np.mean(unc)),
        "err_uncorrected_q25": ulo,
        "err_uncorrected_q75": uhi,
        "err_corrected": float(np.mean(cor)),
        "err_corrected_q25": clo,
        "err_corrected_q75": chi,
    }


def _rate_slopes(rows) -> dict:
    return {
        "uncorrected": loglog_slope([(r["n"], r["err_uncorrected"]) for r in rows]),
        "corrected": loglog_slope([(r["n"], r["err_corrected"]) for r in rows]),
    }


REGIMES = {"2d^2": lambda d: 2 * d * d, "d^2.5": lambda d: int(round(d**2.5))}


def run_dim_scan(
    d_list=DESK_D_LIST,
    replicates: int = 20,
    seed: int = 0,
    mc_count: int = 20_000,
    prior_precision: float = 0.0,
    workers: int = 1,
) -> ExperimentResult:
    """``L_TV`` (Monte Carlo) and ``||delta||_{H_V}`` for ``n = 2 d^2`` and ``n = d^{2.5}``."""
    rows, notes = [], []
    for regime, n_of in REGIMES.items():
        for d in d_list:
            n = n_of(d)

            def one(rep):
                r = logistic_replicate(n, d, seed, rep, prior_precision)
                tensor = whitened_third(r.post.model, r.fit, "dense")
                ltv = ltv_mc(tensor, mc_count, replicate_seed(seed, n, d, rep, 1 << 20))
                return r, ltv.estimate, r.fit.hnorm(mean_shift(r.post.model, r.fit))

            out = _map(one, range(replicates), workers)
            note = _redraw_note([o[0] for o in out], f"{regime}, d={d}")
            if note:
                notes.append(note)
            lt, dl = [o[1] for o in out], [o[2] for o in out]
            lt_lo, lt_hi = _band(lt, 0.1, 0.9)
            dl_lo, dl_hi = _band(dl, 0.1, 0.9)
            rows.append({
                "regime": regime, "d": int(d), "n": int(n),
                "ltv": float(np.mean(lt)), "ltv_q10": lt_lo, "ltv_q90": lt_hi,
                "delta_norm": float(np.mean(dl)), "delta_norm_q10": dl_lo, "delta_norm_q90": dl_hi,
            })
    flat = [r["ltv"] for r in rows if r["regime"] == "2d^2"]
    steep = [r for r in rows if r["regime"] == "d^2.5"]
    slopes = {
        "ltv_d2.5": loglog_slope([(r["d"], r["ltv"]) for r in steep]),
        "delta_d2.5": loglog_slope([(r["d"], r["delta_norm"]) for r in steep]),
        "ltv_2d2_max_over_min": max(flat) / min(flat),
    }
    return ExperimentResult("dim-scan", rows, slopes, notes)


# ---------------------------------------------------------------------------
# multinomial
# ---------------------------------------------------------------------------


def run_multinomial_exact(
    counts,
    mc_count: int = 100_000,
    seed: int = 0,
    restarts: int = 20,
    nodes_per_axis: int | None = None,
) -> dict:
    """Closed forms next to generic-pipeline values for one count vector."""
    mp = mn.build(counts)
    ex = mn.exact_quantities(mp)
    model = mp.model
    res = find_mode(model, np.full(mp.dim, 1.0 / (mp.dim + 1)))
    fit = fit_laplace(model, res.mode)
    sc = build_skew(model, fit)
    op = weighted_opnorm(model, fit, 3, 0.0, restarts, seed)
    generic_mean_gap = (fit.mode + sc.delta_mode) - mp.mode
    out = {
        "counts": [int(c) for c in mp.counts],
        "n": mp.n,
        "d": mp.dim,
        "mode_converged": bool(res.converged),
        "eps_bar3": {"exact": ex["eps_bar3_exact"], "generic": sc.eps_bar3},
        "eps3": {"exact": ex["eps3_exact"], "generic": eps_from_opnorm(3, op.tensor_norm, mp.dim),
                 "converged": op.converged},
        "delta_mode": {"exact": ex["delta_mode"][1:].tolist(), "generic": sc.delta_mode.tolist()},
        "delta_mode_max_abs_diff": float(np.max(np.abs(sc.delta_mode - ex["delta_mode"][1:]))),
        "skew_norm": {"exact": ex["skew_norm"], "generic": fit.hnorm(sc.delta_mode)},
        "mean_identity_residual": float(np.max(np.abs(ex["mean_minus_mode_identity"]))),
        "generic_corrected_mean_gap": generic_mean_gap.tolist(),
        "chi2_unif": ex["chi2_unif"],
        "d2_over_n_pmin": ex["d2_over_n_pmin"],
        "tv_lower_bound": mn.tv_lower_bound(mp),
    }
    ltv = ltv_mc(sc.tensor, mc_count, seed)
    out["ltv_mc"] = {"value": ltv.estimate, "std_error": ltv.std_error}
    if mp.dim <= 2:
        grid = QuadratureGrid.build(mp.dim, nodes_per_axis)
        tv = true_tv(model, fit, "laplace", grid)
        ltv_q = ltv_quadrature(sc, grid)
        out["quadrature"] = {
            "tv_laplace": tv,
            "tv_skew_corrected": true_tv(model, fit, "skew_corrected", grid, sc),
            "ltv": ltv_q,
            "rtv": tv - ltv_q,
        }
    return out


def scaled_counts(p, n: int) -> np.ndarray:
    """Integer counts summing to ``n`` with frequencies as close to ``p`` as rounding allows."""
    p = np.asarray(p, dtype=float)
    raw = p * n
    c = np.floor(raw).astype(int)
    for j in np.argsort(-(raw - c))[: n - c.sum()]:
        c[j] += 1
    return c


def run_multinomial_scan(p, n_list, nodes_per_axis: int | None = None) -> ExperimentResult:
    """Quadrature TV to the Laplace and corrected fits, and ``L_TV``, as counts scale."""
    rows = []
    for n in n_list:
        mp = mn.build(scaled_counts(p, n))
        if mp.dim > 2:
            raise UnsupportedError("the scan uses quadrature and needs d <= 2")
        fit = fit_laplace(mp.model, mp.mode)
        sc = build_skew(mp.model, fit)
        grid = QuadratureGrid.build(mp.dim, nodes_per_axis)
        tv = true_tv(mp.model, fit, "laplace", grid)
        ltv = ltv_quadrature(sc, grid)
        rows.append({
            "n": mp.n,
            "tv_laplace": tv,
            "tv_skew_corrected": true_tv(mp.model, fit, "skew_corrected", grid, sc),
            "ltv": ltv,
            "rel_remainder": abs(tv - ltv) / ltv if ltv > 0 else float("nan"),
            "tv_lower_bound": mn.tv_lower_bound(mp),
        })
    slopes = {
        "tv_laplace": loglog_slope([(r["n"], r["tv_laplace"]) for r in rows]),
        "tv_skew_corrected": loglog_slope([(r["n"], r["tv_skew_corrected"]) for r in rows]),
    }
    return ExperimentResult("multinomial-scan", rows, slopes)


# ---------------------------------------------------------------------------
# output
# ---------------------------------------------------------------------------


def write_table(rows: list[dict], path) -> None:
    """CSV with a header; floats written with ``repr`` so they re-read exactly."""
    if not rows:
        raise ValueError("no rows to write")
    cols = list(rows[0])
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for r in rows:
            w.writerow(["" if r[c] is None else repr(r[c]) if isinstance(r[c], float) else r[c] for c in cols])


def read_table(path) -> list[dict]:
    def parse(v):
        if v == "":
            return None
        for cast in (int, float):
            try:
                return cast(v)
            except ValueError:
                pass
        return v

    with open(Path(path), newline="") as fh:
        return [{k: parse(v) for k, v in r.items()} for r in csv.DictReader(fh)]


PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e")


def render_loglog_svg(series: list[dict], path, title: str = "", xlabel: str = "", ylabel: str = "") -> None:
    """Minimal log-log line plot.

    Each series is a dict with ``label``, ``x``, ``y`` and optionally
    ``lo``/``hi`` for a shaded band.
    """
    W, H, m = 640, 420, 60
    xs = np.concatenate([np.asarray(s["x"], float) for s in series])
    ys = np.concatenate([np.asarray(s[k], float) for s in series for k in ("y", "lo", "hi") if k in s])
    ys = ys[ys > 0]
    lx0, lx1 = np.log10(xs.min()), np.log10(xs.max())
    ly0, ly1 = np.log10(ys.min()), np.log10(ys.max())
    if lx1 == lx0:
        lx1 += 1
    if ly1 == ly0:
        ly1 += 1
    ly0, ly1 = ly0 - 0.05 * (ly1 - ly0), ly1 + 0.05 * (ly1 - ly0)

    def px(x):
        return m + (np.log10(x) - lx0) / (lx1 - lx0) * (W - 2 * m)

    def py(y):
        return H - m - (np.log10(max(y, 10**ly0)) - ly0) / (ly1 - ly0) * (H - 2 * m)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="12">',
        f'<rect width="{W}" height="{H}" fill="white"/>',
        f'<rect x="{m}" y="{m}" width="{W - 2 * m}" height="{H - 2 * m}" fill="none" stroke="black"/>',
    ]
    for e in range(math.ceil(lx0), math.floor(lx1) + 1):
        x = px(10.0**e)
        parts.append(f'<line x1="{x:.1f}" y1="{H - m}" x2="{x:.1f}" y2="{H - m + 5}" stroke="black"/>')
        parts.append(f'<text x="{x:.1f}" y="{H - m + 18}" text-anchor="middle">1e{e}</text>')
    for e in range(math.ceil(ly0), math.floor(ly1) + 1):
        y = py(10.0**e)
        parts.append(f'<line x1="{m - 5}" y1="{y:.1f}" x2="{m}" y2="{y:.1f}" stroke="black"/>')
        parts.append(f'<text x="{m - 8}" y="{y + 4:.1f}" text-anchor="end">1e{e}</text>')
    for i, s in enumerate(series):
        col = PALETTE[i % len(PALETTE)]
        x = np.asarray(s["x"], float)
        if "lo" in s and "hi" in s:
            pts = [(px(a), py(b)) for a, b in zip(x, s["hi"])] + [(px(a), py(b)) for a, b in zip(x[::-1], s["lo"][::-1])]
            poly = " ".join(f"{a:.1f},{b:.1f}" for a, b in pts)
            parts.append(f'<polygon points="{poly}" fill="{col}" fill-opacity="0.2" stroke="none"/>')
        line = " ".join(f"{px(a):.1f},{py(b):.1f}" for a, b in zip(x, s["y"]))
        parts.append(f'<polyline points="{line}" fill="none" stroke="{col}" stroke-width="2"/>')
        parts.append(f'<text x="{W - m - 5}" y="{m + 16 * (i + 1)}" text-anchor="end" fill="{col}">{s["label"]}</text>')
    parts.append(f'<text x="{W / 2}" y="{m / 2}" text-anchor="middle" font-size="14">{title}</text>')
    parts.append(f'<text x="{W / 2}" y="{H - 15}" text-anchor="middle">{xlabel}</text>')
    parts.append(f'<text x="15" y="{H / 2}" text-anchor="middle" transform="rotate(-90 15 {H / 2})">{ylabel}</text>')
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n")


# ---------------------------------------------------------------------------
# derivative checks on the bundled models
# ---------------------------------------------------------------------------


def bundled_models(seed: int = 0):
    """``(name, model, point_sampler)`` for every model shipped with the package."""
    from .model import QuadraticModel

    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 7]))
    A = rng.standard_normal((3, 3))
    quad = QuadraticModel(A @ A.T + 3 * np.eye(3), center=rng.standard_normal(3))
    counts = np.array([30, 40, 20, 10])
    dirichlet = mn.build(counts).model
    ds = lg.generate_data(200, 3, np.array([1.0, 0.0, 0.0]), seed=seed)
    logreg = lg.build_posterior(ds, 1.0).model
    pop = lg.PopulationLogistic(3, 1000).model()
    return [
        ("quadratic", quad, lambda r: r.standard_normal(3)),
        ("dirichlet", dirichlet, lambda r: r.dirichlet(counts + 1.0)[1:]),
        ("logistic", logreg, lambda r: r.standard_normal(3)),
        ("population-logistic", pop, lambda r: np.array([1.0, 0.0, 0.0]) + 0.3 * r.standard_normal(3)),
    ]


def derivative_check_suite(points: int = 20, seed: int = 0, tol: float = 1e-4):
    """Finite-difference checks of every bundled model at ``points`` random points each."""
    from .model import check_derivatives

    out = []
    for name, model, sampler in bundled_models(seed):
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), len(name)]))
        for i in range(points):
            out.append((name, check_derivatives(model, sampler(rng), tol=tol, seed=seed + i)))
    return out
