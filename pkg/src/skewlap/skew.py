"""Skew-corrected Laplace approximation ``d gamma_S = (1 + S) d gamma``.

``S(x) = -(1/6) <nabla^3 V(mode), (x - mode)^{(x)3}>`` is a cubic that is odd
about the mode, so ``gamma_S`` is a signed measure with total mass one.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .laplace import LaplaceFit, WhitenedThird, shard_generator, SHARD_SIZE, whitened_third
from .model import PosteriorModel, SkewLapError


@dataclass(frozen=True)
class SkewCorrection:
    fit: LaplaceFit
    tensor: WhitenedThird
    delta_mode: np.ndarray
    eps_bar3: float


def mean_shift(model: PosteriorModel, fit: LaplaceFit) -> np.ndarray:
    """``delta = -1/2 H^{-1} <nabla^3 V(mode), H^{-1}>``."""
    Hinv = fit.covariance()
    return -0.5 * fit.solve(model.third_mat(fit.mode, Hinv))


def build_skew(model: PosteriorModel, fit: LaplaceFit, representation: str = "auto") -> SkewCorrection:
    from .diagnostics import eps_bar3

    tensor = whitened_third(model, fit, representation)
    return SkewCorrection(fit, tensor, mean_shift(model, fit), eps_bar3(tensor))


def eval_skew(sc: SkewCorrection, x) -> np.ndarray | float:
    """``S`` at a point or at each row of a batch (model coordinates)."""
    x = np.asarray(x, dtype=float)
    z = sc.fit.whiten(np.atleast_2d(x))
    s = -sc.tensor.cubes(z) / 6.0
    return float(s[0]) if x.ndim == 1 else s


def skew_whitened(sc: SkewCorrection, Z) -> np.ndarray:
    """``S`` at whitened rows ``z`` (i.e. at ``mode + L^{-T} z``)."""
    return -sc.tensor.cubes(np.atleast_2d(Z)) / 6.0


def corrected_mean(model: PosteriorModel, fit: LaplaceFit) -> np.ndarray:
    return fit.mode + mean_shift(model, fit)


def corrected_mgf_ratio(sc: SkewCorrection, u) -> float:
    """``M_{gamma_S}(u) / M_gamma(u)`` for the whitened mgf, ``u`` in whitened coordinates."""
    u = np.asarray(u, dtype=float).reshape(-1)
    T = sc.tensor
    return float(1.0 - T.contract(u, u, u) / 6.0 - T.trace_vector() @ u / 2.0)


def corrected_covariance(model: PosteriorModel, fit: LaplaceFit) -> np.ndarray:
    """Covariance of ``gamma_S`` about its own mean: ``H^{-1} - delta delta^T``."""
    delta = mean_shift(model, fit)
    return fit.covariance() - np.outer(delta, delta)


# ---------------------------------------------------------------------------
# Monte Carlo against gamma_S
# ---------------------------------------------------------------------------


@dataclass
class MCResult:
    estimate: np.ndarray | float
    std_error: np.ndarray | float
    count: int
    nonfinite: int = 0
    negative: bool = False

    def to_dict(self) -> dict:
        return {
            "estimate": np.asarray(self.estimate).tolist(),
            "std_error": np.asarray(self.std_error).tolist(),
            "count": self.count,
            "nonfinite": self.nonfinite,
            "negative": self.negative,
        }


def _shard_stats(values: np.ndarray):
    finite = np.all(np.isfinite(values.reshape(len(values), -1)), axis=1)
    v = values[finite]
    m = len(v)
    if m == 0:
        return 0, np.zeros(values.shape[1:]), np.zeros(values.shape[1:]), int((~finite).sum())
    mean = v.mean(axis=0)
    m2 = ((v - mean) ** 2).sum(axis=0)
    return m, mean, m2, int((~finite).sum())


def _combine(stats):
    """Chan et al. pairwise update, applied in shard order."""
    n, mean, m2, bad = 0, None, None, 0
    for m, mu, s2, b in stats:
        bad += b
        if m == 0:
            continue
        if n == 0:
            n, mean, m2 = m, mu, s2
            continue
        delta = mu - mean
        tot = n + m
        mean = mean + delta * (m / tot)
        m2 = m2 + s2 + delta**2 * (n * m / tot)
        n = tot
    return n, mean, m2, bad


def mc_gaussian_mean(
    fn: Callable[[np.ndarray], np.ndarray],
    d: int,
    count: int,
    seed: int,
    antithetic: bool = False,
    workers: int = 1,
    shard_size: int = SHARD_SIZE,
    max_nonfinite_frac: float = 1e-3,
) -> MCResult:
    """Mean and standard error of ``fn(Z)`` over standard normal rows ``Z``.

    Draws are split in fixed-size shards seeded by ``(seed, shard)``; shard
    statistics are merged in index order, so the result does not depend on
    ``workers``.  With ``antithetic`` the unit of averaging is the pair
    ``(fn(z) + fn(-z)) / 2`` and ``count`` draws form ``count // 2`` pairs.
    """
    if count < 2:
        raise ValueError("count must be >= 2")
    if antithetic:
        units = count // 2
        if units < 2:
            raise ValueError("antithetic sampling needs count >= 4")
    else:
        units = count
    starts = list(range(0, units, shard_size))

    def run(i):
        m = min(shard_size, units - starts[i])
        Z = shard_generator(seed, i).standard_normal((m, d))
        vals = np.asarray(fn(Z), dtype=float)
        if antithetic:
            vals = 0.5 * (vals + np.asarray(fn(-Z), dtype=float))
        return _shard_stats(vals)

    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            stats = list(ex.map(run, range(len(starts))))
    else:
        stats = [run(i) for i in range(len(starts))]
    n, mean, m2, bad = _combine(stats)
    if bad > max_nonfinite_frac * units:
        raise SkewLapError(f"{bad} of {units} Monte Carlo evaluations were non-finite")
    var = m2 / (n - 1)
    se = np.sqrt(var / n)
    if np.ndim(mean) == 0:
        mean, se = float(mean), float(se)
    return MCResult(mean, se, n, bad)


def corrected_integral_mc(
    sc: SkewCorrection,
    g: Callable[[np.ndarray], np.ndarray],
    count: int,
    seed: int,
    antithetic: bool = False,
    workers: int = 1,
) -> MCResult:
    """Estimate ``int g d gamma_S = E[g(X)(1 + S(X))]`` with ``X ~ gamma``.

    ``g`` receives a batch of points in model coordinates (rows) and returns
    one value per row, or a row of values.  Set probabilities are returned
    unclamped; ``negative`` flags a negative estimate of a nonnegative
    observable.
    """
    fit = sc.fit

    def integrand(Z):
        X = fit.unwhiten(Z)
        weight = 1.0 - sc.tensor.cubes(Z) / 6.0
        vals = np.asarray(g(X), dtype=float)
        return vals * (weight if vals.ndim == 1 else weight[:, None])

    res = mc_gaussian_mean(integrand, fit.dim, count, seed, antithetic=antithetic, workers=workers)
    res.negative = bool(np.any(np.asarray(res.estimate) < 0))
    return res
