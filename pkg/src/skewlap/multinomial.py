"""Dirichlet posterior of multinomial frequencies, with exact reference formulas.

Counts ``N_0..N_d`` under a flat prior give ``theta ~ Dir(N + 1)``.  The
model works in the marginal coordinates ``theta_1..theta_d`` with
``theta_0 = 1 - sum(theta)``, where the potential is

    V(theta) = -sum_{j=0}^d N_j log theta_j = n * v(theta),

so the mode is exactly ``p = N / n``.  Every derivative of ``V`` of order
``k`` is a sum of ``d + 1`` rank-one powers: ``w_j m_j^{(x)k}`` with
``w_j = (-1)^k (k-1)! N_j / theta_j^k``, ``m_0 = -1`` and ``m_j = e_j``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .model import DomainError, PosteriorModel, SkewLapError


class DirichletModel(PosteriorModel):
    max_order = 5
    has_rank_one = True

    def __init__(self, counts):
        self.counts = np.asarray(counts, dtype=float)
        self.dim = len(self.counts) - 1
        self.n_scale = float(self.counts.sum())
        m = np.zeros((self.dim + 1, self.dim))
        m[0] = -1.0
        m[1:] = np.eye(self.dim)
        self._rows = m

    def full(self, x) -> np.ndarray:
        """``(theta_0, theta_1, ..., theta_d)`` from the marginal coordinates."""
        x = np.asarray(x, dtype=float)
        return np.concatenate([[1.0 - x.sum()], x]) if x.ndim == 1 else np.column_stack([1.0 - x.sum(axis=1), x])

    def domain_guard(self, x) -> bool:
        th = self.full(np.asarray(x, dtype=float).reshape(-1))
        return bool(np.all(np.isfinite(th)) and np.all(th > 0))

    def _theta(self, x):
        th = self.full(np.asarray(x, dtype=float).reshape(-1))
        if not np.all(th > 0):
            raise DomainError("point outside the open simplex")
        return th

    def value(self, x):
        return float(-self.counts @ np.log(self._theta(x)))

    def value_batch(self, xs):
        th = self.full(np.atleast_2d(np.asarray(xs, dtype=float)))
        ok = np.all(th > 0, axis=1)
        out = np.full(len(th), np.inf)
        out[ok] = -np.log(th[ok]) @ self.counts
        return out

    def gradient(self, x):
        th = self._theta(x)
        return -self.counts[1:] / th[1:] + self.counts[0] / th[0]

    def hessian(self, x):
        th = self._theta(x)
        w = self.counts / th**2
        return np.diag(w[1:]) + w[0]

    def rank_one_terms(self, x, k):
        th = self._theta(x)
        w = (-1.0) ** k * math.factorial(k - 1) * self.counts / th**k
        return w, self._rows


@dataclass(frozen=True)
class MultinomialPosterior:
    counts: np.ndarray
    n: int
    freqs: np.ndarray
    p_min: float
    model: DirichletModel

    @property
    def dim(self) -> int:
        return len(self.counts) - 1

    @property
    def mode(self) -> np.ndarray:
        """Mode in the marginal coordinates ``theta_1..theta_d``."""
        return self.freqs[1:].copy()


def build(counts) -> MultinomialPosterior:
    """Validate counts ``N_0..N_d`` (positive integers, ``d >= 1``) and build the posterior."""
    raw = np.asarray(counts)
    if raw.ndim != 1 or len(raw) < 2:
        raise ValueError("need at least two counts")
    if not np.all(np.isfinite(raw.astype(float))) or np.any(raw.astype(float) != np.round(raw.astype(float))):
        raise ValueError("counts must be integers")
    c = raw.astype(np.int64)
    if np.any(c <= 0):
        raise ValueError("all counts must be positive")
    n = int(c.sum())
    freqs = c / n
    return MultinomialPosterior(c, n, freqs, float(freqs.min()), DirichletModel(c))


def read_counts(path) -> np.ndarray:
    """Counts from a one-column CSV (an optional non-numeric header row is skipped)."""
    vals = []
    with open(Path(path), newline="") as fh:
        for row in csv.reader(fh):
            if not row or not row[0].strip():
                continue
            try:
                vals.append(int(row[0]))
            except ValueError:
                if vals:
                    raise
    return np.array(vals)


def chi2_from_uniform(p) -> float:
    """``chi^2(Unif || p) = sum_j p_j^{-1} / (d+1)^2 - 1``."""
    p = np.asarray(p, dtype=float)
    return float(np.sum(1.0 / p) / len(p) ** 2 - 1.0)


def tv_from_uniform(p) -> float:
    p = np.asarray(p, dtype=float)
    return 0.5 * float(np.sum(np.abs(1.0 / len(p) - p)))


def c3_exact(p_min: float) -> float:
    """``c_3 = 2 (1 - 2 p_min) / sqrt(p_min (1 - p_min))``."""
    return 2.0 * (1.0 - 2.0 * p_min) / math.sqrt(p_min * (1.0 - p_min))


def ck_two_block(k: int, p) -> float:
    """``(k-1)! |(1-P)^{k-1} + (-1)^k P^{k-1}| / (P(1-P))^{k/2-1}``, maximized over subset totals ``P``.

    This is ``<nabla^k v(p), u^{(x)k}>`` for the unit (``H_v``-norm)
    direction that moves mass between two blocks of categories with total
    ``P`` and ``1 - P``.  It equals ``c_k(0)`` for ``d = 1`` and is a lower
    bound on it otherwise; tests use it as a sandwich end.
    """
    p = np.asarray(p, dtype=float)
    m = len(p)
    best = 0.0
    for mask in range(1, 2 ** (m - 1)):
        P = float(sum(p[j] for j in range(m) if mask >> j & 1))
        if not 0.0 < P < 1.0:
            continue
        val = math.factorial(k - 1) * abs((1 - P) ** (k - 1) + (-1) ** k * P ** (k - 1))
        best = max(best, val / (P * (1 - P)) ** (k / 2.0 - 1.0))
    return best


def exact_quantities(mp: MultinomialPosterior) -> dict:
    """Closed forms for the Dirichlet posterior.

    Vectors (``mode``, ``mean``, ``delta_mode``, ``mean_minus_mode_identity``)
    are over all ``d + 1`` components ``theta_0..theta_d``; drop the first
    entry for the marginal coordinates.
    """
    c = mp.counts.astype(float)
    n, d, p = float(mp.n), mp.dim, mp.freqs
    mean = (c + 1.0) / (n + d + 1.0)
    delta = 1.0 / n - (d + 1.0) * p / n
    chi2 = chi2_from_uniform(p)
    eb2 = (5.0 / 3.0) * chi2 * (d + 1) ** 2 / n + 2.0 * (d * d - d) / (3.0 * n)
    return {
        "mode": p.copy(),
        "mean": mean,
        "delta_mode": delta,
        "chi2_unif": chi2,
        "c3_exact": c3_exact(mp.p_min),
        "eps3_exact": c3_exact(mp.p_min) * d / math.sqrt(n),
        "eps_bar3_exact": math.sqrt(max(eb2, 0.0)),
        "mean_minus_mode_identity": (mean - p) - delta / (1.0 + (d + 1.0) / n),
        "skew_norm": math.sqrt(max(chi2, 0.0)) * (d + 1) / math.sqrt(n),
        "remainder_norm": math.sqrt(max(chi2, 0.0)) * (d + 1) ** 2 / ((n + d + 1) * math.sqrt(n)),
        "d2_over_n_pmin": d * d / (n * mp.p_min),
        "tv_from_uniform": tv_from_uniform(p),
    }


def tv_lower_bound_from_freqs(p, n: float) -> float | None:
    """``TV(Unif, p) d / (9 sqrt(n))`` when ``p_min >= 6/sqrt(n+d)`` and ``TV(Unif, p) >= 6/(d+1)``."""
    p = np.asarray(p, dtype=float)
    if abs(p.sum() - 1.0) > 1e-12 or np.any(p <= 0):
        raise SkewLapError("frequencies must be positive and sum to one")
    d = len(p) - 1
    tv = tv_from_uniform(p)
    if p.min() < 6.0 / math.sqrt(n + d) or tv < 6.0 / (d + 1):
        return None
    return tv * d / (9.0 * math.sqrt(n))


def tv_lower_bound(mp: MultinomialPosterior) -> float | None:
    return tv_lower_bound_from_freqs(mp.freqs, mp.n)
