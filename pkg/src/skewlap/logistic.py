"""Bayesian logistic regression with a Gaussian (or flat) prior.

The potential is ``V(b) = -sum y_i X_i^T b + sum psi(X_i^T b) + b^T P b / 2``
with ``psi(t) = log(1 + e^t)``, so every derivative of order ``k >= 3`` is
``sum_i psi^{(k)}(X_i^T b) X_i^{(x)k}``: a rank-one sum with one term per
observation.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Callable

import numpy as np
import scipy.linalg
from scipy.special import expit, roots_hermitenorm

from .laplace import LaplaceFit
from .model import NotPositiveDefinite, PosteriorModel, UnsupportedRepresentation


def psi_deriv(t, k: int):
    """``psi^{(k)}(t)`` for ``k = 0..5`` in forms that stay finite for large ``|t|``."""
    t = np.asarray(t, dtype=float)
    if k == 0:
        return np.logaddexp(0.0, t)
    s = expit(t)
    if k == 1:
        return s
    q = s * (1.0 - s)
    if k == 2:
        return q
    if k == 3:
        return q * (1.0 - 2.0 * s)
    if k == 4:
        return q * (1.0 - 6.0 * s + 6.0 * s * s)
    if k == 5:
        return q * (1.0 - 2.0 * s) * (1.0 - 12.0 * s + 12.0 * s * s)
    raise UnsupportedRepresentation(f"psi derivative of order {k} not implemented")


@dataclass(frozen=True)
class LogRegDataset:
    features: np.ndarray
    labels: np.ndarray
    design_cov: np.ndarray | None = None
    truth: np.ndarray | None = None

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.features, dtype=float))
        y = np.asarray(self.labels, dtype=float).reshape(-1)
        if len(X) < 1 or len(X) != len(y):
            raise ValueError("need n >= 1 rows and one label per row")
        if not np.all((y == 0) | (y == 1)):
            raise ValueError("labels must be 0 or 1")
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", y)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]


def generate_data(n: int, d: int, beta, M=None, seed: int = 0) -> LogRegDataset:
    """``X_i ~ N(0, M)`` i.i.d. and ``Y_i | X_i ~ Bernoulli(sigmoid(beta^T X_i))``."""
    if n < 1 or d < 1:
        raise ValueError("n and d must be >= 1")
    beta = np.asarray(beta, dtype=float).reshape(-1)
    if beta.shape != (d,):
        raise ValueError(f"beta must have length {d}")
    M = np.eye(d) if M is None else np.asarray(M, dtype=float)
    try:
        L = np.linalg.cholesky(M)
    except np.linalg.LinAlgError:
        raise NotPositiveDefinite(float(np.linalg.eigvalsh(0.5 * (M + M.T)).min()),
                                  "design covariance is not positive definite") from None
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed)])))
    X = rng.standard_normal((n, d)) @ L.T
    y = (rng.uniform(size=n) < expit(X @ beta)).astype(float)
    return LogRegDataset(X, y, M, beta)


def write_dataset(ds: LogRegDataset, path) -> None:
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["y"] + [f"x{j + 1}" for j in range(ds.dim)])
        for yi, xi in zip(ds.labels, ds.features):
            w.writerow([int(yi)] + [repr(float(v)) for v in xi])


def read_dataset(path) -> LogRegDataset:
    """Read a CSV with a header row, a ``y`` column and ``x1..xd`` columns."""
    with open(Path(path), newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ValueError(f"{path}: no data rows")
    xcols = sorted((c for c in rows[0] if c and c.startswith("x")), key=lambda c: int(c[1:]))
    if "y" not in rows[0] or not xcols:
        raise ValueError(f"{path}: need a 'y' column and x1..xd columns")
    y = np.array([float(r["y"]) for r in rows])
    X = np.array([[float(r[c]) for c in xcols] for r in rows])
    return LogRegDataset(X, y)


class LogisticModel(PosteriorModel):
    max_order = 5
    has_rank_one = True

    def __init__(self, X, y, prior_precision):
        self.X = np.asarray(X, dtype=float)
        self.y = np.asarray(y, dtype=float)
        self.P = np.asarray(prior_precision, dtype=float)
        self.dim = self.X.shape[1]
        self.n_scale = float(self.X.shape[0])
        self._Xty = self.X.T @ self.y

    def value(self, b):
        b = np.asarray(b, dtype=float).reshape(-1)
        t = self.X @ b
        return float(-self._Xty @ b + np.sum(psi_deriv(t, 0)) + 0.5 * b @ self.P @ b)

    def value_batch(self, bs):
        bs = np.atleast_2d(np.asarray(bs, dtype=float))
        out = np.empty(len(bs))
        chunk = max(1, (1 << 22) // max(len(self.X), 1))
        for a in range(0, len(bs), chunk):
            B = bs[a : a + chunk]
            T = B @ self.X.T
            out[a : a + chunk] = (
                -B @ self._Xty + psi_deriv(T, 0).sum(axis=1) + 0.5 * np.einsum("ni,ij,nj->n", B, self.P, B)
            )
        return out

    def gradient(self, b):
        b = np.asarray(b, dtype=float).reshape(-1)
        return self.X.T @ (psi_deriv(self.X @ b, 1) - self.y) + self.P @ b

    def hessian(self, b):
        b = np.asarray(b, dtype=float).reshape(-1)
        w = psi_deriv(self.X @ b, 2)
        H = (self.X * w[:, None]).T @ self.X + self.P
        return 0.5 * (H + H.T)

    def rank_one_terms(self, b, k):
        if k < 3:
            raise UnsupportedRepresentation("rank-one form only covers derivatives of order >= 3")
        b = np.asarray(b, dtype=float).reshape(-1)
        return psi_deriv(self.X @ b, k), self.X


@dataclass(frozen=True)
class LogRegPosterior:
    dataset: LogRegDataset
    prior_precision: np.ndarray
    model: LogisticModel


def build_posterior(dataset: LogRegDataset, prior_precision=0.0) -> LogRegPosterior:
    """``prior_precision`` is a scalar ``kappa`` (meaning ``kappa I``) or a ``d x d`` matrix."""
    d = dataset.dim
    P = np.asarray(prior_precision, dtype=float)
    P = P * np.eye(d) if P.ndim == 0 else P
    if P.shape != (d, d):
        raise ValueError(f"prior precision must be a scalar or {d}x{d}")
    if np.any(np.linalg.eigvalsh(0.5 * (P + P.T)) < -1e-12 * max(1.0, np.abs(P).max())):
        raise ValueError("prior precision must be positive semidefinite")
    return LogRegPosterior(dataset, P, LogisticModel(dataset.features, dataset.labels, P))


@dataclass(frozen=True)
class FastSkew:
    delta_mode: np.ndarray
    eps_bar3: float
    skew_closure: Callable[[np.ndarray], np.ndarray]


def fast_skew(post: LogRegPosterior, fit: LaplaceFit) -> FastSkew:
    """Mean shift, ``eps_bar3`` and ``S`` using only per-observation vectors.

    With ``a_i = psi'''(X_i^T b_hat)`` and ``B_i = L^{-1} X_i``:
    ``delta = -1/2 L^{-T} sum_i a_i |B_i|^2 B_i`` and
    ``eps_bar3^2 = sum_{i,j} a_i a_j (B_i.B_j)^3 / 6 + |sum_i a_i |B_i|^2 B_i|^2 / 4``.
    """
    X = post.dataset.features
    bhat = fit.mode
    a = psi_deriv(X @ bhat, 3)
    B = scipy.linalg.solve_triangular(fit.factor, X.T, lower=True).T
    r = B.T @ (a * np.sum(B * B, axis=1))
    delta = -0.5 * scipy.linalg.solve_triangular(fit.factor, r, lower=True, trans="T")
    frob2 = 0.0
    for s in range(0, len(a), 1024):
        frob2 += float(a[s : s + 1024] @ ((B[s : s + 1024] @ B.T) ** 3) @ a)
    eb = math.sqrt(max(frob2 / 6.0 + float(r @ r) / 4.0, 0.0))

    def skew(b):
        b = np.asarray(b, dtype=float)
        h = np.atleast_2d(b) - bhat
        out = -((h @ X.T) ** 3) @ a / 6.0
        return float(out[0]) if b.ndim == 1 else out

    return FastSkew(delta, eb, skew)


# ---------------------------------------------------------------------------
# population potential under a standard Gaussian design
# ---------------------------------------------------------------------------


def gauss_hermite(nodes: int = 200):
    """Nodes and weights for ``E[f(G)]``, ``G ~ N(0, 1)``."""
    x, w = roots_hermitenorm(nodes)
    return x, w / math.sqrt(2.0 * math.pi)


class PopulationLogisticModel(PosteriorModel):
    """``V(x) = n (E[psi(Z^T x)] - a_{1,1} x_1)`` for ``Z ~ N(0, I_d)``; minimized at ``e_1``.

    By rotation invariance every expectation reduces to one dimension along
    ``e = x / |x|``: with ``m_p(r) = E[psi'''(r G) G^p]``,
    ``<nabla^3, u v w> = m_3 (e.u)(e.v)(e.w) + m_1 [(e.u)(v'.w') + (e.v)(u'.w') + (e.w)(u'.v')]``
    where primes denote components orthogonal to ``e``.
    """

    max_order = 3

    def __init__(self, d: int, n: float, nodes: int = 200):
        self.dim = int(d)
        self.n_scale = float(n)
        self._g, self._w = gauss_hermite(nodes)
        self.a11 = self._E(1, 1.0, 1)

    def _E(self, k, r, p):
        return float(self._w @ (psi_deriv(r * self._g, k) * self._g**p))

    def _polar(self, x):
        x = np.asarray(x, dtype=float).reshape(-1)
        r = float(np.linalg.norm(x))
        if r == 0.0:
            e = np.zeros(self.dim)
            e[0] = 1.0
        else:
            e = x / r
        return x, r, e

    def value(self, x):
        x, r, _ = self._polar(x)
        return self.n_scale * (self._E(0, r, 0) - self.a11 * x[0])

    def gradient(self, x):
        x, r, e = self._polar(x)
        g = self._E(1, r, 1) * e
        g[0] -= self.a11
        return self.n_scale * g

    def hessian(self, x):
        _, r, e = self._polar(x)
        par, perp = self._E(2, r, 2), self._E(2, r, 0)
        H = self.n_scale * (par * np.outer(e, e) + perp * (np.eye(self.dim) - np.outer(e, e)))
        return 0.5 * (H + H.T)

    def deriv_dir(self, x, *vectors):
        if len(vectors) != 3:
            return super().deriv_dir(x, *vectors)
        _, r, e = self._polar(x)
        m3, m1 = self._E(3, r, 3), self._E(3, r, 1)
        u, v, w = (np.asarray(a, dtype=float).reshape(-1) for a in vectors)
        eu, ev, ew = e @ u, e @ v, e @ w
        up, vp, wp = u - eu * e, v - ev * e, w - ew * e
        # sorted sums keep the value exactly symmetric in (u, v, w)
        cross = sorted([eu * (vp @ wp), ev * (up @ wp), ew * (up @ vp)])
        return self.n_scale * (m3 * float(np.prod(sorted([eu, ev, ew]))) + m1 * math.fsum(cross))

    def third_mat(self, x, A):
        _, r, e = self._polar(x)
        A = 0.5 * (np.asarray(A, dtype=float) + np.asarray(A, dtype=float).T)
        m3, m1 = self._E(3, r, 3), self._E(3, r, 1)
        Ae = A @ e
        eAe = float(e @ Ae)
        tr_perp = float(np.trace(A)) - eAe
        # (m3 e'Ae + m1 tr(P A P)) e + 2 m1 P A e, with P the projector orthogonal to e
        Aperp_e = Ae - eAe * e
        return self.n_scale * ((m3 * eAe + m1 * tr_perp) * e + 2.0 * m1 * Aperp_e)


@dataclass
class PopulationLogistic:
    """Moments ``a_{k,p} = E[psi^{(k)}(G) G^p]`` for the population potential in ``d`` dimensions."""

    dim: int
    n: float
    nodes: int = 200

    @cached_property
    def _rule(self):
        return gauss_hermite(self.nodes)

    def moment(self, k: int, p: int) -> float:
        g, w = self._rule
        return float(w @ (psi_deriv(g, k) * g**p))

    @property
    def psi_moments(self) -> dict:
        return {(k, p): self.moment(k, p) for k, p in ((1, 1), (2, 0), (2, 2), (3, 1), (3, 3))}

    def model(self) -> PopulationLogisticModel:
        return PopulationLogisticModel(self.dim, self.n, self.nodes)


def population_leading_terms(pop: PopulationLogistic) -> dict:
    """Closed-form ``||delta||_{H_V}`` and lower bound on ``L_TV`` at the minimizer ``e_1``."""
    a20, a22 = pop.moment(2, 0), pop.moment(2, 2)
    a31, a33 = pop.moment(3, 1), pop.moment(3, 3)
    d, n = pop.dim, pop.n
    scale = 1.0 / (math.sqrt(a22) * math.sqrt(n))
    return {
        "delta_norm": 0.5 * scale * abs((d - 1) * a31 / a20 + a33 / a22),
        "ltv_lower": scale * ((d - 1) * abs(a31) / (8.0 * a20) - abs(a33) / (4.0 * a22)),
    }
