"""Mode finding, the Laplace fit, whitened third derivatives and Gaussian draws."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Union

import numpy as np
import scipy.linalg

from .model import NotPositiveDefinite, PosteriorModel, UnsupportedRepresentation

log = logging.getLogger(__name__)

ARMIJO = 1e-4
DIVERGENCE_NORM = 1e6
STEP_RTOL = 1e-6
DENSE_DIM_CAP = 128
SHARD_SIZE = 1 << 15


@dataclass
class ModeResult:
    mode: np.ndarray
    iterations: int
    converged: bool
    grad_norm: float
    fallbacks: int = 0
    diverged: bool = False


def _whitened_grad_norm(g: np.ndarray, H: np.ndarray) -> float | None:
    try:
        c = scipy.linalg.cho_factor(H, lower=True)
    except np.linalg.LinAlgError:
        return None
    return float(np.sqrt(max(g @ scipy.linalg.cho_solve(c, g), 0.0)))


def _step_small(step: np.ndarray, x: np.ndarray) -> bool:
    # A vanishing whitened gradient alone is not enough: without a finite mode
    # (e.g. separable logistic data) gradient and curvature decay together
    # while the Newton step stays of order one.
    return float(np.linalg.norm(step)) <= STEP_RTOL * max(1.0, float(np.linalg.norm(x)))


def find_mode(
    model: PosteriorModel,
    x0,
    max_iter: int = 200,
    grad_tol: float | None = None,
) -> ModeResult:
    """Damped Newton with Armijo backtracking on ``V``.

    Convergence is declared when ``||H(x)^{-1/2} grad V(x)|| <= grad_tol``
    and the Newton step is below ``1e-6 * max(1, ||x||)``.
    Where the Hessian is not positive definite a steepest-descent step with
    the same line search is taken instead, and counted in ``fallbacks``.
    Trial points failing ``model.domain_guard`` are treated like a failed
    Armijo test, so iterates never leave the domain.  Iterates whose norm
    exceeds ``1e6`` stop the search with ``diverged=True`` (e.g. a
    logistic likelihood under complete separation).  Once the predicted
    decrease drops below the rounding level of ``V`` the Newton step is
    accepted on a decrease of ``||grad V||`` instead of the Armijo test.
    """
    x = np.asarray(x0, dtype=float).reshape(-1).copy()
    d = model.dim
    if grad_tol is None:
        grad_tol = 1e-10 * np.sqrt(d)
    if not model.domain_guard(x):
        raise ValueError("starting point is outside the model domain")
    fx = model.value(x)
    fallbacks = 0
    gnorm = np.inf
    for it in range(max_iter + 1):
        g = model.gradient(x)
        H = model.hessian(x)
        wn = _whitened_grad_norm(g, H)
        gnorm = wn if wn is not None else float(np.linalg.norm(g))
        if wn is not None:
            step = -scipy.linalg.cho_solve(scipy.linalg.cho_factor(H, lower=True), g)
            if wn <= grad_tol and _step_small(step, x):
                return ModeResult(x, it, True, gnorm, fallbacks)
        if it == max_iter:
            break
        if wn is None:
            fallbacks += 1
            step = -g / max(np.linalg.norm(g), 1e-300)
        slope = float(g @ step)
        t = 1.0
        accepted = False
        if wn is not None and -slope <= 1e3 * np.finfo(float).eps * max(1.0, abs(fx)):
            # The predicted decrease is below the rounding level of V, so Armijo
            # cannot discriminate; accept the Newton step if it reduces the gradient.
            trial = x + step
            if model.domain_guard(trial):
                gt = model.gradient(trial)
                ft = model.value(trial)
                if np.isfinite(ft) and np.linalg.norm(gt) < np.linalg.norm(g):
                    accepted = True
        for _ in range(0 if accepted else 60):
            trial = x + t * step
            if model.domain_guard(trial):
                ft = model.value(trial)
                if np.isfinite(ft) and ft <= fx + ARMIJO * t * slope:
                    accepted = True
                    break
            t *= 0.5
        if not accepted:
            # No decrease representable in floating point: we are at the mode
            # to working precision, or the problem is ill-posed.
            log.debug("line search stalled at iteration %d (grad norm %.3g)", it, gnorm)
            done = wn is not None and wn <= grad_tol and _step_small(step, x)
            return ModeResult(x, it, bool(done), gnorm, fallbacks)
        x, fx = trial, ft
        if np.linalg.norm(x) > DIVERGENCE_NORM:
            return ModeResult(x, it + 1, False, gnorm, fallbacks, diverged=True)
    return ModeResult(x, max_iter, False, gnorm, fallbacks)


@dataclass(frozen=True)
class LaplaceFit:
    """Gaussian ``N(mode, hess^{-1})`` with ``factor @ factor.T == hess``."""

    mode: np.ndarray
    hess: np.ndarray
    factor: np.ndarray
    log_det_hess: float
    model_n: float
    c0: float = 1.0
    s0: float = 4.0

    @property
    def dim(self) -> int:
        return self.mode.shape[0]

    def whiten(self, x) -> np.ndarray:
        """``L^T (x - mode)`` for a point or a batch of rows."""
        return (np.asarray(x, dtype=float) - self.mode) @ self.factor

    def unwhiten(self, z) -> np.ndarray:
        """``mode + L^{-T} z`` for a point or a batch of rows."""
        z = np.asarray(z, dtype=float)
        sol = scipy.linalg.solve_triangular(self.factor, np.atleast_2d(z).T, lower=True, trans="T")
        out = self.mode + sol.T
        return out if z.ndim == 2 else out[0]

    def inv_factor_t(self) -> np.ndarray:
        """``C = L^{-T}``; its columns are the whitened basis directions."""
        return scipy.linalg.solve_triangular(self.factor, np.eye(self.dim), lower=True, trans="T")

    def solve(self, b) -> np.ndarray:
        return scipy.linalg.cho_solve((self.factor, True), np.asarray(b, dtype=float))

    def covariance(self) -> np.ndarray:
        return self.solve(np.eye(self.dim))

    def hnorm(self, v) -> float:
        """Mahalanobis norm ``||v||_{H_V}``."""
        return float(np.linalg.norm(np.asarray(v, dtype=float) @ self.factor))


def _smallest_pivot(H: np.ndarray) -> float:
    _, D, _ = scipy.linalg.ldl(H, lower=True)
    return float(np.min(np.diag(D)))


def fit_laplace(model: PosteriorModel, mode, c0: float = 1.0, s0: float = 4.0) -> LaplaceFit:
    mode = np.asarray(mode, dtype=float).reshape(-1).copy()
    H = np.asarray(model.hessian(mode), dtype=float)
    H = 0.5 * (H + H.T)
    try:
        L = np.linalg.cholesky(H)
    except np.linalg.LinAlgError:
        raise NotPositiveDefinite(_smallest_pivot(H)) from None
    logdet = 2.0 * float(np.sum(np.log(np.diag(L))))
    return LaplaceFit(mode, H, L, logdet, float(model.n_scale), float(c0), float(s0))


# ---------------------------------------------------------------------------
# whitened third derivative T = nabla^3 W(0)
# ---------------------------------------------------------------------------


class DenseThird:
    """Dense symmetric order-3 tensor."""

    kind = "dense"

    def __init__(self, tensor):
        self.tensor = np.asarray(tensor, dtype=float)
        self.dim = self.tensor.shape[0]

    def to_dense(self) -> np.ndarray:
        return self.tensor

    def contract(self, u, v, w) -> float:
        return float(np.einsum("ijk,i,j,k->", self.tensor, u, v, w))

    def trace_vector(self) -> np.ndarray:
        """``<T, I>`` (the vector ``sum_j T_ijj``)."""
        return np.einsum("ijj->i", self.tensor)

    def frob2(self) -> float:
        return float(np.sum(self.tensor**2))

    def cubes(self, Z) -> np.ndarray:
        """``<T, z^{(x)3}>`` for each row ``z`` of ``Z``."""
        Z = np.atleast_2d(Z)
        d = self.dim
        flat = self.tensor.reshape(d, d * d)
        out = np.empty(len(Z))
        chunk = max(1, (1 << 22) // max(d * d, 1))
        for a in range(0, len(Z), chunk):
            z = Z[a : a + chunk]
            y = (z @ flat).reshape(len(z), d, d)
            out[a : a + chunk] = np.einsum("nij,ni,nj->n", y, z, z)
        return out

    def is_zero(self) -> bool:
        return not np.any(self.tensor)


class LowRankThird:
    """``T = sum_l a_l B_l^{(x)3}`` stored as weights and whitened rows."""

    kind = "low_rank"

    def __init__(self, weights, vectors):
        self.weights = np.asarray(weights, dtype=float)
        self.vectors = np.atleast_2d(np.asarray(vectors, dtype=float))
        self.dim = self.vectors.shape[1]

    def to_dense(self) -> np.ndarray:
        a, B = self.weights, self.vectors
        return np.einsum("l,li,lj,lk->ijk", a, B, B, B, optimize=True)

    def contract(self, u, v, w) -> float:
        B = self.vectors
        return float(self.weights @ ((B @ u) * (B @ v) * (B @ w)))

    def trace_vector(self) -> np.ndarray:
        B = self.vectors
        return B.T @ (self.weights * np.sum(B * B, axis=1))

    def frob2(self) -> float:
        """``||T||_F^2 = sum_{l,m} a_l a_m (B_l . B_m)^3``, accumulated in blocks."""
        a, B = self.weights, self.vectors
        total = 0.0
        block = 1024
        for s in range(0, len(a), block):
            G = B[s : s + block] @ B.T
            total += float(a[s : s + block] @ (G**3) @ a)
        return total

    def cubes(self, Z) -> np.ndarray:
        Z = np.atleast_2d(Z)
        out = np.empty(len(Z))
        chunk = max(1, (1 << 22) // max(len(self.weights), 1))
        for s in range(0, len(Z), chunk):
            P = Z[s : s + chunk] @ self.vectors.T
            out[s : s + chunk] = (P**3) @ self.weights
        return out

    def is_zero(self) -> bool:
        return not np.any(self.weights) or not np.any(self.vectors)


WhitenedThird = Union[DenseThird, LowRankThird]


def whitened_third(
    model: PosteriorModel,
    fit: LaplaceFit,
    mode_hint: str = "dense",
    dense_cap: int = DENSE_DIM_CAP,
    basis=None,
) -> WhitenedThird:
    """``T_ijk = <nabla^3 V(mode), c_i (x) c_j (x) c_k>`` with ``c_i`` the columns of ``L^{-T}``.

    ``mode_hint`` is ``"dense"``, ``"low_rank"`` or ``"auto"`` (low rank for
    rank-one models in more than 16 dimensions).  ``basis`` overrides the
    whitening directions with any ``C`` satisfying ``C C^T = H^{-1}``.
    """
    d = fit.dim
    if mode_hint == "auto":
        mode_hint = "low_rank" if model.has_rank_one and d > 16 else "dense"
    if mode_hint == "low_rank":
        if not model.has_rank_one:
            raise UnsupportedRepresentation(
                f"{type(model).__name__} does not advertise rank-one third-derivative structure"
            )
        w, m = model.rank_one_terms(fit.mode, 3)
        if basis is None:
            B = scipy.linalg.solve_triangular(fit.factor, m.T, lower=True).T
        else:
            B = m @ np.asarray(basis, dtype=float)
        return LowRankThird(w, B)
    if mode_hint != "dense":
        raise ValueError(f"unknown representation {mode_hint!r}")
    if d > dense_cap:
        raise MemoryError(f"dense third-derivative tensor refused for d={d} > cap {dense_cap}")
    if model.has_rank_one:
        return DenseThird(whitened_third(model, fit, "low_rank", basis=basis).to_dense())
    C = fit.inv_factor_t() if basis is None else np.asarray(basis, dtype=float)
    T = np.empty((d, d, d))
    for j in range(d):
        for k in range(j, d):
            A = 0.5 * (np.outer(C[:, j], C[:, k]) + np.outer(C[:, k], C[:, j]))
            col = C.T @ model.third_mat(fit.mode, A)
            T[:, j, k] = col
            T[:, k, j] = col
    # restore exact symmetry lost to rounding in the column-wise build
    T = (
        T
        + T.transpose(0, 2, 1)
        + T.transpose(1, 0, 2)
        + T.transpose(1, 2, 0)
        + T.transpose(2, 0, 1)
        + T.transpose(2, 1, 0)
    ) / 6.0
    return DenseThird(T)


# ---------------------------------------------------------------------------
# Gaussian draws
# ---------------------------------------------------------------------------


def shard_generator(seed: int, shard: int) -> np.random.Generator:
    """Counter-based stream for one shard; depends only on ``(seed, shard)``."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(shard)])))


def standard_normal_shards(d: int, count: int, seed: int, shard_size: int = SHARD_SIZE):
    """Yield ``(shard_index, Z)`` blocks of standard normal rows, ``count`` rows in total."""
    for i, start in enumerate(range(0, count, shard_size)):
        m = min(shard_size, count - start)
        yield i, shard_generator(seed, i).standard_normal((m, d))


def sample_gaussian(fit: LaplaceFit, count: int, seed: int) -> np.ndarray:
    """``count`` rows ``mode + L^{-T} z``, bit-identical for a given seed."""
    if count < 1:
        raise ValueError("count must be >= 1")
    Z = np.concatenate([z for _, z in standard_normal_shards(fit.dim, count, seed)])
    return fit.unwhiten(Z)
