"""Posterior-model evaluation contract and finite-difference verification.

A model describes a target density ``pi ~ exp(-V)`` on an open set
``Theta`` in ``R^d``, with ``V = n * v``.  Derivatives of order three and
higher are only ever exposed through contractions, so models with a
low-rank derivative structure never have to build a dense tensor.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


class SkewLapError(Exception):
    """Base class for errors raised by this package."""


class DomainError(SkewLapError):
    """A point outside the model's parameter domain was evaluated."""


class UnsupportedError(SkewLapError):
    """The model does not expose the requested derivative or operation."""


class UnsupportedRepresentation(UnsupportedError):
    """A tensor representation was requested that the model cannot provide."""


class NotPositiveDefinite(SkewLapError):
    """A Hessian failed its Cholesky factorization."""

    def __init__(self, smallest_pivot: float, message: str | None = None):
        self.smallest_pivot = float(smallest_pivot)
        super().__init__(
            message
            or f"Hessian is not positive definite (smallest pivot {self.smallest_pivot:.6g})"
        )


def _as_vec(x) -> np.ndarray:
    return np.asarray(x, dtype=float).reshape(-1)


class PosteriorModel:
    """Base class for potentials ``V = n_scale * v``.

    Subclasses must implement :meth:`value`, :meth:`gradient`,
    :meth:`hessian` and :meth:`deriv_dir` for every order up to
    ``max_order``.  Models whose k-th derivatives are weighted sums of
    rank-one powers ``sum_l w_l m_l^{(x)k}`` should set ``has_rank_one`` and
    implement :meth:`rank_one_terms`; everything else is derived.

    Instances are treated as immutable once constructed.
    """

    dim: int
    n_scale: float
    max_order: int = 3
    has_rank_one: bool = False

    # -- required -----------------------------------------------------------
    def value(self, x) -> float:
        raise NotImplementedError

    def gradient(self, x) -> np.ndarray:
        raise NotImplementedError

    def hessian(self, x) -> np.ndarray:
        raise NotImplementedError

    def deriv_dir(self, x, *vectors) -> float:
        """``<nabla^k V(x), u_1 (x) ... (x) u_k>`` with ``k = len(vectors)``."""
        k = len(vectors)
        if self.has_rank_one and k >= 3:
            w, m = self.rank_one_terms(x, k)
            # sorting the factors makes the result exactly symmetric in the arguments
            proj = np.sort(np.stack([m @ _as_vec(u) for u in vectors]), axis=0)
            return float(w @ np.prod(proj, axis=0))
        raise UnsupportedError(f"order-{k} derivative not available")

    # -- optional structure ---------------------------------------------------
    def rank_one_terms(self, x, k: int) -> tuple[np.ndarray, np.ndarray]:
        """Weights ``w`` (m,) and rows ``m`` (m, d) with ``nabla^k V = sum w_l m_l^{(x)k}``."""
        raise UnsupportedRepresentation(
            f"{type(self).__name__} has no rank-one derivative structure"
        )

    def domain_guard(self, x) -> bool:
        return bool(np.all(np.isfinite(_as_vec(x))))

    # -- derived --------------------------------------------------------------
    def supports(self, k: int) -> bool:
        return k <= self.max_order

    def third_dir(self, x, u, v, w) -> float:
        return self.deriv_dir(x, u, v, w)

    def fourth_dir(self, x, u1, u2, u3, u4) -> float:
        if not self.supports(4):
            raise UnsupportedError("fourth derivative not available")
        return self.deriv_dir(x, u1, u2, u3, u4)

    def fifth_dir(self, x, u1, u2, u3, u4, u5) -> float:
        if not self.supports(5):
            raise UnsupportedError("fifth derivative not available")
        return self.deriv_dir(x, u1, u2, u3, u4, u5)

    def third_mat(self, x, A) -> np.ndarray:
        """Vector ``<nabla^3 V(x), A>_i = sum_jk V_ijk A_jk`` for symmetric ``A``."""
        A = np.asarray(A, dtype=float)
        if self.has_rank_one:
            w, m = self.rank_one_terms(x, 3)
            quad = np.einsum("lj,jk,lk->l", m, A, m)
            return m.T @ (w * quad)
        # A = sum_r lam_r q_r q_r^T, so each coordinate needs d directional calls.
        lam, Q = np.linalg.eigh(0.5 * (A + A.T))
        eye = np.eye(self.dim)
        out = np.zeros(self.dim)
        for i in range(self.dim):
            out[i] = sum(
                lam[r] * self.third_dir(x, eye[i], Q[:, r], Q[:, r])
                for r in range(self.dim)
                if lam[r] != 0.0
            )
        return out

    def deriv_vector(self, x, k: int, u) -> np.ndarray:
        """``<nabla^k V(x), u^{(x)(k-1)} (x) . >`` as a vector in ``R^d``."""
        u = _as_vec(u)
        if self.has_rank_one:
            w, m = self.rank_one_terms(x, k)
            return m.T @ (w * (m @ u) ** (k - 1))
        eye = np.eye(self.dim)
        return np.array(
            [self.deriv_dir(x, *([u] * (k - 1)), eye[i]) for i in range(self.dim)]
        )

    def value_batch(self, xs) -> np.ndarray:
        """``V`` at each row of ``xs``; ``+inf`` outside the domain."""
        xs = np.atleast_2d(np.asarray(xs, dtype=float))
        out = np.full(len(xs), np.inf)
        for i, x in enumerate(xs):
            if self.domain_guard(x):
                out[i] = self.value(x)
        return out


class QuadraticModel(PosteriorModel):
    """Gaussian potential ``V(x) = 1/2 (x - m)^T H (x - m)``."""

    max_order = 5
    has_rank_one = True

    def __init__(self, H, center=None, n_scale: float = 1.0):
        H = np.atleast_2d(np.asarray(H, dtype=float))
        self.H = 0.5 * (H + H.T)
        self.dim = self.H.shape[0]
        self.center = np.zeros(self.dim) if center is None else _as_vec(center).copy()
        self.n_scale = float(n_scale)

    def value(self, x):
        r = _as_vec(x) - self.center
        return 0.5 * float(r @ self.H @ r)

    def value_batch(self, xs):
        r = np.atleast_2d(np.asarray(xs, dtype=float)) - self.center
        return 0.5 * np.einsum("ni,ij,nj->n", r, self.H, r)

    def gradient(self, x):
        return self.H @ (_as_vec(x) - self.center)

    def hessian(self, x):
        return self.H.copy()

    def rank_one_terms(self, x, k):
        return np.zeros(0), np.zeros((0, self.dim))


class ScalarPolynomialModel(PosteriorModel):
    """One-dimensional ``V(x) = n * sum_k c_k x^k / k!`` (coefficients from k=0).

    Handy for checking chain-rule and skew formulas by hand; it is not a
    normalizable target unless the leading coefficient is even and positive.
    """

    max_order = 5
    dim = 1

    def __init__(self, coeffs, n_scale: float = 1.0):
        self.coeffs = np.asarray(coeffs, dtype=float)
        self.n_scale = float(n_scale)

    def _der(self, x, k):
        x = float(_as_vec(x)[0])
        total = 0.0
        for j in range(k, len(self.coeffs)):
            total += self.coeffs[j] * x ** (j - k) / math.factorial(j - k)
        return self.n_scale * total

    def value(self, x):
        return self._der(x, 0)

    def gradient(self, x):
        return np.array([self._der(x, 1)])

    def hessian(self, x):
        return np.array([[self._der(x, 2)]])

    def deriv_dir(self, x, *vectors):
        k = len(vectors)
        if k > self.max_order:
            raise UnsupportedError(f"order-{k} derivative not available")
        return self._der(x, k) * float(np.prod(np.sort([_as_vec(u)[0] for u in vectors])))


# ---------------------------------------------------------------------------
# finite-difference verification
# ---------------------------------------------------------------------------


@dataclass
class DerivativeCheckReport:
    """Outcome of :func:`check_derivatives`.

    ``errors`` maps a check name (``gradient``, ``hessian``, ``third``,
    ``fourth``, ``fifth``) to its max relative error; ``failures`` holds
    named failures such as domain violations.
    """

    point: np.ndarray
    step: float
    tol: float
    errors: dict[str, float] = field(default_factory=dict)
    failures: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures and all(e <= self.tol for e in self.errors.values())

    def to_dict(self) -> dict:
        return {
            "point": self.point.tolist(),
            "step": self.step,
            "tol": self.tol,
            "errors": dict(self.errors),
            "failures": list(self.failures),
            "passed": self.passed,
        }


def _rel_err(analytic, numeric) -> float:
    a = np.atleast_1d(np.asarray(analytic, dtype=float))
    b = np.atleast_1d(np.asarray(numeric, dtype=float))
    scale = max(np.max(np.abs(a)), np.max(np.abs(b)), 1.0)
    return float(np.max(np.abs(a - b)) / scale)


def check_derivatives(
    model: PosteriorModel,
    x,
    step: float | None = None,
    tol: float = 1e-4,
    probes: int = 3,
    seed: int = 0,
) -> DerivativeCheckReport:
    """Compare analytic derivatives with central differences of the order below.

    The gradient and Hessian are checked entrywise; third and higher
    contractions are checked on ``probes`` random direction triples.  Errors
    are relative to ``max(|analytic|, |numeric|, 1)``.
    """
    x = _as_vec(x)
    if step is None:
        step = 1e-5 * (1.0 + float(np.max(np.abs(x))))
    report = DerivativeCheckReport(point=x.copy(), step=float(step), tol=float(tol))
    if not model.domain_guard(x):
        report.failures.append("domain violation: base point outside domain")
        return report
    d = model.dim
    eye = np.eye(d)
    stencil = [x + s * step * eye[i] for i in range(d) for s in (1.0, -1.0)]
    if not all(model.domain_guard(p) for p in stencil):
        report.failures.append("domain violation: finite-difference stencil leaves domain")
        return report

    g = model.gradient(x)
    fd_g = np.array(
        [(model.value(x + step * eye[i]) - model.value(x - step * eye[i])) / (2 * step) for i in range(d)]
    )
    report.errors["gradient"] = _rel_err(g, fd_g)

    H = model.hessian(x)
    fd_H = np.column_stack(
        [(model.gradient(x + step * eye[i]) - model.gradient(x - step * eye[i])) / (2 * step) for i in range(d)]
    )
    report.errors["hessian"] = _rel_err(H, fd_H)

    rng = np.random.default_rng(seed)
    for k, name in ((3, "third"), (4, "fourth"), (5, "fifth")):
        if not model.supports(k):
            continue
        worst = 0.0
        for _ in range(probes):
            dirs = rng.standard_normal((k, d))
            w = dirs[-1]
            wn = w / np.linalg.norm(w)
            xp, xm = x + step * wn, x - step * wn
            if not (model.domain_guard(xp) and model.domain_guard(xm)):
                report.failures.append(f"domain violation: {name}-derivative stencil leaves domain")
                break
            analytic = model.deriv_dir(x, *dirs[:-1], wn)
            if k == 3:
                lower_p = dirs[0] @ model.hessian(xp) @ dirs[1]
                lower_m = dirs[0] @ model.hessian(xm) @ dirs[1]
            else:
                lower_p = model.deriv_dir(xp, *dirs[:-1])
                lower_m = model.deriv_dir(xm, *dirs[:-1])
            numeric = (lower_p - lower_m) / (2 * step)
            worst = max(worst, _rel_err(analytic, numeric))
        report.errors[name] = worst
    return report
