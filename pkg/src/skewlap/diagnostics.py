"""Computable error diagnostics for the Laplace and skew-corrected fits.

All tensor quantities live in whitened coordinates ``z = L^T (x - mode)``,
so that ``H_V`` becomes the identity and operator norms weighted by ``H_V``
are ordinary operator norms of the whitened tensors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .laplace import LaplaceFit, WhitenedThird
from .model import PosteriorModel, UnsupportedError
from .skew import MCResult, SkewCorrection, mc_gaussian_mean

BOUND_FLAG = "modulo absolute constant"
RADIUS_UPPER = 1e6


def eps_bar3(tensor: WhitenedThird) -> float:
    """``sqrt(||T||_F^2 / 6 + ||<T, I>||^2 / 4)``; equals ``||S||_{L^2(gamma)}``."""
    tr = tensor.trace_vector()
    val = tensor.frob2() / 6.0 + float(tr @ tr) / 4.0
    return math.sqrt(max(val, 0.0))


def ltv_mc(tensor: WhitenedThird, count: int = 100_000, seed: int = 0, workers: int = 1) -> MCResult:
    """Monte Carlo estimate of ``L_TV = E|<T, Z^{(x)3}>| / 12``."""
    if count < 2:
        raise ValueError("count must be >= 2")
    return mc_gaussian_mean(lambda Z: np.abs(tensor.cubes(Z)) / 12.0, tensor.dim, count, seed, workers=workers)


def hermite3_contract(T: np.ndarray, Z: np.ndarray) -> np.ndarray:
    """``<T, H_3(z)>`` per row, with ``H_3(z) = z^{(x)3} - 3 Sym(z (x) I)``, ``T`` symmetric."""
    Z = np.atleast_2d(Z)
    cubes = np.einsum("ijk,ni,nj,nk->n", T, Z, Z, Z, optimize=True)
    return cubes - 3.0 * Z @ np.einsum("ijj->i", T)


def s_star(c0: float, s0: float) -> float:
    """Smallest admissible radius ``max(s0, (8/c0) log(2e/c0))``."""
    return max(float(s0), (8.0 / c0) * math.log(2.0 * math.e / c0))


def check_growth_condition(c3: float, c4_at_4: float, d: int, n: float) -> bool:
    """Sufficient condition ``c3 sqrt(d/n) + c4(4) d/n <= 3/8`` for ``(c0, s0) = (1, 4)``."""
    if min(c3, c4_at_4) < 0 or d < 1 or n <= 0:
        raise ValueError("inputs must be nonnegative with d >= 1 and n > 0")
    return c3 * math.sqrt(d / n) + c4_at_4 * d / n <= 3.0 / 8.0


# ---------------------------------------------------------------------------
# weighted operator norms
# ---------------------------------------------------------------------------


@dataclass
class OpnormResult:
    """Lower estimate of ``c_k(s)``.

    ``tensor_norm`` is the whitened (``H_V``-weighted) norm of ``nabla^k V``;
    ``estimate = n^{k/2 - 1} * tensor_norm`` is the norm of ``nabla^k v``
    weighted by ``H_v``.
    """

    estimate: float
    tensor_norm: float
    converged: bool
    k: int
    s: float
    restart_values: list[float] = field(default_factory=list)
    best_restart: int = 0
    direction: np.ndarray | None = None
    point: np.ndarray | None = None


def _unit(v):
    nv = np.linalg.norm(v)
    return v / nv if nv > 0 else v


class _Contractor:
    """``f(z, u) = <nabla^k V(mode + C z), (C u)^{(x)k}>`` and its gradients."""

    def __init__(self, model: PosteriorModel, fit: LaplaceFit, k: int):
        self.model, self.fit, self.k = model, fit, k
        self.C = fit.inv_factor_t()

    def x_of(self, z):
        return self.fit.mode + self.C @ z

    def value_and_ugrad(self, z, u):
        v = self.C @ u
        g = self.model.deriv_vector(self.x_of(z), self.k, v)
        return float(g @ v), self.k * (self.C.T @ g)

    def value(self, z, u):
        return self.value_and_ugrad(z, u)[0]

    def zgrad(self, z, u):
        x = self.x_of(z)
        v = self.C @ u
        try:
            if self.model.has_rank_one:
                w, m = self.model.rank_one_terms(x, self.k + 1)
                g = m.T @ (w * (m @ v) ** self.k)
            elif self.model.supports(self.k + 1):
                g = self.model.deriv_vector(x, self.k + 1, v)
            else:
                raise UnsupportedError
            return self.C.T @ g
        except UnsupportedError:
            pass
        # central differences in whitened coordinates
        d = len(z)
        h = 1e-5 * max(1.0, float(np.max(np.abs(z))))
        out = np.zeros(d)
        for i in range(d):
            e = np.zeros(d)
            e[i] = h
            if not (self.model.domain_guard(self.x_of(z + e)) and self.model.domain_guard(self.x_of(z - e))):
                return None
            out[i] = (self.value(z + e, u) - self.value(z - e, u)) / (2 * h)
        return out


def _ascend_sphere(con: _Contractor, z, u, sign, max_iter=500, rtol=1e-13):
    """Maximize ``sign * f(z, u)`` over unit ``u``: power step, else backtracked geodesic step."""
    f, g = con.value_and_ugrad(z, u)
    f, g = sign * f, sign * g
    for _ in range(max_iter):
        tangent = g - (g @ u) * u
        tn = np.linalg.norm(tangent)
        if tn <= 1e-14 * max(np.linalg.norm(g), 1e-300):
            break
        best = None
        cand = _unit(g)
        fc, gc = con.value_and_ugrad(z, cand)
        if sign * fc > f:
            best = (cand, sign * fc, sign * gc)
        else:
            t = 1.0 / max(np.linalg.norm(g), 1e-300)
            for _ in range(40):
                cand = _unit(u + t * tangent)
                fc, gc = con.value_and_ugrad(z, cand)
                if sign * fc >= f + 1e-4 * t * tn**2:
                    best = (cand, sign * fc, sign * gc)
                    break
                t *= 0.5
        if best is None:
            break
        gain = best[1] - f
        u, f, g = best
        if gain <= rtol * max(abs(f), 1e-300):
            break
    return u, f


def _project_ball(z, R):
    nz = np.linalg.norm(z)
    return z if nz <= R else z * (R / nz)


def _ascend_ball(con: _Contractor, z, u, sign, R, max_iter=50, rtol=1e-10):
    """Projected gradient ascent of ``sign * f(z, u)`` over ``||z|| <= R`` inside the domain."""
    f = sign * con.value(z, u)
    for _ in range(max_iter):
        g = con.zgrad(z, u)
        if g is None or not np.all(np.isfinite(g)) or not np.any(g):
            break
        g = sign * g
        t = 2.0 * R / np.linalg.norm(g)
        moved = False
        for _ in range(40):
            cand = _project_ball(z + t * g, R)
            if con.model.domain_guard(con.x_of(cand)):
                fc = sign * con.value(cand, u)
                if np.isfinite(fc) and fc > f:
                    moved = True
                    break
            t *= 0.5
        if not moved:
            break
        gain = fc - f
        z, f = cand, fc
        if gain <= rtol * max(abs(f), 1e-300):
            break
    return z, f


def _random_ball_point(rng, con: _Contractor, R):
    d = con.fit.dim
    z = _unit(rng.standard_normal(d)) * R * rng.uniform() ** (1.0 / d)
    for _ in range(60):
        if con.model.domain_guard(con.x_of(z)):
            return z
        z = 0.5 * z
    return np.zeros(d)


def weighted_opnorm(
    model: PosteriorModel,
    fit: LaplaceFit,
    k: int,
    s: float = 0.0,
    restarts: int = 20,
    seed: int = 0,
    max_rounds: int = 30,
) -> OpnormResult:
    """Estimate ``c_k(s) = sup_{x in U(s)} ||nabla^k v(x)||_{H_v}`` from below.

    ``U(s)`` is the ball ``||x - mode||_{H_V} <= s sqrt(d)``.  Each restart
    maximizes ``|<nabla^k V(x), u^{(x)k}>|`` over whitened unit ``u`` (power
    steps with a backtracked geodesic fallback) and, for ``s > 0``,
    alternates with projected gradient ascent in ``x``.  Restart 0 starts
    at the mode (for ``s > 0`` from the best ``s = 0`` direction, so the
    estimate never falls below the pointwise one); the others start at
    random points of the ball.  The result
    is flagged converged when the two best restarts agree within 1%.
    """
    if k not in (3, 4, 5):
        raise ValueError(f"k must be 3, 4 or 5, got {k}")
    if s < 0:
        raise ValueError("s must be nonnegative")
    if restarts < 1:
        raise ValueError("restarts must be >= 1")
    if not model.supports(k):
        raise UnsupportedError(f"order-{k} derivative not available")
    d = fit.dim
    con = _Contractor(model, fit, k)
    R = s * math.sqrt(d)
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), k]))
    # odd k: f(-u) = -f(u), so one sign suffices
    signs = (1.0,) if k % 2 else (1.0, -1.0)
    # warm start: the pointwise optimum keeps the local estimate >= the s = 0 one
    warm = weighted_opnorm(model, fit, k, 0.0, restarts, seed).direction if R > 0 else None
    values, dirs, points = [], [], []
    for r in range(restarts):
        z0 = np.zeros(d) if (r == 0 or R == 0) else _random_ball_point(rng, con, R)
        u0 = _unit(rng.standard_normal(d))
        if r == 0 and warm is not None:
            u0 = warm
        best = (-np.inf, u0, z0)
        for sign in signs:
            z, u = z0.copy(), u0.copy()
            u, f = _ascend_sphere(con, z, u, sign)
            if R > 0:
                for _ in range(max_rounds):
                    z, f_z = _ascend_ball(con, z, u, sign, R)
                    u, f_new = _ascend_sphere(con, z, u, sign)
                    done = f_new - f <= 1e-10 * max(abs(f_new), 1e-300)
                    f = f_new
                    if done:
                        break
            if f > best[0]:
                best = (f, u, z)
        values.append(max(best[0], 0.0))
        dirs.append(best[1])
        points.append(best[2])
    vals = np.array(values)
    i_best = int(np.argmax(vals))
    top = np.sort(vals)[::-1]
    if len(top) < 2:
        converged = False
    else:
        converged = bool(top[0] - top[1] <= 0.01 * top[0]) if top[0] > 0 else True
    tn = float(vals[i_best])
    return OpnormResult(
        estimate=fit.model_n ** (k / 2.0 - 1.0) * tn,
        tensor_norm=tn,
        converged=converged,
        k=k,
        s=float(s),
        restart_values=[float(v) for v in vals],
        best_restart=i_best,
        direction=dirs[i_best],
        point=fit.mode + con.C @ points[i_best],
    )


def eps_from_opnorm(k: int, tensor_norm: float, d: int) -> float:
    """``eps_3 = d |T|``, ``eps_4 = d |T_4|^{1/2}``, ``eps_5 = d |T_5|^{1/3}`` (whitened norms).

    These equal ``c_3 d/sqrt(n)``, ``c_4^{1/2} d/sqrt(n)`` and
    ``c_5^{1/3} d/sqrt(n)``.
    """
    return d * tensor_norm ** (1.0 / (k - 2))


# ---------------------------------------------------------------------------
# radius selection and the assembled report
# ---------------------------------------------------------------------------


@dataclass
class RadiusChoice:
    radius: float
    floor: float
    flagged: bool
    note: str = ""


def select_radius(
    c0: float,
    s0: float,
    eps3: float,
    eps4_at: Callable[[float], float],
    upper: float = RADIUS_UPPER,
    rtol: float = 1e-3,
) -> RadiusChoice:
    """Largest ``s`` in ``[s*, upper]`` with ``(eps3^2 + eps4(s)^2) s^4 <= 1``.

    Bisection is geometric and assumes the left side is nondecreasing in
    ``s``.  Returns ``s*`` flagged when even ``s*`` violates the inequality,
    and ``upper`` flagged when no violation is found below it.
    """
    if not (0 < c0 <= 1) or s0 <= 0:
        raise ValueError("need 0 < c0 <= 1 and s0 > 0")
    floor = s_star(c0, s0)

    def h(s):
        return (eps3**2 + eps4_at(s) ** 2) * s**4

    if h(floor) > 1.0:
        return RadiusChoice(floor, floor, True, "(eps3^2 + eps4(s*)^2) s*^4 > 1")
    if h(upper) <= 1.0:
        return RadiusChoice(upper, floor, True, "no violation up to the search limit")
    lo, hi = floor, upper
    while hi / lo > 1.0 + rtol:
        mid = math.sqrt(lo * hi)
        if h(mid) <= 1.0:
            lo = mid
        else:
            hi = mid
    return RadiusChoice(lo, floor, False)


def tau(s: float, d: int, c0: float) -> float:
    return d * math.exp(-c0 * s * d / 8.0)


def _exp(x: float) -> float:
    try:
        return math.exp(x)
    except OverflowError:
        return math.inf


@dataclass
class DiagnosticsReport:
    """All computable error quantities for one fit; see :func:`assemble_report`."""

    eps_bar3: float
    eps3: float
    eps4: float | None
    eps5: float | None
    radius: float
    radius_floor: float
    E_s: float | None
    tau_s: float
    ltv_estimate: dict
    growth_coeff: float
    bounds: dict
    bound_flags: dict = field(default_factory=dict)
    radius_flagged: bool = False
    opnorm_converged: dict = field(default_factory=dict)
    growth_condition: bool | None = None
    dim: int = 0
    n: float = 0.0

    def to_dict(self) -> dict:
        return {
            "eps_bar3": self.eps_bar3,
            "eps3": self.eps3,
            "eps4": self.eps4,
            "eps5": self.eps5,
            "radius": self.radius,
            "radius_floor": self.radius_floor,
            "E_s": self.E_s,
            "tau_s": self.tau_s,
            "ltv_estimate": dict(self.ltv_estimate),
            "growth_coeff": self.growth_coeff,
            "bounds": dict(self.bounds),
            "bound_flags": dict(self.bound_flags),
            "radius_flagged": self.radius_flagged,
            "opnorm_converged": dict(self.opnorm_converged),
            "growth_condition": self.growth_condition,
            "dim": self.dim,
            "n": self.n,
        }


def assemble_report(
    model: PosteriorModel,
    fit: LaplaceFit,
    sc: SkewCorrection,
    s: float | None = None,
    restarts: int = 20,
    mc_count: int = 100_000,
    growth_coeff: float = 1.0,
    seed: int = 0,
    radius_restarts: int = 4,
) -> DiagnosticsReport:
    """Evaluate every diagnostic and the bounds assembled from them.

    Bounds use absolute constant 1:

    * ``tv_corrected`` and ``mean_remainder``: ``E(s)(eps3^2 + eps4^2) + tau(s)``
    * ``cov``: ``E(s)^2 (eps3^2 + eps4^2) + tau(s)``
    * ``mean_remainder_c5``: ``(eps3^2 + eps4^2)(eps3 + eps4^2) + eps5^3/sqrt(d) + tau(s)``
    * ``tv_leading``: ``eps_bar3 / 2`` (upper bound on ``L_TV``)
    * ``tv_uncorrected``: ``eps_bar3 / 2 + tv_corrected``
    * ``observable``: ``E(s)(eps3^2 + eps4^2) + max(a_g, 1) tau(s)``

    Bounds that need an unavailable derivative are omitted.  With ``s=None``
    the radius is chosen by :func:`select_radius`.
    """
    d, n = fit.dim, fit.model_n
    c0, s0 = fit.c0, fit.s0
    floor = s_star(c0, s0)
    converged = {}

    op3 = weighted_opnorm(model, fit, 3, 0.0, restarts, seed)
    converged["3"] = op3.converged
    eps3 = eps_from_opnorm(3, op3.tensor_norm, d)

    has4, has5 = model.supports(4), model.supports(5)
    flagged = False
    if s is None:
        if has4:
            cache = {}

            def eps4_at(r):
                if r not in cache:
                    res = weighted_opnorm(model, fit, 4, r, radius_restarts, seed)
                    cache[r] = eps_from_opnorm(4, res.tensor_norm, d)
                return cache[r]

            choice = select_radius(c0, s0, eps3, eps4_at)
            s, flagged = choice.radius, choice.flagged
        else:
            s, flagged = floor, False
    elif s < floor:
        raise ValueError(f"radius {s} is below the floor s* = {floor}")

    eps4 = eps5 = None
    c4_at_4 = None
    if has4:
        op4 = weighted_opnorm(model, fit, 4, s, restarts, seed)
        converged["4"] = op4.converged
        eps4 = eps_from_opnorm(4, op4.tensor_norm, d)
        c4_at_4 = weighted_opnorm(model, fit, 4, 4.0, restarts, seed).estimate
    if has5:
        op5 = weighted_opnorm(model, fit, 5, s, restarts, seed)
        converged["5"] = op5.converged
        eps5 = eps_from_opnorm(5, op5.tensor_norm, d)

    tau_s = tau(s, d, c0)
    ltv = ltv_mc(sc.tensor, mc_count, seed)
    bounds = {"tv_leading": sc.eps_bar3 / 2.0}
    E_s = None
    if eps4 is not None:
        e2 = eps3**2 + eps4**2
        E_s = _exp(e2 * s**4)
        core = E_s * e2 if e2 > 0 else 0.0
        bounds["tv_corrected"] = core + tau_s
        bounds["mean_remainder"] = core + tau_s
        bounds["cov"] = (E_s**2 * e2 if e2 > 0 else 0.0) + tau_s
        bounds["tv_uncorrected"] = sc.eps_bar3 / 2.0 + bounds["tv_corrected"]
        bounds["observable"] = core + max(growth_coeff, 1.0) * tau_s
        if eps5 is not None:
            bounds["mean_remainder_c5"] = e2 * (eps3 + eps4**2) + eps5**3 / math.sqrt(d) + tau_s
    growth = None
    if c4_at_4 is not None:
        growth = check_growth_condition(op3.estimate, c4_at_4, d, n)

    return DiagnosticsReport(
        eps_bar3=sc.eps_bar3,
        eps3=eps3,
        eps4=eps4,
        eps5=eps5,
        radius=float(s),
        radius_floor=floor,
        E_s=E_s,
        tau_s=tau_s,
        ltv_estimate={"value": ltv.estimate, "std_error": ltv.std_error},
        growth_coeff=float(growth_coeff),
        bounds=bounds,
        bound_flags={name: BOUND_FLAG for name in bounds},
        radius_flagged=flagged,
        opnorm_converged=converged,
        growth_condition=growth,
        dim=d,
        n=n,
    )
