"""Tensor-product Gauss-Legendre reference integrals in up to three dimensions.

Nodes live in rotated whitened coordinates ``z`` with ``x = mode + L^{-T} R z``
for an orthogonal ``R`` (identity unless a half-space is to be aligned with
the first axis).  Each axis is split into the panels ``[-h, 0]`` and
``[0, h]``, so indicators of ``{z_1 >= 0}`` are integrated without a cut
through a panel.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.polynomial.legendre import leggauss

from .laplace import LaplaceFit
from .model import PosteriorModel, UnsupportedError
from .skew import SkewCorrection

MAX_DIM = 3
DEFAULT_NODES = {1: 400, 2: 200, 3: 80}
DEFAULT_HALF_WIDTH = 12.0


def _axis_rule(nodes: int, h: float):
    """``nodes`` Gauss-Legendre points on ``[-h, h]``, half on each side of zero."""
    m = max(1, nodes // 2)
    t, w = leggauss(m)
    right = 0.5 * h * (t + 1.0)
    wr = 0.5 * h * w
    return np.concatenate([-right[::-1], right]), np.concatenate([wr[::-1], wr])


def _rotation_to(a: np.ndarray) -> np.ndarray:
    """Orthogonal ``R`` whose first column is ``a / |a|``."""
    d = len(a)
    M = np.column_stack([a / np.linalg.norm(a), np.eye(d)])
    Q, _ = np.linalg.qr(M)
    Q = Q[:, :d]
    if Q[:, 0] @ a < 0:
        Q[:, 0] *= -1.0
    return Q


@dataclass(frozen=True)
class QuadratureGrid:
    """Product grid in rotated whitened coordinates.

    ``points`` are the ``z`` nodes (rows), ``weights`` the product weights,
    ``rotation`` the matrix ``R``.
    """

    axis_nodes: np.ndarray
    axis_weights: np.ndarray
    points: np.ndarray
    weights: np.ndarray
    rotation: np.ndarray
    half_width: float
    nodes_per_axis: int

    @classmethod
    def build(
        cls,
        dim: int,
        nodes_per_axis: int | None = None,
        half_width: float = DEFAULT_HALF_WIDTH,
        rotation=None,
    ) -> "QuadratureGrid":
        if dim > MAX_DIM:
            raise UnsupportedError(f"quadrature oracle supports d <= {MAX_DIM}, got {dim}")
        if half_width < 10.0:
            raise ValueError("half_width must be at least 10 whitened standard deviations")
        m = nodes_per_axis or DEFAULT_NODES[dim]
        t, w = _axis_rule(m, half_width)
        mesh = np.meshgrid(*([t] * dim), indexing="ij")
        wmesh = np.meshgrid(*([w] * dim), indexing="ij")
        pts = np.column_stack([g.reshape(-1) for g in mesh])
        wts = np.prod(np.column_stack([g.reshape(-1) for g in wmesh]), axis=1)
        R = np.eye(dim) if rotation is None else np.asarray(rotation, dtype=float)
        return cls(t, w, pts, wts, R, float(half_width), len(t))

    @classmethod
    def aligned(cls, fit: LaplaceFit, normal, **kw) -> "QuadratureGrid":
        """Grid whose first axis is the whitened normal of ``{normal . (x - mode) >= 0}``."""
        c = np.linalg.solve(fit.factor, np.asarray(normal, dtype=float))
        return cls.build(fit.dim, rotation=_rotation_to(c), **kw)


def _points(fit: LaplaceFit, grid: QuadratureGrid) -> np.ndarray:
    return fit.unwhiten(grid.points @ grid.rotation.T)


def _posterior_weights(model: PosteriorModel, fit: LaplaceFit, grid: QuadratureGrid):
    """Normalized posterior density in ``z`` at the nodes, and the points."""
    if fit.dim > MAX_DIM:
        raise UnsupportedError(f"quadrature oracle supports d <= {MAX_DIM}, got {fit.dim}")
    X = _points(fit, grid)
    shift = model.value(fit.mode)
    logd = -(model.value_batch(X) - shift)
    dens = np.where(np.isfinite(logd), np.exp(np.where(np.isfinite(logd), logd, 0.0)), 0.0)
    Z = float(grid.weights @ dens)
    return dens / Z, X


def true_integral(model: PosteriorModel, fit: LaplaceFit, g, grid: QuadratureGrid | None = None):
    """``int g d pi`` with ``pi`` normalized on the grid; ``g`` maps rows of points to values."""
    grid = grid or QuadratureGrid.build(fit.dim)
    dens, X = _posterior_weights(model, fit, grid)
    vals = np.asarray(g(X), dtype=float)
    wd = grid.weights * dens
    out = wd @ vals if vals.ndim == 1 else (wd[:, None] * vals).sum(axis=0)
    return float(out) if np.ndim(out) == 0 else out


def true_mean(model: PosteriorModel, fit: LaplaceFit, grid: QuadratureGrid | None = None) -> np.ndarray:
    return np.atleast_1d(true_integral(model, fit, lambda X: X, grid))


def halfspace_probability(model: PosteriorModel, fit: LaplaceFit, normal, **kw) -> float:
    """``pi(normal . (x - mode) >= 0)`` on a grid aligned with the half-space boundary."""
    grid = QuadratureGrid.aligned(fit, normal, **kw)
    dens, _ = _posterior_weights(model, fit, grid)
    inside = grid.points[:, 0] > 0
    return float((grid.weights * dens)[inside].sum())


def true_tv(
    model: PosteriorModel,
    fit: LaplaceFit,
    against: str = "laplace",
    grid: QuadratureGrid | None = None,
    sc: SkewCorrection | None = None,
) -> float:
    """``1/2 int |pi - q|`` with ``q`` the Laplace density or the signed ``(1 + S)`` density."""
    grid = grid or QuadratureGrid.build(fit.dim)
    dens, _ = _posterior_weights(model, fit, grid)
    Z = grid.points
    phi = np.exp(-0.5 * np.sum(Z * Z, axis=1)) / (2.0 * np.pi) ** (fit.dim / 2.0)
    if against == "laplace":
        q = phi
    elif against == "skew_corrected":
        if sc is None:
            raise ValueError("skew_corrected comparison needs a SkewCorrection")
        q = phi * (1.0 - sc.tensor.cubes(Z @ grid.rotation.T) / 6.0)
    else:
        raise ValueError(f"unknown comparison {against!r}")
    return 0.5 * float(grid.weights @ np.abs(dens - q))


def ltv_quadrature(sc: SkewCorrection, grid: QuadratureGrid | None = None) -> float:
    """``L_TV = 1/2 int |S| d gamma`` on the grid (deterministic counterpart of the Monte Carlo estimate)."""
    grid = grid or QuadratureGrid.build(sc.fit.dim)
    Z = grid.points
    phi = np.exp(-0.5 * np.sum(Z * Z, axis=1)) / (2.0 * np.pi) ** (sc.fit.dim / 2.0)
    return 0.5 * float(grid.weights @ (phi * np.abs(sc.tensor.cubes(Z @ grid.rotation.T)) / 6.0))
