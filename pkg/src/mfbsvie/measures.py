"""Empirical measures, Wasserstein distances and discrete law flows."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import DimensionMismatch, InvalidArgument, ResourceLimitError, UnsupportedConfiguration

ASSIGNMENT_CAP = 512


@dataclass(frozen=True, eq=False)
class EmpiricalMeasure:
    """Atomic probability measure ``sum_i w_i delta_{x_i}`` on ``R^d``."""

    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2 or pts.shape[0] == 0:
            raise InvalidArgument("points must be a non-empty (n,) or (n, d) array")
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        if w.shape[0] != pts.shape[0]:
            raise InvalidArgument("one weight per support point is required")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise InvalidArgument("weights must be finite and non-negative")
        if abs(math.fsum(w.tolist()) - 1.0) > 1e-12:
            raise InvalidArgument("weights must sum to 1 within 1e-12")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)

    @classmethod
    def uniform(cls, points) -> "EmpiricalMeasure":
        pts = np.asarray(points, dtype=float)
        n = pts.shape[0]
        return cls(pts, np.full(n, 1.0 / n))

    @classmethod
    def dirac(cls, x) -> "EmpiricalMeasure":
        return cls(np.atleast_1d(np.asarray(x, dtype=float))[None, :], np.ones(1))

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def size(self) -> int:
        return self.points.shape[0]

    def is_uniform(self) -> bool:
        return bool(np.all(self.weights == self.weights[0]))

    def mean(self) -> np.ndarray:
        return self.weights @ self.points


def _quantile_cost_1d(p, x, wx, y, wy):
    ox, oy = np.argsort(x, kind="stable"), np.argsort(y, kind="stable")
    xs, ys = x[ox], y[oy]
    if len(xs) == len(ys) and np.all(wx == wx[0]) and np.all(wy == wy[0]):
        return float(np.mean(np.abs(xs - ys) ** p))
    cx = np.cumsum(wx[ox])
    cy = np.cumsum(wy[oy])
    cx[-1] = cy[-1] = 1.0
    breaks = np.union1d(cx, cy)
    lo = np.concatenate([[0.0], breaks[:-1]])
    mass = breaks - lo
    keep = mass > 0
    mid = 0.5 * (lo + breaks)[keep]
    ix = np.minimum(np.searchsorted(cx, mid), len(xs) - 1)
    iy = np.minimum(np.searchsorted(cy, mid), len(ys) - 1)
    return float(np.sum(mass[keep] * np.abs(xs[ix] - ys[iy]) ** p))


def wasserstein(p: float, mu: EmpiricalMeasure, nu: EmpiricalMeasure) -> float:
    """Exact ``W_p`` between two empirical measures.

    One dimension uses quantile matching over the merged cumulative-weight
    breakpoints; higher dimensions solve the optimal assignment problem and
    therefore require equal-size uniform supports (at most 512 atoms).
    """
    if not p >= 1:
        raise InvalidArgument(f"p must be >= 1, got {p}")
    if mu.dim != nu.dim:
        raise DimensionMismatch(f"dimension mismatch: {mu.dim} vs {nu.dim}")
    if mu.dim == 1:
        cost = _quantile_cost_1d(p, mu.points[:, 0], mu.weights, nu.points[:, 0], nu.weights)
        return cost ** (1.0 / p)
    if mu.size != nu.size or not (mu.is_uniform() and nu.is_uniform()):
        raise UnsupportedConfiguration(
            "multi-dimensional transport needs equal-size supports with uniform weights")
    if mu.size > ASSIGNMENT_CAP:
        raise ResourceLimitError(f"assignment size {mu.size} exceeds the cap {ASSIGNMENT_CAP}")
    diff = mu.points[:, None, :] - nu.points[None, :, :]
    cost = np.sqrt(np.sum(diff * diff, axis=-1)) ** p
    r, c = linear_sum_assignment(cost)
    return float(np.mean(cost[r, c])) ** (1.0 / p)


def distance_to_dirac0(p: float, mu: EmpiricalMeasure) -> float:
    """``W_p(mu, delta_0) = (sum_i w_i |x_i|^p)^{1/p}``."""
    norms = np.sqrt(np.sum(mu.points ** 2, axis=1))
    return float(mu.weights @ norms ** p) ** (1.0 / p)


def coupling_bound_check(p: float, xs, ys) -> bool:
    """Check ``W_p(emp(xs), emp(ys)) <= (mean |xs_i - ys_i|^p)^{1/p}`` (+1e-10)."""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if xs.shape != ys.shape:
        raise DimensionMismatch(f"sample shapes differ: {xs.shape} vs {ys.shape}")
    mu, nu = EmpiricalMeasure.uniform(xs), EmpiricalMeasure.uniform(ys)
    diff = (xs - ys).reshape(len(xs), -1)
    coupling = float(np.mean(np.sqrt(np.sum(diff ** 2, axis=1)) ** p)) ** (1.0 / p)
    return wasserstein(p, mu, nu) <= coupling + 1e-10


def _wsum(w: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Column sums of ``w * x`` in sorted order: independent of the row order."""
    return np.sum(np.sort(w * x, axis=0), axis=0)


class LawFlow:
    """Discrete flows ``mu(t_k)`` (laws of Y) and ``nu(t_i, t_k)`` (laws of Z).

    The flow stores the atoms: ``y`` with shape ``(n, M + 1)``, ``z`` with
    shape ``(n, len(triangle), d)`` and scenario weights ``(n, M + 1)``.
    Measures are built lazily; the summaries used by generators (mean,
    ``W_2`` and ``W_1`` distances to ``delta_0``) are precomputed.
    """

    def __init__(self, grid, y, z, weights):
        self.grid = grid
        self.triangle = grid.triangle
        self.y = np.asarray(y, dtype=float)
        self.z = np.asarray(z, dtype=float)
        self.weights = np.asarray(weights, dtype=float)
        M = grid.steps
        if self.y.shape[1] != M + 1 or self.z.shape[1] != len(self.triangle):
            raise DimensionMismatch("law flow arrays do not match the grid")
        w = self.weights
        self.y_mean = _wsum(w, self.y)
        self.y_rms = np.sqrt(_wsum(w, self.y ** 2))
        self.y_abs = _wsum(w, np.abs(self.y))
        zw = w[:, self.triangle.cols]
        zz = np.sum(self.z ** 2, axis=-1)
        self.z_rms = np.sqrt(_wsum(zw, zz))
        self.z_abs = _wsum(zw, np.sqrt(zz))

    @classmethod
    def dirac_zero(cls, grid, d: int = 1) -> "LawFlow":
        M = grid.steps
        return cls(grid, np.zeros((1, M + 1)), np.zeros((1, len(grid.triangle), d)),
                   np.ones((1, M + 1)))

    def _measure(self, atoms, w):
        keep = w > 0
        w = w[keep]
        return EmpiricalMeasure(atoms[keep], w / math.fsum(w.tolist()))

    def y_law(self, k: int) -> EmpiricalMeasure:
        return self._measure(self.y[:, k], self.weights[:, k])

    def z_law(self, i: int, k: int) -> EmpiricalMeasure:
        c = self.triangle.index(i, k)
        return self._measure(self.z[:, c, :], self.weights[:, k])
