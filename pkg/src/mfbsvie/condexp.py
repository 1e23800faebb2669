"""Conditional expectations ``E[. | F_{t_k}]`` and martingale integrands ``Z``.

Two backends:

``lattice-exact``
    one-step binomial average on the recombining tree, ``Z`` by the two-point
    difference ``(V_up - V_down) / (2 sqrt(dt))``;
``regression``
    weighted least squares on probabilists' Hermite polynomials of the
    standardised state ``W(t_k) / sqrt(t_k)`` (total degree ``<= q``) plus
    optional extra features, ridge-regularised on the non-constant
    coefficients.  ``Z`` regresses the control-variate increment
    ``(V - E[V | F_k]) dW_k / dt``.

Fits are batched over a leading "equation" axis so that ``E`` independent
regressions (one per particle) share one call.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from numpy.polynomial import hermite_e

from .errors import InvalidArgument, NumericalFailure, UnsupportedConfiguration

LATTICE = "lattice-exact"
REGRESSION = "regression"


@dataclass(frozen=True)
class CondExpEngine:
    """Estimator settings; immutable and shared by all fits."""

    backend: str = REGRESSION
    degree: int = 3
    ridge: float = 1e-8
    max_condition: float = 1e12
    extra_features: tuple = ()
    # the standardised state is clipped to [-clip, clip] before the basis is
    # evaluated: polynomial extrapolation at rare far-tail scenarios has high
    # leverage, and quadratic drivers square the resulting Z outliers
    clip: float = 4.0

    def __post_init__(self):
        if self.backend not in (LATTICE, REGRESSION):
            raise InvalidArgument(f"unknown backend {self.backend!r}")
        if self.degree < 0:
            raise InvalidArgument("degree must be >= 0")
        if self.ridge < 0:
            raise InvalidArgument("ridge must be >= 0")
        if not self.clip > 0:
            raise InvalidArgument("clip must be positive (use inf for no clipping)")

    @property
    def descriptor(self) -> dict:
        return {"backend": self.backend, "degree": self.degree, "ridge": self.ridge,
                "basis": "hermite_e total degree of W(t_k)/sqrt(t_k)",
                "clip": self.clip if math.isfinite(self.clip) else None,
                "extra_features": list(self.extra_features)}

    def features(self, state: np.ndarray, t_k: float) -> np.ndarray:
        """Regression basis at time ``t_k`` for ``state`` of shape ``(..., d)``."""
        if t_k > 0 and self.degree > 0:
            x = np.clip(state / math.sqrt(t_k), -self.clip, self.clip)
            return hermite_features(x, self.degree)
        return np.ones(state.shape[:-1] + (1,))

    def check(self, ensemble) -> None:
        if self.backend == LATTICE and not ensemble.is_lattice:
            raise UnsupportedConfiguration("the lattice-exact backend needs a lattice ensemble")
        if self.backend == REGRESSION and ensemble.is_lattice:
            raise UnsupportedConfiguration("the regression backend needs a paths ensemble")


def _multi_indices(d: int, q: int):
    return [a for a in itertools.product(range(q + 1), repeat=d) if sum(a) <= q]


def hermite_features(x: np.ndarray, q: int) -> np.ndarray:
    """Total-degree Hermite design for ``x`` of shape ``(..., d)`` -> ``(..., f)``."""
    d = x.shape[-1]
    he = np.empty(x.shape + (q + 1,))
    he[..., 0] = 1.0
    if q >= 1:
        he[..., 1] = x
    for n in range(2, q + 1):
        he[..., n] = x * he[..., n - 1] - (n - 1) * he[..., n - 2]
    cols = []
    for a in _multi_indices(d, q):
        col = np.ones(x.shape[:-1])
        for j, aj in enumerate(a):
            if aj:
                col = col * he[..., j, aj]
        cols.append(col)
    return np.stack(cols, axis=-1)


def _standardise(extras: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Centre and scale extra features per equation; constant columns become 0."""
    mean = np.einsum("n,enm->em", w, extras)[:, None, :]
    c = extras - mean
    sd = np.sqrt(np.einsum("n,enm->em", w, c * c))[:, None, :]
    scale = np.where(sd > 1e-12 * (1.0 + np.abs(mean)), sd, np.inf)
    return c / scale


class LatticeStep:
    """Exact one-step operators at step ``k`` on a padded lattice."""

    def __init__(self, k: int, dt: float):
        self.k = k
        self.h = math.sqrt(dt)

    def condexp(self, target: np.ndarray) -> np.ndarray:
        out = np.zeros_like(target)
        k = self.k
        out[:, : k + 1] = 0.5 * (target[:, : k + 1] + target[:, 1: k + 2])
        return out

    def z(self, target: np.ndarray, fitted: np.ndarray | None = None) -> np.ndarray:
        out = np.zeros(target.shape + (1,))
        k = self.k
        out[:, : k + 1, ..., 0] = (target[:, 1: k + 2] - target[:, : k + 1]) / (2 * self.h)
        return out


class RegressionStep:
    """Least-squares projector onto the design at step ``k``.

    ``state`` has shape ``(E, n, d)``, ``increments`` ``(E, n, d)``, ``weights``
    ``(n,)`` and ``extras`` ``(E or 1, n, m)``.
    """

    def __init__(self, engine: CondExpEngine, k: int, t_k: float, dt: float,
                 state: np.ndarray, increments: np.ndarray, weights: np.ndarray,
                 extras: np.ndarray | None = None):
        self.k = k
        self.dt = dt
        self.increments = increments
        E, n, d = state.shape
        X = engine.features(state, t_k)
        if extras is not None and extras.shape[-1]:
            ex = _standardise(np.broadcast_to(extras, (E,) + extras.shape[1:]), weights)
            X = np.concatenate([X, ex], axis=-1)
        f = X.shape[-1]
        Xw = X * weights[None, :, None]
        G = np.matmul(np.swapaxes(Xw, 1, 2), X)
        pen = np.full(f, engine.ridge)
        pen[0] = 0.0
        G = G + np.diag(pen)
        cond = np.linalg.cond(G)
        bad = ~np.isfinite(cond) | (cond > engine.max_condition)
        if np.any(bad):
            e = int(np.argmax(bad))
            raise NumericalFailure(
                "rank-deficient regression design",
                {"step": k, "equation": e, "condition": float(cond[e]), "features": f, "scenarios": n})
        self.X = X
        self.H = np.linalg.solve(G, np.swapaxes(Xw, 1, 2))
        self.condition = cond

    def project(self, target: np.ndarray) -> np.ndarray:
        # constants lie in the unpenalised span: fitting the target minus its
        # first entry and adding it back reproduces constant targets exactly
        shift = target[:, :1]
        return shift + np.matmul(self.X, np.matmul(self.H, target - shift))

    def condexp(self, target: np.ndarray) -> np.ndarray:
        return self.project(target)

    def z(self, target: np.ndarray, fitted: np.ndarray) -> np.ndarray:
        E, n, R = target.shape
        dW = self.increments
        d = dW.shape[-1]
        rhs = (target - fitted)[..., None] * dW[:, :, None, :] / self.dt
        return self.project(rhs.reshape(E, n, R * d)).reshape(E, n, R, d)


def _single_step(engine: CondExpEngine, ensemble, k: int):
    engine.check(ensemble)
    M = ensemble.grid.steps
    if not 0 <= k < M:
        raise InvalidArgument(f"step index k={k} must satisfy 0 <= k < M={M}")
    if engine.backend == LATTICE:
        return LatticeStep(k, ensemble.grid.dt)
    return RegressionStep(engine, k, float(ensemble.grid.nodes[k]), ensemble.grid.dt,
                          ensemble.values[None, :, k, :], ensemble.increments[None, :, k, :],
                          ensemble.weights[:, k])


def _as_columns(target, n):
    t = np.asarray(target, dtype=float)
    if t.shape[0] != n:
        raise InvalidArgument(f"target must have one entry per scenario ({n})")
    return t.reshape(1, n, -1), t.shape


def condexp(engine: CondExpEngine, ensemble, k: int, target) -> np.ndarray:
    """Scenario-wise estimate of ``E[target | F_{t_k}]``; ``target`` is ``(n,)`` or ``(n, R)``.

    On the lattice ``target`` lives on the step ``k + 1`` nodes and entries
    above ``k`` in the result are padding (zero).
    """
    step = _single_step(engine, ensemble, k)
    t, shape = _as_columns(target, ensemble.n_states)
    return step.condexp(t).reshape(shape)


def extract_z(engine: CondExpEngine, ensemble, k: int, next_value) -> np.ndarray:
    """``Z_k ~ E[next_value dW_k | F_{t_k}] / dt`` per coordinate -> ``(n, d)`` or ``(n, R, d)``."""
    step = _single_step(engine, ensemble, k)
    t, shape = _as_columns(next_value, ensemble.n_states)
    fitted = step.condexp(t)
    z = step.z(t, fitted)
    return z.reshape(shape + (z.shape[-1],))
