"""Picard solver for mean-field BSVIEs via the parameterised BSDE family.

For every row ``t_i`` the equation

    Y(t_i, s) = psi(t_i) + int_s^T g(t_i, r, y(r), Z(t_i, r), law y(r), law Z(t_i, r)) dr
                - int_s^T Z(t_i, r) dW(r)

is a BSDE in ``s``; with the flow ``y`` frozen, all rows are solved by one
backward sweep over ``k = M-1, ..., 0`` that handles every live row
``i <= k`` at once.  The BSVIE solution is the diagonal ``Y(t_i) =
Y(t_i, t_i)``, and Picard iteration on ``y`` closes the loop.

The sweep is written once for arrays shaped ``(E, n, ...)``: ``E``
equations (1 for the mean-field solve, ``N`` for a particle system) and
``n`` scenarios or lattice nodes.  How the law arguments are formed is
delegated to a law provider (scenario average, cross-particle average,
frozen reference flow, or the particle's own Dirac mass).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .bounds import BoundsRecord, a_priori_bounds
from .condexp import LATTICE, CondExpEngine, LatticeStep, RegressionStep
from .errors import DivergenceError, InvalidArgument, NonConvergenceError, UnsupportedConfiguration
from .generators import QUAD_UNBOUNDED, FreeTermSpec, GeneratorSpec, resolved_constants
from .lattice import NoiseEnsemble, TimeGrid
from .measures import LawFlow

DEFAULT_TOL = {LATTICE: 1e-6, "regression": 1e-4}


@dataclass(frozen=True)
class PicardConfig:
    """Picard loop settings.

    ``tolerance`` defaults to 1e-6 on the lattice and 1e-4 with regression;
    ``beta`` defaults to ``16 L^2 T + 8 L^2 + 1`` (``L`` from the generator, 1
    for quadratic classes); ``z_radius`` caps the truncation radius of the
    ``z`` argument of quadratic drivers.
    """

    tolerance: float | None = None
    max_iter: int = 50
    beta: float | None = None
    z_radius: float | None = None
    damping: float = 1.0
    auto_damping: bool = True

    def __post_init__(self):
        if self.tolerance is not None and not self.tolerance > 0:
            raise InvalidArgument("tolerance must be positive")
        if self.max_iter < 1:
            raise InvalidArgument("max_iter must be at least 1")
        if not 0 < self.damping <= 1:
            raise InvalidArgument("damping must lie in (0, 1]")
        if self.z_radius is not None and not self.z_radius > 0:
            raise InvalidArgument("z_radius must be positive")


@dataclass(frozen=True, eq=False)
class Problem:
    """Data ``(psi, g)`` plus the numerical backend."""

    grid: TimeGrid
    generator: GeneratorSpec
    free_term: FreeTermSpec
    d: int = 1
    engine: CondExpEngine = field(default_factory=CondExpEngine)
    ensemble: NoiseEnsemble | None = None

    def __post_init__(self):
        if self.engine.backend == LATTICE and self.d != 1:
            raise UnsupportedConfiguration("the lattice backend forces d = 1")
        if self.ensemble is not None:
            if self.ensemble.grid != self.grid:
                raise InvalidArgument("ensemble grid differs from the problem grid")
            if self.ensemble.dim != self.d:
                raise InvalidArgument("ensemble dimension differs from d")
            self.engine.check(self.ensemble)

    def with_ensemble(self, ensemble: NoiseEnsemble) -> "Problem":
        return replace(self, ensemble=ensemble)

    def beta(self, config: PicardConfig) -> float:
        if config.beta is not None:
            return config.beta
        L = self.generator.constants.L
        L = 1.0 if L is None else L
        T = self.grid.horizon
        return 16 * L * L * T + 8 * L * L + 1

    def bounds(self) -> BoundsRecord | None:
        if not self.generator.is_quadratic:
            return None
        c = resolved_constants(self.generator, self.free_term, self.grid.horizon)
        return a_priori_bounds(c, self.grid.horizon)


@dataclass(eq=False)
class SolutionField:
    """Discrete solution of one (mean-field) BSVIE.

    ``Y`` is ``(n, M + 1)``, ``Z`` is ``(n, len(triangle), d)``; ``family``
    (when stored) holds the whole parameterised field ``Y(t_i, t_k)`` in
    triangle order, so ``Y[:, i]`` is bit-identical to ``family[:, (i, i)]``.
    ``weights`` is the scenario weight of each node/scenario per step.
    """

    grid: TimeGrid
    Y: np.ndarray
    Z: np.ndarray
    weights: np.ndarray
    laws: LawFlow
    family: np.ndarray | None
    diagnostics: dict
    ensemble: NoiseEnsemble | None = None

    @property
    def converged(self) -> bool:
        return bool(self.diagnostics.get("converged"))

    @property
    def trail(self) -> list:
        return list(self.diagnostics.get("norm_trail", []))


# ---------------------------------------------------------------------------
# law providers


class ScenarioLaw:
    """Laws as weighted distributions over scenarios/nodes (mean-field solve)."""

    name = "scenario"

    def __init__(self, weights: np.ndarray, triangle):
        self.weights = weights
        self.triangle = triangle

    def y_stats(self, yk: np.ndarray, k: int):
        w = self.weights[:, k]
        mean = (yk @ w)[:, None, None]
        rms = np.sqrt((yk * yk) @ w)[:, None, None]
        return mean, rms, (np.abs(yk) @ w)[:, None, None]

    def z_stats(self, Z: np.ndarray, k: int):
        w = self.weights[:, k]
        zz = np.sum(Z * Z, axis=-1)
        rms = np.sqrt(np.einsum("enr,n->er", zz, w))[:, None, :]
        return rms, np.einsum("enr,n->er", np.sqrt(zz), w)[:, None, :]


class ParticleLaw:
    """Cross-particle empirical laws within each scenario (particle system)."""

    name = "particles"

    def y_stats(self, yk: np.ndarray, k: int):
        mean = np.mean(yk, axis=0)[None, :, None]
        rms = np.sqrt(np.mean(yk * yk, axis=0))[None, :, None]
        return mean, rms, np.mean(np.abs(yk), axis=0)[None, :, None]

    def z_stats(self, Z: np.ndarray, k: int):
        zz = np.sum(Z * Z, axis=-1)
        return np.sqrt(np.mean(zz, axis=0))[None], np.mean(np.sqrt(zz), axis=0)[None]


class FrozenLaw:
    """Laws read from a fixed reference flow (coupled copies)."""

    name = "frozen"

    def __init__(self, laws: LawFlow):
        self.laws = laws

    def y_stats(self, yk, k):
        return self.laws.y_mean[k], self.laws.y_rms[k], self.laws.y_abs[k]

    def z_stats(self, Z, k):
        cols = self.laws.triangle.column(k)
        return self.laws.z_rms[cols], self.laws.z_abs[cols]


class SelfLaw:
    """Each equation sees the Dirac mass at its own state."""

    name = "self"

    def y_stats(self, yk, k):
        return yk[..., None], np.abs(yk)[..., None], np.abs(yk)[..., None]

    def z_stats(self, Z, k):
        norm = np.sqrt(np.sum(Z * Z, axis=-1))
        return norm, norm


# ---------------------------------------------------------------------------
# drivers stacked over equations


@dataclass(eq=False)
class Drivers:
    """Brownian data of ``E`` equations sharing ``n`` scenarios."""

    grid: TimeGrid
    values: np.ndarray                 # (E, n, M+1, d)
    increments: np.ndarray | None      # (E, n, M, d)
    weights: np.ndarray                # (n, M+1)
    lattice: bool

    @classmethod
    def single(cls, ens: NoiseEnsemble) -> "Drivers":
        inc = None if ens.increments is None else ens.increments[None]
        return cls(ens.grid, ens.values[None], inc, ens.weights, ens.is_lattice)

    @classmethod
    def stack(cls, ensembles) -> "Drivers":
        first = ensembles[0]
        if any(e.is_lattice for e in ensembles):
            raise UnsupportedConfiguration("particle systems need path ensembles")
        if any(e.n_states != first.n_states or e.grid != first.grid for e in ensembles):
            raise InvalidArgument("particle ensembles must share grid and scenario count")
        return cls(first.grid, np.stack([e.values for e in ensembles]),
                   np.stack([e.increments for e in ensembles]), first.weights, False)

    @property
    def shape(self):
        return self.values.shape[0], self.values.shape[1]

    def step(self, engine: CondExpEngine, k: int, extras=None):
        if self.lattice:
            return LatticeStep(k, self.grid.dt)
        return RegressionStep(engine, k, float(self.grid.nodes[k]), self.grid.dt,
                              self.values[:, :, k, :], self.increments[:, :, k, :],
                              self.weights[:, k], extras)


def moment_design(y_flow: np.ndarray) -> np.ndarray:
    """Cross-particle moments of a flow ``(E, n, M+1)`` at every step, ``(n, M+1, 2)``."""
    return np.stack([np.mean(y_flow, axis=0), np.mean(y_flow * y_flow, axis=0)], axis=-1)


def _moment_extras(yk: np.ndarray) -> np.ndarray:
    """Symmetric cross-particle moments of the frozen flow, shape ``(1, n, 2)``."""
    return np.stack([np.mean(yk, axis=0), np.mean(yk * yk, axis=0)], axis=-1)[None]


@dataclass(eq=False)
class SweepResult:
    Y: np.ndarray                # (E, n, M+1) diagonal
    Z: np.ndarray                # (E, n, n_tri, d)
    family: np.ndarray | None    # (E, n, n_tri)
    offdiag: np.ndarray | None   # (E, n, n_tri) sum_{j != e} |Z^{e,j}|^2
    design_flow: np.ndarray | None = None   # Y flow that fed the last sweep


@np.errstate(over="ignore", invalid="ignore")
def backward_sweep(grid: TimeGrid, gen: GeneratorSpec, psi: np.ndarray, drivers: Drivers,
                   engine: CondExpEngine, y_flow: np.ndarray, law, z_radius: float = math.inf,
                   extras=False, store_family: bool = True,
                   offdiag: bool = False, particle_labels=None) -> SweepResult:
    """One application of the Picard map: solve every row backward with ``y_flow`` frozen.

    ``psi`` is ``(E, n, M+1)`` (free term of each row at the terminal
    states) and ``y_flow`` is ``(E, n, M+1)``.  ``extras`` adds regression
    features: ``True`` uses the cross-particle moments of ``y_flow``; an
    array of shape ``(n, M+1, m)`` supplies fixed features instead.
    """
    M = grid.steps
    dt = grid.dt
    t = grid.nodes
    tri = grid.triangle
    E, n = drivers.shape
    d = drivers.values.shape[-1]
    V = np.array(psi, dtype=float, copy=True)
    Yd = np.empty((E, n, M + 1))
    Yd[:, :, M] = V[:, :, M]
    Zf = np.zeros((E, n, len(tri), d))
    fam = np.zeros((E, n, len(tri))) if store_family else None
    off = np.zeros((E, n, len(tri))) if offdiag else None
    if store_family:
        fam[:, :, tri.column(M)] = V
    quad = gen.is_quadratic
    for k in range(M - 1, -1, -1):
        R = k + 1
        yk = y_flow[:, :, k]
        if isinstance(extras, np.ndarray):
            ex = extras[None, :, k, :]
        else:
            ex = _moment_extras(yk) if extras else None
        step = drivers.step(engine, k, ex)
        target = V[:, :, :R]
        C = step.condexp(target)
        Z = step.z(target, C)
        mu_mean, mu_rms, mu_abs = law.y_stats(yk, k)
        nu_rms, nu_abs = law.z_stats(Z, k)
        zarg = Z
        if quad and math.isfinite(z_radius):
            norm = np.sqrt(np.sum(Z * Z, axis=-1, keepdims=True))
            zarg = Z * np.minimum(1.0, z_radius / np.maximum(norm, 1e-300))
        ell = gen.cell_ell(t[:R], t[k], t[k + 1]) if gen.singular else None
        g = gen.evaluate(t[:R], grid.midpoints[k], yk[..., None], zarg, mu_mean, mu_rms, nu_rms,
                         ell, mu_abs, nu_abs)
        new = C + dt * g
        live = slice(0, k + 1) if drivers.lattice else slice(None)
        if drivers.lattice:
            new[:, k + 1:] = 0.0
        if not np.all(np.isfinite(new[:, live])):
            bad = ~np.isfinite(new[:, live])
            e, _, r = (int(v[0]) for v in np.nonzero(bad))
            who = None if particle_labels is None else int(particle_labels[e])
            raise DivergenceError(f"non-finite value at cell (i={r}, k={k})"
                                  + ("" if who is None else f" for particle {who}"),
                                  cell=(r, k), particle=who)
        if offdiag and E > 1:
            off[:, :, tri.column(k)] = _offdiag_energy_step(step, target, C, drivers, k)
        V[:, :, :R] = new
        Yd[:, :, k] = new[:, :, k]
        cols = tri.column(k)
        Zf[:, :, cols, :] = Z
        if store_family:
            fam[:, :, cols] = new
    # terminal column: Z(t_i, t_M) := Z(t_i, t_{M-1}); corner := Z(t_{M-1}, t_{M-1})
    if M >= 1:
        last = tri.column(M)
        prev = tri.column(M - 1)
        Zf[:, :, last[:-1], :] = Zf[:, :, prev, :]
        Zf[:, :, last[-1], :] = Zf[:, :, prev[-1], :]
    return SweepResult(Yd, Zf, fam, off)


def _offdiag_energy_step(step: RegressionStep, target, C, drivers: Drivers, k: int) -> np.ndarray:
    E, n, R = target.shape
    dW = drivers.increments[:, :, k, :]          # (E, n, d)
    d = dW.shape[-1]
    out = np.empty((E, n, R))
    resid = (target - C) / step.dt               # (E, n, R)
    dWn = np.transpose(dW, (1, 0, 2))            # (n, E, d)
    for e in range(E):
        X, H = step.X[e], step.H[e]
        rhs = resid[e][:, :, None, None] * dWn[:, None, :, :]      # (n, R, E, d)
        fit = X @ (H @ rhs.reshape(n, R * E * d))
        fit = fit.reshape(n, R, E, d)
        res2 = (rhs - fit) ** 2
        fit[:, :, e, :] = 0.0
        res2[:, :, e, :] = 0.0
        # sandwich (HC2) variance of the fitted values, summed over j != e:
        # the squared fits overestimate |Z^{e,j}|^2 by this noise term
        lev = np.einsum("na,an->n", X, H)
        s = np.sum(res2, axis=(2, 3)) / np.maximum(1.0 - lev, 1e-3)[:, None]
        cov = np.einsum("am,bm,mr->abr", H, H, s)
        noise = np.einsum("na,nb,abr->nr", X, X, cov)
        out[e] = np.sum(fit * fit, axis=(2, 3)) - noise
    return out


# ---------------------------------------------------------------------------
# Picard loop


@np.errstate(over="ignore", invalid="ignore")
def weighted_norm(grid: TimeGrid, weights: np.ndarray, beta: float, dY: np.ndarray,
                  dZ: np.ndarray) -> float:
    """Discrete ``sum_k e^{beta t_k} E|dY_k|^2 dt + sum_{i<=k<M} e^{beta t_k} E|dZ_ik|^2 dt^2``.

    The weights ``e^{beta t_k} >= 1`` are used unnormalised, so a tolerance
    on this norm also bounds the plain (unweighted) differences; only when
    ``beta T`` approaches the overflow threshold are they shifted down.
    Arrays carry a leading equation axis which is averaged.
    """
    M = grid.steps
    dt = grid.dt
    tri = grid.triangle
    wt = np.exp(beta * grid.nodes - max(0.0, beta * grid.horizon - 700.0))
    ey = np.einsum("enk,nk->k", dY * dY, weights)[:M] / dY.shape[0]
    cells = tri.cols < M
    cols = tri.cols[cells]
    ez = np.einsum("enc,nc->c", np.sum(dZ[:, :, cells] ** 2, axis=-1), weights[:, cols]) / dZ.shape[0]
    return float(np.sum(wt[:M] * ey) * dt + np.sum(wt[cols] * ez) * dt * dt)


def picard_iterate(grid, gen, psi, drivers, engine, law, config: PicardConfig, beta: float,
                   tolerance: float, z_radius: float = math.inf, extras=False,
                   store_family: bool = True, offdiag: bool = False, per_equation: bool = False,
                   particle_labels=None):
    """Run the Picard loop; returns ``(SweepResult, diagnostics)``.

    Damping ``theta = 0.5`` switches on automatically once the norm trail has
    failed to decrease twice (oscillation), unless ``auto_damping`` is off.
    ``per_equation`` stops each equation separately (valid only when the
    equations do not interact), so that a batch reproduces independent solves.
    Raises :class:`NonConvergenceError` carrying the trail and last iterate.
    """
    E, n = drivers.shape
    M = grid.steps
    d = drivers.values.shape[-1]
    y_in = np.zeros((E, n, M + 1))
    prev_y = np.zeros((E, n, M + 1))
    prev_z = np.zeros((E, n, len(grid.triangle), d))
    theta = config.damping
    trail: list[float] = []
    eq_trails: list[list[float]] = [[] for _ in range(E)]
    active = np.ones(E, dtype=bool)
    final = None
    increases = 0
    damping_events = []
    constant_map = not (gen.uses_y or (gen.uses_law_y and law.name != "frozen"))
    kw = dict(z_radius=z_radius, extras=extras, store_family=store_family,
              particle_labels=particle_labels)
    converged = False
    last_input = y_in
    for it in range(1, config.max_iter + 1):
        res = backward_sweep(grid, gen, psi, drivers, engine, y_in, law, **kw)
        if per_equation and E > 1 and final is not None:
            # equations that already converged keep their accepted iterate
            for name in ("Y", "Z", "family"):
                arr_new, arr_old = getattr(res, name), getattr(final, name)
                if arr_new is not None:
                    arr_new[~active] = arr_old[~active]
        dY = res.Y - prev_y
        dZ = res.Z - prev_z
        if per_equation and E > 1:
            for e in np.nonzero(active)[0]:
                eq_trails[e].append(weighted_norm(grid, drivers.weights, beta, dY[e:e + 1], dZ[e:e + 1]))
            diff = weighted_norm(grid, drivers.weights, beta, dY, dZ)
        else:
            diff = weighted_norm(grid, drivers.weights, beta, dY, dZ)
        trail.append(diff)
        final = res
        last_input = y_in
        if per_equation and E > 1:
            for e in np.nonzero(active)[0]:
                if eq_trails[e][-1] < tolerance or constant_map:
                    active[e] = False
            converged = not np.any(active)
        else:
            converged = diff < tolerance or constant_map
        if converged:
            break
        if len(trail) >= 2 and trail[-1] >= trail[-2]:
            increases += 1
            if increases >= 2 and config.auto_damping and theta == 1.0 and not per_equation:
                theta = 0.5
                damping_events.append(it)
        prev_y, prev_z = res.Y, res.Z
        y_in = res.Y if theta == 1.0 else theta * res.Y + (1 - theta) * y_in
    ratios = [trail[j] / trail[j - 1] if trail[j - 1] > 0 else 0.0 for j in range(1, len(trail))]
    diag = {
        "converged": bool(converged),
        "iterations": len(trail),
        "norm_trail": trail,
        "ratios": ratios,
        "beta": beta,
        "tolerance": tolerance,
        "damping": theta,
        "auto_damping_at": damping_events,
        "map_independent_of_iterate": bool(constant_map),
        "z_radius": z_radius if math.isfinite(z_radius) else None,
    }
    if per_equation and E > 1:
        diag["equation_iterations"] = [len(t) for t in eq_trails]
    final.design_flow = last_input
    if offdiag:
        # replay the final sweep (deterministic) with off-diagonal fits enabled
        res = backward_sweep(grid, gen, psi, drivers, engine, last_input, law,
                             **dict(kw, offdiag=True))
        final.offdiag = res.offdiag
    return final, diag


def _canonical_order(ens: NoiseEnsemble) -> np.ndarray:
    keys = ens.increments.reshape(ens.n_states, -1)
    return np.lexsort(keys.T[::-1])


def _z_radius(problem: Problem, config: PicardConfig, bounds: BoundsRecord | None) -> float:
    if not problem.generator.is_quadratic:
        return math.inf
    cap = math.inf if config.z_radius is None else config.z_radius
    if bounds is None:
        return cap
    key = "M2" if problem.generator.growth == QUAD_UNBOUNDED else "M2bar"
    m2 = bounds.get(key, math.inf)
    return min(math.sqrt(m2 / problem.grid.dt), cap)


def _monitors(problem: Problem, bounds: BoundsRecord | None, Y, weights, bmo: float) -> dict:
    if bounds is None:
        return {}
    live = weights > 0
    ymax = float(np.max(np.abs(Y[live]))) if np.any(live) else 0.0
    if problem.generator.growth == QUAD_UNBOUNDED:
        yb, zb, yval = bounds.get("M1", math.inf), bounds.get("M2", math.inf), ymax
        ydesc = "max |Y| <= M1"
    else:
        yb, zb, yval = bounds.get("M1bar", math.inf), bounds.get("M2bar", math.inf), ymax * ymax
        ydesc = "max |Y|^2 <= M1bar"

    def entry(val, bound, desc):
        return {"value": val, "bound": bound if math.isfinite(bound) else "inf",
                "breached": bool(val > bound), "check": desc}

    return {"y_bound": entry(yval, yb, ydesc), "bmo": entry(bmo, zb, "bmo proxy <= Z-energy bound")}


def free_term_values(grid: TimeGrid, free: FreeTermSpec, values: np.ndarray) -> np.ndarray:
    """``psi(t_i)`` for every row on the terminal states of ``values`` (``(..., n, M+1, d)``)."""
    return free.evaluate(grid.nodes, values[..., -1, :])


def picard_solve(problem: Problem, config: PicardConfig | None = None, law_mode: str = "scenario",
                 store_family: bool = True, canonical_order: bool = True) -> SolutionField:
    """Solve the mean-field BSVIE by Picard iteration.

    ``law_mode="self"`` replaces the laws by the Dirac mass at each
    scenario's own state (the one-particle system).  Path ensembles are
    processed in a canonical (lexicographic) scenario order, which makes the
    result equivariant under scenario permutations bit for bit.
    """
    config = config or PicardConfig()
    ens = problem.ensemble
    if ens is None:
        raise InvalidArgument("problem has no ensemble; attach one with with_ensemble")
    grid = problem.grid
    gen = problem.generator
    if gen.is_quadratic and problem.free_term.bound is None:
        raise UnsupportedConfiguration("quadratic drivers need a bounded free term")
    order = None
    if canonical_order and not ens.is_lattice:
        order = _canonical_order(ens)
        ens = ens.permuted(order)
    drivers = Drivers.single(ens)
    psi = free_term_values(grid, problem.free_term, drivers.values)
    law = {"scenario": ScenarioLaw(drivers.weights, grid.triangle),
           "self": SelfLaw()}.get(law_mode)
    if law is None:
        raise InvalidArgument(f"unknown law mode {law_mode!r}")
    tol = config.tolerance or DEFAULT_TOL[problem.engine.backend]
    beta = problem.beta(config)
    bounds = problem.bounds()
    zr = _z_radius(problem, config, bounds)
    res, diag = picard_iterate(grid, gen, psi, drivers, problem.engine, law, config, beta, tol,
                               z_radius=zr, store_family=store_family)
    Y, Z = res.Y[0], res.Z[0]
    fam = None if res.family is None else res.family[0]
    weights = drivers.weights
    if order is not None:
        inv = np.empty_like(order)
        inv[order] = np.arange(len(order))
        Y, Z = Y[inv], Z[inv]
        fam = None if fam is None else fam[inv]
        weights = weights[inv]
    laws = LawFlow(grid, Y, Z, weights)
    sol = SolutionField(grid, Y, Z, weights, laws, fam, diag, problem.ensemble)
    diag["law_mode"] = law_mode
    diag["engine"] = problem.engine.descriptor
    if bounds is not None:
        diag["bounds"] = bounds.as_dict()
        diag["monitors"] = _monitors(problem, bounds, Y, weights, bmo_proxy(sol, problem.engine))
    if not diag["converged"]:
        raise NonConvergenceError(
            f"Picard iteration did not reach tolerance {tol:g} in {config.max_iter} iterations",
            diag["norm_trail"], sol)
    return sol


def solve_inner_family(problem: Problem, y_flow, laws: LawFlow | None = None):
    """One Picard map application with frozen ``y_flow`` (``(n, M+1)``) and frozen laws.

    Returns ``(family, Z)`` with ``family`` of shape ``(n, len(triangle))``
    holding ``Y(t_i, t_k)`` and ``Z`` of shape ``(n, len(triangle), d)``.
    When ``laws`` is ``None`` the laws are taken from the frozen flow for
    ``Y`` and from the current cell for ``Z``.
    """
    ens = problem.ensemble
    drivers = Drivers.single(ens)
    y = np.asarray(y_flow, dtype=float).reshape(1, ens.n_states, problem.grid.steps + 1)
    law = FrozenLaw(laws) if laws is not None else ScenarioLaw(drivers.weights, problem.grid.triangle)
    bounds = problem.bounds()
    zr = _z_radius(problem, PicardConfig(), bounds)
    psi = free_term_values(problem.grid, problem.free_term, drivers.values)
    res = backward_sweep(problem.grid, problem.generator, psi, drivers, problem.engine, y, law,
                         z_radius=zr)
    return res.family[0], res.Z[0]


def bmo_proxy(solution: SolutionField, engine: CondExpEngine | None = None,
              ensemble: NoiseEnsemble | None = None) -> float:
    """Grid proxy of the BMO energy of ``Z``.

    ``max_{i <= k} max_scenarios E[ sum_{l >= k} |Z(t_i, t_l)|^2 dt | F_{t_k} ]``,
    computed by the backward recursion ``A_k = |Z_ik|^2 dt + E[A_{k+1} | F_k]``.
    """
    ens = ensemble if ensemble is not None else solution.ensemble
    if ens is None:
        raise InvalidArgument("bmo_proxy needs the ensemble the solution was computed on")
    engine = engine or CondExpEngine(LATTICE if ens.is_lattice else "regression")
    grid = solution.grid
    M = grid.steps
    tri = grid.triangle
    drivers = Drivers.single(ens)
    n = ens.n_states
    energy = np.sum(solution.Z ** 2, axis=-1)           # (n, n_tri)
    A = np.zeros((1, n, M + 1))
    best = 0.0
    for k in range(M - 1, -1, -1):
        R = k + 1
        step = drivers.step(engine, k)
        cond = step.condexp(A[:, :, :R])
        A[:, :, :R] = energy[None, :, tri.column(k)] * grid.dt + cond
        live = ens.valid(k) & (ens.weights[:, k] > 0)
        best = max(best, float(np.max(A[0, live, :R])))
    return best
