"""N-particle BSVIE systems and their coupled mean-field copies.

Particle ``i`` is driven by its own Brownian motion ``W^i``, sampled from
the Philox stream ``(seed, streams[i])``; all particles share the same
scenario count ``P`` so that scenario ``p`` carries one realisation of the
whole system.  Within each scenario the law arguments are the empirical
measures across particles.

Particles are always processed in increasing stream order, so a joint
relabelling of (particle, stream, free term) permutes the output exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgument, UnsupportedConfiguration, ValidationError
from .lattice import TimeGrid, sample_paths
from .measures import EmpiricalMeasure, LawFlow
from .solver import (DEFAULT_TOL, Drivers, FrozenLaw, ParticleLaw, PicardConfig, Problem,
                     SolutionField, _z_radius, free_term_values, moment_design, picard_iterate)


@dataclass(eq=False)
class ParticleSolution:
    """Joint solution; ``Y`` is ``(N, P, M+1)``, ``Z`` (diagonal) ``(N, P, n_tri, d)``.

    ``offdiag`` (when requested) is ``(N, P, n_tri)`` with the energy
    ``sum_{j != i} |Z^{i,j}(t_r, t_k)|^2`` of each cell, estimated by the
    squared regression fits minus their (HC2 sandwich) noise variance.  ``design`` holds the
    cross-particle moment features ``(P, M+1, 2)`` of the final regression
    (``None`` for non-interacting drivers and for ``N = 1``).
    """

    grid: TimeGrid
    Y: np.ndarray
    Z: np.ndarray
    offdiag: np.ndarray | None
    seed: int
    streams: tuple
    free_terms: tuple
    diagnostics: dict = field(default_factory=dict)
    design: np.ndarray | None = None

    @property
    def N(self) -> int:
        return self.Y.shape[0]

    @property
    def paths(self) -> int:
        return self.Y.shape[1]

    def mu(self, k: int, p: int) -> EmpiricalMeasure:
        """Empirical measure of ``{Y^i(t_k)}`` in scenario ``p``."""
        return EmpiricalMeasure.uniform(self.Y[:, p, k])

    def nu(self, i: int, k: int, p: int) -> EmpiricalMeasure:
        """Empirical measure of the diagonal ``{Z^{j,j}(t_i, t_k)}`` in scenario ``p``."""
        c = self.grid.triangle.index(i, k)
        return EmpiricalMeasure.uniform(self.Z[:, p, c, :])

    def mu_summary(self):
        """Per-scenario mean and ``W_2(mu^N, delta_0)`` at each node, ``(P, M+1)`` each."""
        return np.mean(self.Y, axis=0), np.sqrt(np.mean(self.Y * self.Y, axis=0))


@dataclass(eq=False)
class CoupledCopies:
    """Mean-field copies driven by the particles' Brownian motions."""

    grid: TimeGrid
    Y: np.ndarray
    Z: np.ndarray
    seed: int
    streams: tuple
    free_terms: tuple
    diagnostics: dict = field(default_factory=dict)

    @property
    def N(self) -> int:
        return self.Y.shape[0]


def _prepare(N, problem: Problem, seed, streams, free_terms, paths):
    if not (isinstance(N, (int, np.integer)) and N >= 1):
        raise InvalidArgument(f"N must be a positive integer, got {N!r}")
    if problem.engine.backend != "regression":
        raise UnsupportedConfiguration("particle systems need the regression backend "
                                       "(the joint filtration rules out the lattice)")
    streams = tuple(range(N)) if streams is None else tuple(int(s) for s in streams)
    if len(streams) != N or len(set(streams)) != N:
        raise InvalidArgument("streams must be N distinct integers")
    if free_terms is None:
        free_terms = (problem.free_term,) * N
    free_terms = tuple(free_terms)
    if len(free_terms) != N:
        raise InvalidArgument("free_terms must have one entry per particle")
    if paths is None:
        if problem.ensemble is None:
            raise InvalidArgument("give the scenario count via paths= or the problem ensemble")
        paths = problem.ensemble.n_states
    order = np.argsort(np.array(streams), kind="stable")
    ens = [sample_paths(problem.grid, problem.d, paths, seed, stream=streams[j]) for j in order]
    drivers = Drivers.stack(ens)
    psi = np.stack([free_term_values(problem.grid, free_terms[j], drivers.values[e])
                    for e, j in enumerate(order)])
    return streams, free_terms, order, drivers, psi


def _unsort(order, *arrays):
    inv = np.empty_like(order)
    inv[order] = np.arange(len(order))
    return [None if a is None else a[inv] for a in arrays]


def solve_particles(N: int, problem: Problem, config: PicardConfig | None = None, seed: int = 0,
                    streams=None, free_terms=None, paths: int | None = None,
                    offdiag: bool = False) -> ParticleSolution:
    """Solve the N-particle system with cross-particle empirical laws.

    ``streams`` (default ``0..N-1``) selects each particle's Philox stream
    and ``free_terms`` optionally gives one free term per particle.  With
    ``offdiag=True`` the off-diagonal energies are computed on the final
    iterate.
    """
    gen = problem.generator
    if not gen.chaos_supported:
        raise ValidationError("quadratic drivers must not depend on the law of Z for particle "
                              "systems")
    if gen.is_quadratic and problem.free_term.bound is None:
        raise UnsupportedConfiguration("quadratic drivers need a bounded free term")
    config = config or PicardConfig()
    streams, free_terms, order, drivers, psi = _prepare(N, problem, seed, streams, free_terms, paths)
    tol = config.tolerance or DEFAULT_TOL["regression"]
    zr = _z_radius(problem, config, problem.bounds())
    # with one particle the moments are functions of its own previous iterate,
    # which feeds regression noise back into the design; they are only used for N >= 2
    shared = gen.interacts and N > 1
    res, diag = picard_iterate(problem.grid, gen, psi, drivers, problem.engine, ParticleLaw(),
                               config, problem.beta(config), tol, z_radius=zr,
                               extras=shared, store_family=False, offdiag=offdiag,
                               per_equation=not gen.interacts,
                               particle_labels=np.array(streams)[order])
    diag["regression_extras"] = ["cross-particle mean", "cross-particle second moment"] \
        if shared else []
    Y, Z, off = _unsort(order, res.Y, res.Z, res.offdiag if offdiag else None)
    design = moment_design(res.design_flow) if shared else None
    sol = ParticleSolution(problem.grid, Y, Z, off, int(seed), streams, free_terms, diag, design)
    if not diag["converged"]:
        from .errors import NonConvergenceError
        raise NonConvergenceError("particle Picard iteration did not converge",
                                  diag["norm_trail"], sol)
    return sol


def solve_coupled_copies(reference, N: int, problem: Problem, seed: int = 0, streams=None,
                         free_terms=None, config: PicardConfig | None = None,
                         paths: int | None = None, design=None) -> CoupledCopies:
    """Single-equation solves with laws frozen to ``reference`` on the particles' streams.

    ``reference`` is a :class:`SolutionField` or a :class:`LawFlow` on the
    same grid.  Each copy stops its Picard loop independently, so copy ``i``
    does not depend on how many other copies are solved alongside it.

    ``design`` (shape ``(P, M+1, m)``, e.g. ``ParticleSolution.design``) adds
    fixed regression features.  They are measurable with respect to the joint
    filtration and carry zero true coefficient for a copy, so the estimand is
    unchanged while particles and copies share one regression design.
    """
    laws = reference.laws if isinstance(reference, SolutionField) else reference
    if not isinstance(laws, LawFlow):
        raise InvalidArgument("reference must be a SolutionField or a LawFlow")
    if laws.grid != problem.grid:
        raise InvalidArgument("grid mismatch between the reference laws and the problem")
    config = config or PicardConfig()
    streams, free_terms, order, drivers, psi = _prepare(N, problem, seed, streams, free_terms, paths)
    tol = config.tolerance or DEFAULT_TOL["regression"]
    zr = _z_radius(problem, config, problem.bounds())
    if design is not None:
        design = np.asarray(design, dtype=float)
        if design.ndim != 3 or design.shape[:2] != (drivers.shape[1], problem.grid.steps + 1):
            raise InvalidArgument("design must have shape (P, M+1, m)")
    res, diag = picard_iterate(problem.grid, problem.generator, psi, drivers, problem.engine,
                               FrozenLaw(laws), config, problem.beta(config), tol, z_radius=zr,
                               extras=False if design is None else design,
                               store_family=False, per_equation=True,
                               particle_labels=np.array(streams)[order])
    Y, Z = _unsort(order, res.Y, res.Z)
    cp = CoupledCopies(problem.grid, Y, Z, int(seed), streams, free_terms, diag)
    if not diag["converged"]:
        from .errors import NonConvergenceError
        raise NonConvergenceError("coupled-copy Picard iteration did not converge",
                                  diag["norm_trail"], cp)
    return cp


def offdiag_energy(sol: ParticleSolution, i: int) -> float:
    """``E int_0^T int_t^T sum_{j != i} |Z^{i,j}(t, s)|^2 ds dt`` on the grid (left sums).

    Cell energies are noise-corrected squared regression fits, so single
    cells may be slightly negative; the aggregate is clipped at 0.
    """
    if sol.offdiag is None:
        raise UnsupportedConfiguration("off-diagonal fields were not requested at solve time")
    tri = sol.grid.triangle
    M = sol.grid.steps
    cells = tri.cols < M
    dt = sol.grid.dt
    return max(0.0, float(np.mean(np.sum(sol.offdiag[i][:, cells], axis=1)) * dt * dt))
