"""Propagation-of-chaos studies: error functionals, N-sweeps and rate fits.

For each particle count ``N`` and replication ``r`` the harness solves the
particle system and the coupled mean-field copies on the same Brownian
streams and evaluates, per particle ``i``,

``integrated`` / ``integrated-no-z-law``
    ``E[ sum_k |dY(t_k)|^p dt + sum_i ( sum_{k >= i} |dZ(t_i, t_k)|^2 dt )^{p/2} dt ]``
``sup``
    ``max_i E[ |dY(t_i)|^p + ( sum_{k >= i} |dZ(t_i, t_k)|^2 dt )^{p/2} ]``

with left-endpoint sums over ``k < M``.  ``dZ`` is the diagonal difference
``Z^{N,i,i} - Z~^i``; the off-diagonal energy ``sum_{j != i} |Z^{N,i,j}|^2``
is added when it was requested.  The slope of ``log mean_r E_N`` against
``log N`` is fitted by ordinary least squares.
"""

from __future__ import annotations

import hashlib
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import stats

from .condexp import LATTICE, CondExpEngine
from .errors import InvalidArgument, MfbsvieError, ValidationError
from .generators import LINEAR, QUAD_BOUNDED
from .lattice import DEFAULT_LATTICE_CAP, build_lattice, sample_paths
from .particles import CoupledCopies, ParticleSolution, solve_coupled_copies, solve_particles
from .solver import PicardConfig, Problem, picard_solve

VARIANTS = ("integrated", "integrated-no-z-law", "sup")
REFERENCE_STREAM = (1 << 64) - 1


def theoretical_exponent(p: float, d: int) -> float:
    """Exponent of ``Q(N)``: ``-(2-p)/2`` for ``d <= 3``, ``-min(p/d, (2-p)/2)`` for ``d >= 4``."""
    if not 1 < p < 2:
        raise ValidationError(f"p must lie in (1, 2) for the linear rate, got {p}")
    if not (isinstance(d, (int, np.integer)) and d >= 1):
        raise ValidationError(f"d must be a positive integer, got {d}")
    if d <= 3:
        return -(2 - p) / 2
    return -min(p / d, (2 - p) / 2)


@dataclass(frozen=True)
class StudyConfig:
    """Parameters of an N-sweep (see the module docstring for the variants)."""

    n_list: tuple = (8, 16, 32, 64, 128, 256)
    replications: int = 20
    p: float = 1.5
    d: int = 1
    base_seed: int = 0
    reference_paths: int = 16384
    paths: int = 1024
    variant: str = "integrated"
    offdiag: bool = False
    reference_backend: str = "auto"
    lattice_cap: int = DEFAULT_LATTICE_CAP
    common_design: bool = True

    def __post_init__(self):
        n = tuple(int(v) for v in self.n_list)
        object.__setattr__(self, "n_list", n)
        if not n or any(v < 1 for v in n) or any(b <= a for a, b in zip(n, n[1:])):
            raise ValidationError("n_list must be a non-empty strictly increasing list of "
                                  "positive integers")
        if self.replications < 1:
            raise ValidationError("replications must be >= 1")
        if self.variant not in VARIANTS:
            raise ValidationError(f"variant must be one of {VARIANTS}")
        if not self.p > 1:
            raise ValidationError("p must exceed 1")
        if self.variant == "sup" and self.p < 2:
            raise ValidationError("the sup-in-time quadratic variant needs p >= 2")
        if self.reference_backend not in ("auto", "lattice", "regression"):
            raise ValidationError("reference_backend must be auto, lattice or regression")
        if self.paths < 2 or self.reference_paths < 2:
            raise ValidationError("scenario counts must be >= 2")

    def check_problem(self, problem: Problem) -> None:
        gen = problem.generator
        if not gen.chaos_supported:
            raise ValidationError("quadratic drivers must not depend on the law of Z for "
                                  "particle and chaos runs")
        if self.d != problem.d:
            raise ValidationError(f"study dimension d={self.d} differs from the problem's "
                                  f"d={problem.d}")
        if self.variant in ("integrated", "integrated-no-z-law") and gen.growth != LINEAR:
            raise ValidationError(f"variant {self.variant} is for the linear class")
        if self.variant == "sup" and gen.growth != QUAD_BOUNDED:
            raise ValidationError("variant sup is for the bounded-law quadratic class")
        if self.variant == "integrated" and gen.uses_law_z and not self.p < 2:
            raise ValidationError("drivers depending on the law of Z need 1 < p < 2")
        if self.variant == "integrated-no-z-law" and gen.uses_law_z:
            raise ValidationError("variant integrated-no-z-law needs g independent of the law of Z")


def _check_coupling(particles: ParticleSolution, copies: CoupledCopies):
    if particles.grid != copies.grid:
        raise ValidationError("particles and copies live on different grids")
    if particles.seed != copies.seed or tuple(particles.streams) != tuple(copies.streams):
        raise ValidationError("particles and copies must share seed and driver streams")


def error_metric(particles: ParticleSolution, copies: CoupledCopies, p: float,
                 variant: str = "integrated") -> np.ndarray:
    """Per-particle error functional (length ``N``), averaged over scenarios."""
    _check_coupling(particles, copies)
    if variant not in VARIANTS:
        raise InvalidArgument(f"variant must be one of {VARIANTS}")
    grid = particles.grid
    M, dt = grid.steps, grid.dt
    tri = grid.triangle
    dY = np.abs(particles.Y[:, :, :M] - copies.Y[:, :, :M]) ** p            # (N, P, M)
    energy = np.sum((particles.Z - copies.Z) ** 2, axis=-1)                 # (N, P, n_tri)
    if particles.offdiag is not None:
        energy = energy + particles.offdiag
    N, P = dY.shape[:2]
    S = np.zeros((N, P, M))
    cells = tri.cols < M
    np.add.at(S, (slice(None), slice(None), tri.rows[cells]), energy[:, :, cells] * dt)
    zterm = np.maximum(S, 0.0) ** (p / 2)
    if variant == "sup":
        return np.max(np.mean(dY + zterm, axis=1), axis=1)
    return np.mean(np.sum(dY + zterm, axis=2), axis=1) * dt


@dataclass
class ConvergenceReport:
    """Raw errors, per-N summaries, slope fit and provenance of a study."""

    n_list: list
    replications: int
    p: float
    d: int
    variant: str
    raw: list                      # (N, replication, particle, error)
    per_n: list                    # {"N", "mean", "stderr"}
    slope: float | None
    intercept: float | None
    slope_stderr: float | None
    half_width: float | None
    theory: float | None
    lambda_hat: float | None
    flags: list = field(default_factory=list)
    provenance: dict = field(default_factory=dict)

    def verdict(self) -> str:
        if self.slope is None:
            return "insufficient points" if len(self.per_n) < 2 else \
                "no log-log fit (zero mean error)"
        hw = "nan" if self.half_width is None else f"{self.half_width:.4g}"
        th = "n/a" if self.theory is None else f"{self.theory:.4g}"
        line = f"slope={self.slope:.4g} ± {hw} vs theory={th}"
        if self.lambda_hat is not None:
            line += f" (lambda_hat={self.lambda_hat:.4g})"
        return line

    def as_dict(self) -> dict:
        d = asdict(self)
        d.pop("raw")
        d["verdict"] = self.verdict()
        return d


def summarize(raw, n_list, replications: int):
    """Per-N means and standard errors from raw ``(N, r, particle, error)`` rows."""
    per_n = []
    for N in n_list:
        reps = np.zeros(replications)
        for n_, r, _, e in raw:
            if n_ == N:
                reps[r] += e / N
        mean = float(np.mean(reps))
        se = float(np.std(reps, ddof=1) / math.sqrt(replications)) if replications > 1 else None
        per_n.append({"N": int(N), "mean": mean, "stderr": se})
    return per_n


def fit_slope(per_n):
    """OLS fit of ``log mean`` on ``log N``; half-width is the 95% t-interval.

    Returns all ``None`` with fewer than two points or a non-positive mean.
    """
    if len(per_n) < 2 or any(not row["mean"] > 0 for row in per_n):
        return None, None, None, None
    x = np.log([row["N"] for row in per_n])
    y = np.log([row["mean"] for row in per_n])
    fit = stats.linregress(x, y)
    n = len(per_n)
    hw = float(stats.t.ppf(0.975, n - 2) * fit.stderr) if n > 2 else None
    return float(fit.slope), float(fit.intercept), float(fit.stderr) if n > 2 else None, hw


def replication_seed(base_seed: int, r: int) -> int:
    """Seed of replication ``r``; independent of N so all N share the same streams."""
    return int(np.random.SeedSequence([int(base_seed) % (1 << 64), r]).generate_state(1, np.uint64)[0])


def reference_solve(config: StudyConfig, problem: Problem, picard: PicardConfig | None = None):
    """High-accuracy mean-field solve whose law flows the copies freeze."""
    backend = config.reference_backend
    M = problem.grid.steps
    if backend == "auto":
        backend = "lattice" if (problem.d == 1 and M <= config.lattice_cap) else "regression"
    if backend == "lattice":
        ref_problem = Problem(problem.grid, problem.generator, problem.free_term, 1,
                              CondExpEngine(LATTICE), build_lattice(problem.grid, config.lattice_cap))
        desc = {"backend": "lattice", "nodes": M + 1}
        ref_cfg = PicardConfig(max_iter=(picard or PicardConfig()).max_iter)
    else:
        ens = sample_paths(problem.grid, problem.d, config.reference_paths, config.base_seed,
                           stream=REFERENCE_STREAM)
        ref_problem = problem.with_ensemble(ens)
        desc = {"backend": "regression", "paths": config.reference_paths,
                "seed": int(config.base_seed), "stream": REFERENCE_STREAM}
        ref_cfg = picard
    sol = picard_solve(ref_problem, ref_cfg)
    desc["iterations"] = sol.diagnostics["iterations"]
    return sol, desc


def _annotate(exc: MfbsvieError, where: str) -> MfbsvieError:
    exc.args = (f"[{where}] {exc.args[0] if exc.args else ''}",) + exc.args[1:]
    return exc


def _replication(args):
    config, problem, picard, laws, r = args
    seed = replication_seed(config.base_seed, r)
    shared = config.common_design and problem.generator.interacts
    copies = None
    if not shared:
        # copies are per-equation solves: one batch at the largest N serves every N
        try:
            copies = solve_coupled_copies(laws, config.n_list[-1], problem, seed=seed,
                                          config=picard, paths=config.paths)
        except MfbsvieError as exc:
            raise _annotate(exc, f"copies, replication {r}")
    rows = []
    for N in config.n_list:
        try:
            part = solve_particles(N, problem, picard, seed=seed, paths=config.paths,
                                   offdiag=config.offdiag)
            if shared:
                sub = solve_coupled_copies(laws, N, problem, seed=seed, config=picard,
                                           paths=config.paths, design=part.design)
            else:
                sub = CoupledCopies(copies.grid, copies.Y[:N], copies.Z[:N], copies.seed,
                                    copies.streams[:N], copies.free_terms[:N])
        except MfbsvieError as exc:
            raise _annotate(exc, f"N={N}, replication {r}")
        errs = error_metric(part, sub, config.p, config.variant)
        rows.extend((N, r, i, float(e)) for i, e in enumerate(errs))
    return seed, rows


def run_study(config: StudyConfig, problem: Problem, picard: PicardConfig | None = None,
              workers: int = 1, config_hash: str | None = None) -> ConvergenceReport:
    """Reference solve, N-sweep over replications, slope fit.

    Replications run in a process pool when ``workers > 1``; results are
    reduced in ``(N, replication, particle)`` order, so the report does not
    depend on scheduling.
    """
    config.check_problem(problem)
    ref, ref_desc = reference_solve(config, problem, picard)
    jobs = [(config, problem, picard, ref.laws, r) for r in range(config.replications)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_replication, jobs))
    else:
        results = [_replication(j) for j in jobs]
    seeds = [s for s, _ in results]
    raw = sorted(row for _, rows in results for row in rows)
    per_n = summarize(raw, config.n_list, config.replications)
    slope, intercept, se, hw = fit_slope(per_n)
    flags = []
    if len(per_n) < 2:
        flags.append("insufficient points")
    elif slope is None:
        flags.append("zero mean error: no log-log fit")
    if config.common_design and problem.generator.interacts:
        flags.append("copies regress on the particle design (shared moment features)")
    if not config.offdiag:
        flags.append("diagonal-only Z term (off-diagonal energies not computed)")
    theory = None
    if config.variant in ("integrated", "integrated-no-z-law") and 1 < config.p < 2:
        theory = theoretical_exponent(config.p, config.d)
    lam = None
    if config.variant == "sup" and slope is not None:
        lam = -1.0 / (2.0 * slope) if slope < 0 else math.inf
    provenance = {
        "base_seed": int(config.base_seed),
        "replication_seeds": seeds,
        "stream_layout": "particle i uses Philox stream (replication seed, i)",
        "reference": ref_desc,
        "reference_note": "copies freeze the law flows of a high-accuracy mean-field solve "
                          "in place of the exact laws",
        "config_hash": config_hash,
        "raw_digest": hashlib.sha256(json.dumps(raw).encode()).hexdigest()[:16],
    }
    return ConvergenceReport(list(config.n_list), config.replications, config.p, config.d,
                             config.variant, raw, per_n, slope, intercept, se, hw, theory, lam,
                             flags, provenance)
