"""Run configuration: one TOML document -> validated objects and a stable hash.

Layout (every table except ``grid``, ``generator`` and ``free_term`` is
optional)::

    seed = 0
    output = "out"

    [grid]       T, M, d
    [backend]    kind = "lattice" | "regression", paths, degree, ridge, clip, lattice_cap
    [generator]  family = "...", coefficients..., optional [generator.constants]
    [free_term]  family = "...", parameters...
    [picard]     tolerance, max_iter, damping, auto_damping, z_radius, beta
    [particles]  N, offdiag
    [study]      n_list, replications, p, variant, reference_paths,
                 reference_backend, offdiag, common_design

Unknown keys are rejected.  All randomness derives from ``seed``: the
scenario set of a single solve uses Philox stream 0, particle ``i`` uses
stream ``i`` and chaos replication ``r`` uses the seed
:func:`~mfbsvie.chaos.replication_seed` ``(seed, r)``.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .chaos import StudyConfig
from .condexp import LATTICE, REGRESSION, CondExpEngine
from .errors import ValidationError
from .generators import FreeTermSpec, GeneratorSpec
from .lattice import DEFAULT_LATTICE_CAP, TimeGrid, build_lattice, make_grid, sample_paths
from .solver import PicardConfig, Problem

SEED_LIMIT = 1 << 64

_TOP = {"seed", "output", "grid", "backend", "generator", "free_term", "picard", "particles", "study"}
_TABLES = {
    "grid": {"T", "M", "d"},
    "backend": {"kind", "paths", "degree", "ridge", "clip", "lattice_cap"},
    "picard": {"tolerance", "max_iter", "damping", "auto_damping", "z_radius", "beta"},
    "particles": {"N", "offdiag"},
    "study": {"n_list", "replications", "p", "variant", "reference_paths", "reference_backend",
              "offdiag", "common_design"},
}
_BACKENDS = {"lattice": LATTICE, "lattice-exact": LATTICE, "regression": REGRESSION}


def _check_keys(where: str, table, allowed) -> dict:
    if not isinstance(table, dict):
        raise ValidationError(f"[{where}] must be a table")
    unknown = sorted(set(table) - set(allowed))
    if unknown:
        raise ValidationError(f"unknown keys in [{where}]: {unknown}")
    return table


def config_hash(document: dict) -> str:
    """64-bit digest (16 hex digits) of the canonical JSON form of ``document``."""
    canon = json.dumps(document, sort_keys=True, separators=(",", ":"), ensure_ascii=True)
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:16]


@dataclass(eq=False)
class RunConfig:
    """Validated run description; ``document`` is the effective TOML content."""

    grid: TimeGrid
    d: int
    backend: str
    paths: int
    engine: CondExpEngine
    lattice_cap: int
    generator: GeneratorSpec
    free_term: FreeTermSpec
    picard: PicardConfig
    seed: int
    output: str
    particles: dict | None
    study: StudyConfig | None
    document: dict = field(default_factory=dict)

    @property
    def hash(self) -> str:
        return config_hash(self.document)

    @classmethod
    def from_toml(cls, text: str, seed_override: int | None = None) -> "RunConfig":
        try:
            doc = tomllib.loads(text)
        except tomllib.TOMLDecodeError as exc:
            raise ValidationError(f"TOML parse error: {exc}") from exc
        return cls.from_dict(doc, seed_override)

    @classmethod
    def from_file(cls, path, seed_override: int | None = None) -> "RunConfig":
        try:
            with open(path, encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            raise ValidationError(f"cannot read config {path}: {exc}") from exc
        return cls.from_toml(text, seed_override)

    @classmethod
    def from_dict(cls, doc: dict, seed_override: int | None = None) -> "RunConfig":
        try:
            doc = json.loads(json.dumps(doc))  # deep copy, JSON-compatible
        except (TypeError, ValueError) as exc:
            raise ValidationError(f"config values must be numbers, strings, booleans, "
                                  f"arrays or tables: {exc}") from exc
        _check_keys("top level", doc, _TOP)
        for name in ("grid", "generator", "free_term"):
            if name not in doc:
                raise ValidationError(f"missing required table [{name}]")
        if seed_override is not None:
            doc["seed"] = int(seed_override)
        seed = doc.setdefault("seed", 0)
        if not (isinstance(seed, int) and 0 <= seed < SEED_LIMIT):
            raise ValidationError(f"seed must be an integer in [0, 2^64), got {seed!r}")
        output = doc.setdefault("output", "out")

        g = _check_keys("grid", doc["grid"], _TABLES["grid"])
        if "T" not in g or "M" not in g:
            raise ValidationError("[grid] needs T and M")
        try:
            grid = make_grid(float(g["T"]), int(g["M"]))
        except (TypeError, ValueError) as exc:
            raise ValidationError(f"[grid] {exc}") from exc
        d = int(g.get("d", 1))
        if d < 1:
            raise ValidationError("[grid] d must be >= 1")

        b = _check_keys("backend", doc.setdefault("backend", {}), _TABLES["backend"])
        kind = b.get("kind", "lattice" if d == 1 else "regression")
        if kind not in _BACKENDS:
            raise ValidationError(f"[backend] kind must be lattice or regression, got {kind!r}")
        paths = int(b.get("paths", 1024))
        if paths < 2:
            raise ValidationError("[backend] paths must be >= 2")
        try:
            engine = CondExpEngine(_BACKENDS[kind], int(b.get("degree", 3)),
                                   float(b.get("ridge", 1e-8)), clip=float(b.get("clip", 4.0)))
        except ValueError as exc:
            raise ValidationError(f"[backend] {exc}") from exc
        cap = int(b.get("lattice_cap", DEFAULT_LATTICE_CAP))

        for name in ("generator", "free_term"):
            if not isinstance(doc[name], dict):
                raise ValidationError(f"[{name}] must be a table")
        gen = GeneratorSpec.from_config(doc["generator"])
        free = FreeTermSpec.from_config(doc["free_term"])

        pc = _check_keys("picard", doc.get("picard", {}), _TABLES["picard"])
        try:
            picard = PicardConfig(**pc)
        except (TypeError, ValueError) as exc:
            raise ValidationError(f"[picard] {exc}") from exc

        particles = None
        if "particles" in doc:
            particles = dict(_check_keys("particles", doc["particles"], _TABLES["particles"]))
            n = particles.get("N")
            if not (isinstance(n, int) and n >= 1):
                raise ValidationError("[particles] N must be a positive integer")
            particles.setdefault("offdiag", False)

        study = None
        if "study" in doc:
            s = dict(_check_keys("study", doc["study"], _TABLES["study"]))
            try:
                study = StudyConfig(n_list=tuple(s.pop("n_list", (8, 16, 32, 64, 128, 256))),
                                    d=d, base_seed=seed, paths=paths,
                                    lattice_cap=cap, **s)
            except TypeError as exc:
                raise ValidationError(f"[study] {exc}") from exc
        return cls(grid, d, engine.backend, paths, engine, cap, gen, free, picard, seed,
                   str(output), particles, study, doc)

    def problem(self, with_ensemble: bool = True) -> Problem:
        """Problem with the scenario set of a single solve (Philox stream 0)."""
        ens = None
        if with_ensemble:
            if self.backend == LATTICE:
                ens = build_lattice(self.grid, self.lattice_cap)
            else:
                ens = sample_paths(self.grid, self.d, self.paths, self.seed, stream=0)
        return Problem(self.grid, self.generator, self.free_term, self.d, self.engine, ens)
