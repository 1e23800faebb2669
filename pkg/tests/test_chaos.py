"""Chaos harness: exponents, error functionals, studies and reports."""

import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import paths_problem
from mfbsvie.chaos import (StudyConfig, error_metric, fit_slope, replication_seed, run_study,
                           summarize, theoretical_exponent)
from mfbsvie.errors import InvalidArgument, ValidationError
from mfbsvie.generators import FreeTermSpec, GeneratorSpec
from mfbsvie.particles import CoupledCopies, solve_coupled_copies, solve_particles
from mfbsvie.solver import PicardConfig, picard_solve

SINE = FreeTermSpec("sine", {"offset": 0.5, "amp": 1.0, "freq": 1.0, "phase": 1.0})
PIC = PicardConfig(tolerance=1e-8)


@pytest.mark.parametrize("p,d,expected", [(1.5, 1, -0.25), (1.5, 8, -0.1875), (1.2, 4, -0.3)])
def test_theoretical_exponent_examples(p, d, expected):
    assert theoretical_exponent(p, d) == pytest.approx(expected, abs=1e-15)


@pytest.mark.parametrize("p", [1.0, 2.0, 0.5, 2.5])
def test_theoretical_exponent_domain(p):
    with pytest.raises(ValidationError):
        theoretical_exponent(p, 1)


@settings(max_examples=200, deadline=None)
@given(st.floats(1.0001, 1.9999), st.integers(1, 40))
def test_theoretical_exponent_non_increasing_in_d(p, d):
    # the rate can only get slower (exponent closer to 0) as d grows
    assert theoretical_exponent(p, d + 1) >= theoretical_exponent(p, d)
    assert -0.5 < theoretical_exponent(p, d) < 0


@settings(max_examples=200, deadline=None)
@given(st.floats(1.0001, 1.9999))
def test_theoretical_exponent_continuous_at_four(p):
    if p / 4 >= (2 - p) / 2:
        assert theoretical_exponent(p, 4) == theoretical_exponent(p, 3)


def test_study_config_validation():
    for bad in (dict(n_list=(16, 8)), dict(n_list=(8, 8)), dict(n_list=()),
                dict(replications=0), dict(p=1.0), dict(variant="bogus"),
                dict(variant="sup", p=1.5), dict(reference_backend="gpu"), dict(paths=1)):
        with pytest.raises(ValidationError):
            StudyConfig(**bad)
    cfg = StudyConfig(n_list=[4, 8])
    assert cfg.n_list == (4, 8)


def test_study_problem_checks(linear_mf):
    gen, free = linear_mf
    prob = paths_problem(gen, free, P=64)
    with pytest.raises(ValidationError, match="law of Z"):
        StudyConfig(p=2.5).check_problem(prob)
    with pytest.raises(ValidationError, match="law of Z"):
        StudyConfig(variant="integrated-no-z-law").check_problem(prob)
    with pytest.raises(ValidationError, match="bounded-law quadratic"):
        StudyConfig(variant="sup", p=2.0).check_problem(prob)
    with pytest.raises(ValidationError, match="dimension"):
        StudyConfig(d=2).check_problem(prob)
    quad = paths_problem(GeneratorSpec("quad-bounded", {"c_nu": 0.0}), SINE, P=64)
    with pytest.raises(ValidationError, match="linear class"):
        StudyConfig().check_problem(quad)
    StudyConfig(variant="sup", p=2.0).check_problem(quad)
    strict = paths_problem(GeneratorSpec("quad-bounded", {"c_nu": 1.0}), SINE, P=64)
    with pytest.raises(ValidationError, match="law of Z"):
        StudyConfig(variant="sup", p=2.0).check_problem(strict)
    no_z = paths_problem(GeneratorSpec("linear-lipschitz", {"m": 0.5}), SINE, P=64)
    StudyConfig(variant="integrated-no-z-law", p=2.5).check_problem(no_z)


@pytest.fixture
def coupled(linear_mf):
    gen, free = linear_mf
    prob = paths_problem(gen, free, P=256, seed=0)
    ref = picard_solve(prob, PIC)
    part = solve_particles(4, prob, PIC, seed=5, paths=256)
    cop = solve_coupled_copies(ref, 4, prob, seed=5, config=PIC, paths=256, design=part.design)
    return part, cop


def _as_copies(part):
    return CoupledCopies(part.grid, part.Y.copy(), part.Z.copy(), part.seed, part.streams,
                         part.free_terms)


def test_identical_fields_give_zero(coupled):
    part, _ = coupled
    for variant in ("integrated", "sup"):
        assert np.all(error_metric(part, _as_copies(part), 1.5 if variant != "sup" else 2.0,
                                   variant) == 0.0)


def test_metric_positive_under_interaction(coupled):
    part, cop = coupled
    errs = error_metric(part, cop, 1.5)
    assert errs.shape == (4,) and np.all(errs > 0)


def test_metric_hand_evaluation(coupled):
    part, cop = coupled
    grid = part.grid
    M, dt, p = grid.steps, grid.dt, 1.5
    tri = grid.triangle
    i = 2
    total = np.zeros(part.paths)
    for r in range(M):
        total += np.abs(part.Y[i, :, r] - cop.Y[i, :, r]) ** p * dt
        s = np.zeros(part.paths)
        for k in range(r, M):
            c = tri.index(r, k)
            s += np.sum((part.Z[i, :, c] - cop.Z[i, :, c]) ** 2, axis=-1) * dt
        total += s ** (p / 2) * dt
    assert error_metric(part, cop, p)[i] == pytest.approx(np.mean(total), rel=1e-12)


def test_stream_mismatch_rejected(coupled):
    part, cop = coupled
    bad = dataclasses.replace(cop, streams=(0, 1, 2, 7))
    with pytest.raises(ValidationError, match="streams"):
        error_metric(part, bad, 1.5)
    with pytest.raises(ValidationError):
        error_metric(part, dataclasses.replace(cop, seed=6), 1.5)
    with pytest.raises(InvalidArgument):
        error_metric(part, cop, 1.5, "pointwise")


def test_metric_permutation_equivariant(coupled):
    part, cop = coupled
    perm = np.array([2, 0, 3, 1])
    p2 = dataclasses.replace(part, Y=part.Y[perm], Z=part.Z[perm],
                             streams=tuple(part.streams[j] for j in perm))
    c2 = dataclasses.replace(cop, Y=cop.Y[perm], Z=cop.Z[perm],
                             streams=tuple(cop.streams[j] for j in perm))
    assert np.array_equal(error_metric(p2, c2, 1.5), error_metric(part, cop, 1.5)[perm])


def test_no_interaction_study_is_exactly_zero():
    gen = GeneratorSpec("linear-lipschitz", {"a": -0.5, "b": 0.2})
    prob = paths_problem(gen, SINE, P=128)
    rep = run_study(StudyConfig(n_list=(2, 4), replications=2, paths=128), prob, PIC)
    assert all(row[3] == 0.0 for row in rep.raw)
    assert rep.slope is None and rep.verdict() == "no log-log fit (zero mean error)"


def test_single_n_insufficient_points(linear_mf):
    gen, free = linear_mf
    prob = paths_problem(gen, free, P=64)
    rep = run_study(StudyConfig(n_list=(8,), replications=1, paths=64), prob, PIC)
    assert rep.slope is None and rep.half_width is None
    assert "insufficient points" in rep.flags
    assert rep.verdict() == "insufficient points"
    assert rep.per_n[0]["stderr"] is None


@pytest.fixture(scope="module")
def small_study():
    gen = GeneratorSpec("linear-lipschitz", {"a": -0.5, "m": 0.5, "e1": 0.25})
    prob = paths_problem(gen, SINE, P=256)
    cfg = StudyConfig(n_list=(2, 4, 8), replications=3, paths=256, base_seed=42,
                      reference_paths=512)
    return cfg, prob


def test_report_deterministic_and_recomputable(small_study):
    cfg, prob = small_study
    a = run_study(cfg, prob, PIC)
    b = run_study(cfg, prob, PIC)
    assert a.as_dict() == b.as_dict() and a.raw == b.raw
    per_n = summarize(a.raw, cfg.n_list, cfg.replications)
    assert per_n == a.per_n
    slope, intercept, se, hw = fit_slope(per_n)
    assert (slope, intercept, se, hw) == (a.slope, a.intercept, a.slope_stderr, a.half_width)
    assert a.theory == -0.25 and a.lambda_hat is None
    assert a.verdict().startswith("slope=") and "vs theory=-0.25" in a.verdict()
    assert len(a.raw) == cfg.replications * sum(cfg.n_list)
    assert a.provenance["replication_seeds"] == [replication_seed(42, r) for r in range(3)]
    assert a.provenance["reference"]["backend"] == "lattice"


def test_report_independent_of_worker_count(small_study):
    cfg, prob = small_study
    assert run_study(cfg, prob, PIC, workers=2).as_dict() == run_study(cfg, prob, PIC).as_dict()


def test_copies_computed_once_without_common_design(small_study):
    cfg, prob = small_study
    rep = run_study(dataclasses.replace(cfg, common_design=False), prob, PIC)
    assert not any("shared" in f for f in rep.flags)
    assert all(e >= 0 for *_, e in rep.raw)


def test_sup_variant_reports_lambda():
    gen = GeneratorSpec("quad-bounded", {"w": 0.5, "c_y": 0.5, "c_z": 0.5, "c_mu": 0.5,
                                         "c_nu": 0.0})
    free = FreeTermSpec("sine", {"amp": 1.0, "freq": 1.0, "phase": 1.0})
    prob = paths_problem(gen, free, P=256)
    rep = run_study(StudyConfig(n_list=(2, 8), replications=2, p=2.0, variant="sup",
                                paths=256), prob, PIC)
    assert rep.theory is None
    if rep.slope < 0:
        assert rep.lambda_hat == pytest.approx(-1.0 / (2.0 * rep.slope), rel=1e-15)
    assert "lambda_hat" in rep.verdict()


def test_linear_metric_decreases_from_8_to_64():
    gen = GeneratorSpec("linear-lipschitz", {"a": -0.5, "m": 0.5, "e1": 0.25})
    prob = paths_problem(gen, SINE, M=4, P=256)
    rep = run_study(StudyConfig(n_list=(8, 64), replications=20, paths=256, base_seed=7),
                    prob, PIC)
    m8, m64 = (row["mean"] for row in rep.per_n)
    assert m64 < m8
