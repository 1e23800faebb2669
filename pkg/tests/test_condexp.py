import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mfbsvie.condexp import CondExpEngine, RegressionStep, condexp, extract_z, hermite_features
from mfbsvie.errors import InvalidArgument, NumericalFailure, UnsupportedConfiguration
from mfbsvie.lattice import build_lattice, make_grid, sample_paths

LAT = CondExpEngine("lattice-exact")
REG = CondExpEngine()


def test_hermite_features():
    x = np.array([[0.5], [2.0]])
    f = hermite_features(x, 3)
    assert f.shape == (2, 4)
    assert np.allclose(f[:, 2], x[:, 0] ** 2 - 1) and np.allclose(f[:, 3], x[:, 0] ** 3 - 3 * x[:, 0])
    assert hermite_features(np.zeros((5, 2)), 3).shape == (5, 10)


def test_basis_clips_far_tail_states():
    state = np.array([[1.0], [6.0], [-9.0]])
    f = REG.features(state, 0.25)           # standardised: 2, 12, -18
    assert np.array_equal(f[1], hermite_features(np.array([4.0]), 3))
    assert np.array_equal(f[2], hermite_features(np.array([-4.0]), 3))
    raw = CondExpEngine(clip=math.inf).features(state, 0.25)
    assert np.array_equal(raw, hermite_features(state / 0.5, 3))
    assert np.array_equal(REG.features(state, 0.0), np.ones((3, 1)))
    with pytest.raises(InvalidArgument):
        CondExpEngine(clip=0.0)


def test_constants_both_backends():
    g = make_grid(1.0, 6)
    lat, ens = build_lattice(g), sample_paths(g, 1, 300, seed=1)
    out = condexp(LAT, lat, 3, np.full(7, 2.5))
    assert np.all(out[:4] == 2.5)
    assert np.allclose(condexp(REG, ens, 3, np.full(300, 2.5)), 2.5, atol=1e-12)
    assert np.all(extract_z(LAT, lat, 3, np.full(7, 2.5))[:4] == 0.0)
    assert np.allclose(extract_z(REG, ens, 3, np.full(300, 2.5)), 0.0, atol=1e-12)


def test_lattice_martingale_and_z():
    g = make_grid(1.0, 8)
    lat = build_lattice(g)
    for k in range(8):
        nxt = lat.values[:, k + 1, 0]
        assert np.max(np.abs(condexp(LAT, lat, k, nxt)[:k + 1] - lat.values[:k + 1, k, 0])) <= 1e-15
        assert np.max(np.abs(extract_z(LAT, lat, k, nxt)[:k + 1, 0] - 1.0)) <= 1e-12


def test_lattice_tower_and_linearity():
    g = make_grid(1.0, 8)
    lat = build_lattice(g)
    rng = np.random.default_rng(0)
    x = rng.normal(size=9)
    y = rng.normal(size=9)
    two = condexp(LAT, lat, 5, condexp(LAT, lat, 6, x))
    # two-step average equals the binomial-weighted average of the step-7 values
    direct = np.array([0.25 * x[j] + 0.5 * x[j + 1] + 0.25 * x[j + 2] for j in range(6)])
    assert np.max(np.abs(two[:6] - direct)) <= 1e-15
    lin = condexp(LAT, lat, 4, 2 * x - 3 * y)
    assert np.allclose(lin, 2 * condexp(LAT, lat, 4, x) - 3 * condexp(LAT, lat, 4, y), atol=1e-10)


def test_regression_conditional_second_moment_within_standard_errors():
    """E[W_T^2 | F_k] = W_k^2 + (T - t_k), checked per scenario with the fit's standard error."""
    g = make_grid(1.0, 4)
    ens = sample_paths(g, 1, 4096, seed=7)
    wt2 = ens.terminal()[:, 0] ** 2
    for k in (1, 2, 3):
        est = condexp(REG, ens, k, wt2)
        truth = ens.values[:, k, 0] ** 2 + (1.0 - g.nodes[k])
        # heteroscedasticity-consistent (sandwich) standard error of each fitted value
        X = REG.features(ens.values[:, k, :], g.nodes[k])
        Gi = np.linalg.inv(X.T @ X)
        meat = (X * ((wt2 - est) ** 2)[:, None]).T @ X
        se = np.sqrt(np.einsum("na,ab,nb->n", X, Gi @ meat @ Gi, X))
        assert np.all(np.abs(est - truth) <= 3 * se), k


def test_regression_z_of_terminal_brownian():
    g = make_grid(1.0, 4)
    ens = sample_paths(g, 1, 4096, seed=3)
    for k in range(4):
        z = extract_z(REG, ens, k, ens.values[:, k + 1, 0])
        assert abs(np.mean(z) - 1.0) < 0.05


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 31), st.floats(-3, 3), st.floats(-3, 3))
def test_regression_linear_and_nonexpansive(seed, a, b):
    g = make_grid(1.0, 4)
    ens = sample_paths(g, 1, 256, seed=seed)
    rng = np.random.default_rng(seed)
    x, y = rng.normal(size=256), rng.normal(size=256)
    cx, cy = condexp(REG, ens, 2, x), condexp(REG, ens, 2, y)
    assert np.allclose(condexp(REG, ens, 2, a * x + b * y), a * cx + b * cy, atol=1e-10)
    assert np.mean(cx ** 2) <= np.mean(x ** 2) + 1e-8


def test_degenerate_design_at_time_zero_and_rank_failure():
    g = make_grid(1.0, 4)
    ens = sample_paths(g, 1, 64, seed=0)
    out = condexp(REG, ens, 0, ens.terminal()[:, 0])
    assert np.ptp(out) == 0.0
    state = np.zeros((1, 64, 1))
    step_args = dict(k=1, t_k=0.25, dt=0.25, state=state, increments=state,
                     weights=np.full(64, 1 / 64), extras=None)
    with pytest.raises(NumericalFailure) as info:
        RegressionStep(CondExpEngine(ridge=0.0), **step_args)
    assert info.value.diagnostics["step"] == 1
    RegressionStep(REG, **step_args)  # the default ridge keeps the design usable


def test_backend_mismatch_and_bad_step():
    g = make_grid(1.0, 4)
    with pytest.raises(UnsupportedConfiguration):
        condexp(REG, build_lattice(g), 1, np.zeros(5))
    with pytest.raises(UnsupportedConfiguration):
        condexp(LAT, sample_paths(g, 1, 8, 0), 1, np.zeros(8))
    with pytest.raises(InvalidArgument):
        condexp(LAT, build_lattice(g), 4, np.zeros(5))
    with pytest.raises(InvalidArgument):
        CondExpEngine("kernel")
