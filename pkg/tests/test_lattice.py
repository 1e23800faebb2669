import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mfbsvie.errors import InvalidArgument, ResourceLimitError
from mfbsvie.lattice import TimeGrid, TriangularIndex, build_lattice, make_grid, sample_paths


def test_grid_nodes_and_midpoints():
    g = make_grid(1.0, 4)
    assert g.dt == 0.25
    assert g.nodes.tolist() == [0.0, 0.25, 0.5, 0.75, 1.0]
    assert np.allclose(g.midpoints, [0.125, 0.375, 0.625, 0.875])
    assert make_grid(0.3, 7).nodes[-1] == 0.3


@pytest.mark.parametrize("T,M", [(0.0, 4), (-1.0, 4), (math.inf, 4), (1.0, 0), (1.0, 2.5)])
def test_grid_rejects_bad_input(T, M):
    with pytest.raises(InvalidArgument):
        TimeGrid(T, M)


def test_triangle_size_and_order():
    tri = TriangularIndex(3)
    assert len(tri) == 10
    assert list(tri)[:5] == [(0, 0), (0, 1), (0, 2), (0, 3), (1, 1)]
    assert tri.index(1, 1) == 4
    assert tri.column(2).tolist() == [tri.index(0, 2), tri.index(1, 2), tri.index(2, 2)]
    with pytest.raises(InvalidArgument):
        tri.index(2, 1)


@given(st.integers(min_value=0, max_value=40))
def test_triangle_index_is_bijection(M):
    tri = TriangularIndex(M)
    flat = tri.index(tri.rows, tri.cols)
    assert flat.tolist() == list(range(len(tri)))


def test_lattice_weights_and_moments():
    g = make_grid(1.0, 6)
    lat = build_lattice(g)
    for k in range(7):
        assert math.fsum(lat.weights[:, k]) == pytest.approx(1.0, abs=1e-15)
        w = lat.values[:, k, 0]
        assert abs(lat.expectation(k, w)) < 1e-15
        assert lat.expectation(k, w ** 2) == pytest.approx(g.nodes[k], abs=1e-14)
    assert lat.valid(2).tolist() == [True, True, True, False, False, False, False]


def test_lattice_cap():
    with pytest.raises(ResourceLimitError):
        build_lattice(make_grid(1.0, 65))
    assert build_lattice(make_grid(1.0, 65), cap=128).n_states == 66


def test_paths_match_independent_inverse_cdf_oracle():
    """Normals equal Phi^{-1}(u) evaluated in extended precision with mpmath."""
    g = make_grid(1.0, 4)
    ens = sample_paths(g, 2, 3, seed=123, stream=5)
    bg = np.random.Philox(key=np.array([123, 5], dtype=np.uint64))
    raw = bg.random_raw(3 * 4 * 2)
    mpmath.mp.dps = 40
    for idx, r in enumerate(raw.tolist()):
        u = mpmath.mpf((r >> 11)) * mpmath.mpf(2) ** -53 + mpmath.mpf(2) ** -54
        z = float(-mpmath.sqrt(2) * mpmath.erfinv(1 - 2 * u))
        p, rem = divmod(idx, 8)
        k, j = divmod(rem, 2)
        assert ens.increments[p, k, j] == pytest.approx(z * 0.5, rel=1e-13, abs=1e-15)


def test_paths_prefix_stable_and_streams_independent():
    g = make_grid(1.0, 5)
    a = sample_paths(g, 1, 10, seed=9)
    b = sample_paths(g, 1, 25, seed=9)
    assert np.array_equal(a.values, b.values[:10])
    c = sample_paths(g, 1, 10, seed=9, stream=1)
    assert not np.array_equal(a.values, c.values)
    assert np.array_equal(a.values[:, 1:], np.cumsum(a.increments, axis=1))
    with pytest.raises(ValueError):
        a.values[0, 0, 0] = 1.0


@settings(max_examples=20, deadline=None)
@given(st.integers(min_value=0, max_value=2 ** 64 - 1), st.integers(min_value=0, max_value=1000))
def test_paths_deterministic(seed, stream):
    g = make_grid(1.0, 3)
    assert np.array_equal(sample_paths(g, 1, 4, seed, stream).values,
                          sample_paths(g, 1, 4, seed, stream).values)


def test_paths_moments():
    g = make_grid(1.0, 4)
    ens = sample_paths(g, 1, 20000, seed=1)
    wt = ens.terminal()[:, 0]
    assert abs(np.mean(wt)) < 4 / math.sqrt(20000)
    assert abs(np.var(wt) - 1.0) < 4 * math.sqrt(2 / 20000)


def test_permuted_keeps_data():
    g = make_grid(1.0, 3)
    ens = sample_paths(g, 1, 6, seed=2)
    order = np.array([5, 4, 3, 2, 1, 0])
    q = ens.permuted(order)
    assert np.array_equal(q.values, ens.values[order])
    assert q.layout["permuted"]
    with pytest.raises(InvalidArgument):
        build_lattice(g).permuted(order)
