"""Time grids, triangular index bookkeeping and Brownian noise backends.

Two backends drive every backward solve:

* ``paths``   -- ``P`` sampled Brownian paths in ``R^d`` generated from a
  counter-based Philox stream, so scenario ``p`` depends only on
  ``(seed, stream, p)``;
* ``lattice`` -- a recombining binomial tree (``d = 1``) that supports exact
  one-step conditional expectations.  Node arrays are padded to ``M + 1``
  entries per step; padded nodes carry zero weight.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.special import ndtri

from .errors import InvalidArgument, ResourceLimitError

DEFAULT_LATTICE_CAP = 64
_U64 = 1 << 64


@dataclass(frozen=True)
class TimeGrid:
    """Uniform partition ``0 = t_0 < ... < t_M = T``."""

    horizon: float
    steps: int

    def __post_init__(self):
        if not (isinstance(self.steps, (int, np.integer)) and self.steps >= 1):
            raise InvalidArgument(f"steps must be a positive integer, got {self.steps!r}")
        if not (math.isfinite(self.horizon) and self.horizon > 0):
            raise InvalidArgument(f"horizon must be positive and finite, got {self.horizon!r}")
        object.__setattr__(self, "horizon", float(self.horizon))
        object.__setattr__(self, "steps", int(self.steps))

    @property
    def dt(self) -> float:
        return self.horizon / self.steps

    @cached_property
    def nodes(self) -> np.ndarray:
        t = np.arange(self.steps + 1, dtype=float) * self.dt
        t[-1] = self.horizon
        t.setflags(write=False)
        return t

    @cached_property
    def midpoints(self) -> np.ndarray:
        t = self.nodes
        m = 0.5 * (t[:-1] + t[1:])
        m.setflags(write=False)
        return m

    @cached_property
    def triangle(self) -> "TriangularIndex":
        return TriangularIndex(self.steps)


class TriangularIndex:
    """Enumeration of ``{(i, k): 0 <= i <= k <= M}``, row ``i`` outer, column ``k`` inner.

    The flat position of ``(i, k)`` is ``offset(i) + (k - i)`` with
    ``offset(i) = i (M + 1) - i (i - 1) / 2``.
    """

    def __init__(self, steps: int):
        if steps < 0:
            raise InvalidArgument("steps must be non-negative")
        self.steps = int(steps)
        m = self.steps
        rows = np.repeat(np.arange(m + 1), np.arange(m + 1, 0, -1))
        cols = np.concatenate([np.arange(i, m + 1) for i in range(m + 1)])
        self.rows = rows
        self.cols = cols
        self.rows.setflags(write=False)
        self.cols.setflags(write=False)

    def __len__(self) -> int:
        return (self.steps + 1) * (self.steps + 2) // 2

    def __iter__(self):
        return zip(self.rows.tolist(), self.cols.tolist())

    def __eq__(self, other):
        return isinstance(other, TriangularIndex) and other.steps == self.steps

    def __hash__(self):
        return hash(("TriangularIndex", self.steps))

    def offset(self, i):
        return i * (self.steps + 1) - i * (i - 1) // 2

    def index(self, i, k):
        """Flat position of ``(i, k)``; accepts integer arrays."""
        i = np.asarray(i)
        k = np.asarray(k)
        if np.any(i < 0) or np.any(k < i) or np.any(k > self.steps):
            raise InvalidArgument("pair outside the triangle 0 <= i <= k <= M")
        out = self.offset(i) + (k - i)
        return int(out) if out.ndim == 0 else out

    def column(self, k: int) -> np.ndarray:
        """Flat positions of ``(0, k), (1, k), ..., (k, k)``."""
        i = np.arange(k + 1)
        return self.offset(i) + (k - i)


def make_grid(T: float, M: int) -> TimeGrid:
    """Uniform grid on ``[0, T]`` with ``M`` steps."""
    return TimeGrid(T, M)


@dataclass(frozen=True, eq=False)
class NoiseEnsemble:
    """Brownian drivers on a grid.

    ``values`` has shape ``(n, M + 1, d)`` with ``values[:, k]`` the state
    ``W(t_k)`` of each scenario (paths) or node (lattice); ``weights`` has
    shape ``(n, M + 1)`` with the probability of each scenario/node at each
    step.  ``increments`` is ``(P, M, d)`` in paths mode and ``None`` on the
    lattice, where the two moves are ``lattice_moves``.
    """

    grid: TimeGrid
    mode: str
    dim: int
    values: np.ndarray
    weights: np.ndarray
    increments: np.ndarray | None = None
    seed: int | None = None
    stream: int = 0
    layout: dict = field(default_factory=dict)

    @property
    def n_states(self) -> int:
        return self.values.shape[0]

    @property
    def is_lattice(self) -> bool:
        return self.mode == "lattice"

    @property
    def lattice_moves(self) -> tuple[float, float]:
        h = math.sqrt(self.grid.dt)
        return (h, -h)

    def state(self, k: int) -> np.ndarray:
        return self.values[:, k, :]

    def terminal(self) -> np.ndarray:
        return self.values[:, -1, :]

    def valid(self, k: int) -> np.ndarray:
        """Boolean mask of live nodes at step ``k`` (all true for paths)."""
        if self.is_lattice:
            return np.arange(self.n_states) <= k
        return np.ones(self.n_states, dtype=bool)

    def expectation(self, k: int, values) -> float:
        """Exactly rounded weighted sum ``sum_j w_j(k) v_j``."""
        v = np.asarray(values, dtype=float)
        return math.fsum((self.weights[:, k] * v).tolist())

    def permuted(self, order) -> "NoiseEnsemble":
        """Same ensemble with scenarios reordered (paths mode only)."""
        if self.is_lattice:
            raise InvalidArgument("lattice nodes cannot be permuted")
        order = np.asarray(order)
        return NoiseEnsemble(self.grid, self.mode, self.dim, self.values[order],
                             self.weights[order], self.increments[order],
                             self.seed, self.stream, dict(self.layout, permuted=True))


def _normal_block(seed: int, stream: int, count: int) -> np.ndarray:
    bg = np.random.Philox(key=np.array([int(seed) % _U64, int(stream) % _U64], dtype=np.uint64))
    raw = bg.random_raw(count)
    u = ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0 ** -53
    return ndtri(u)


def sample_paths(grid: TimeGrid, d: int, P: int, seed: int, stream: int = 0) -> NoiseEnsemble:
    """Sample ``P`` Brownian paths of dimension ``d``.

    Scenario ``p`` consumes the ``p``-th block of ``M d`` outputs of the
    Philox4x64 counter stream keyed by ``(seed, stream)``; outputs are mapped
    to normals by the inverse normal CDF, so enlarging ``P`` only appends
    scenarios.
    """
    if not (isinstance(d, (int, np.integer)) and d >= 1):
        raise InvalidArgument(f"dimension d must be a positive integer, got {d!r}")
    if not (isinstance(P, (int, np.integer)) and P >= 1):
        raise InvalidArgument(f"scenario count P must be a positive integer, got {P!r}")
    seed = int(seed)
    M = grid.steps
    z = _normal_block(seed, stream, P * M * d).reshape(P, M, d)
    inc = z * math.sqrt(grid.dt)
    values = np.zeros((P, M + 1, d))
    np.cumsum(inc, axis=1, out=values[:, 1:, :])
    weights = np.full((P, M + 1), 1.0 / P)
    layout = {
        "bitgen": "Philox4x64-10",
        "key": [seed % _U64, int(stream) % _U64],
        "block": M * d,
        "order": "scenario, step, coordinate",
        "transform": "inverse normal cdf of ((raw >> 11) + 0.5) * 2**-53, scaled by sqrt(dt)",
    }
    for a in (inc, values, weights):
        a.setflags(write=False)
    return NoiseEnsemble(grid, "paths", int(d), values, weights, inc, seed, int(stream), layout)


def build_lattice(grid: TimeGrid, cap: int = DEFAULT_LATTICE_CAP) -> NoiseEnsemble:
    """Recombining binomial lattice; node ``j`` at step ``k`` sits at ``(2j - k) sqrt(dt)``."""
    M = grid.steps
    if M > cap:
        raise ResourceLimitError(f"lattice depth M={M} exceeds the cap {cap}")
    h = math.sqrt(grid.dt)
    j = np.arange(M + 1)[:, None]
    k = np.arange(M + 1)[None, :]
    live = j <= k
    values = np.where(live, (2 * j - k) * h, 0.0)[:, :, None]
    weights = np.zeros((M + 1, M + 1))
    for kk in range(M + 1):
        for jj in range(kk + 1):
            weights[jj, kk] = math.comb(kk, jj) / 2 ** kk
    for a in (values, weights):
        a.setflags(write=False)
    layout = {"bitgen": None, "nodes": "padded binomial, node j at (2j-k)sqrt(dt)", "cap": cap}
    return NoiseEnsemble(grid, "lattice", 1, values, weights, None, None, 0, layout)
