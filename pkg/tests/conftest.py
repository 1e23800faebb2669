"""Shared fixtures; collects acceptance verdicts for the terminal summary."""

import pytest

from mfbsvie.condexp import CondExpEngine
from mfbsvie.generators import FreeTermSpec, GeneratorSpec
from mfbsvie.lattice import build_lattice, make_grid, sample_paths
from mfbsvie.solver import Problem

ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture
def linear_mf():
    """Interacting linear driver (mean and W1 law terms) with a sine free term."""
    return (GeneratorSpec("linear-lipschitz", {"a": -0.5, "m": 0.5, "e1": 0.25}),
            FreeTermSpec("sine", {"offset": 0.5, "amp": 1.0, "freq": 1.0, "phase": 1.0}))


def lattice_problem(gen, free, T=1.0, M=16, cap=128):
    grid = make_grid(T, M)
    return Problem(grid, gen, free, 1, CondExpEngine("lattice-exact"), build_lattice(grid, cap))


def paths_problem(gen, free, T=1.0, M=4, P=512, seed=0, d=1):
    grid = make_grid(T, M)
    return Problem(grid, gen, free, d, CondExpEngine(), sample_paths(grid, d, P, seed))
