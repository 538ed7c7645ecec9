import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from gmartlab import VolatilityBand, default_strategy_family, make_uniform_grid, simulate_paths


@pytest.fixture(scope="session")
def band():
    return VolatilityBand(0.5, 1.0)


@pytest.fixture(scope="session")
def family(band):
    return default_strategy_family(band)


@pytest.fixture(scope="session")
def small_bundles(band, family):
    """2000 paths x 256 steps for every default strategy."""
    g = make_uniform_grid(1.0, 256)
    return [simulate_paths(s, g, 2000, 42, band=band) for s in family]


def lattice_bundle(n_steps: int, h: float = 1.0):
    """All 2^n +-h walks as a PathBundle with sigma = 1 and dt = h^2."""
    import itertools

    from gmartlab import PathBundle
    from gmartlab.model import TimeGrid

    signs = np.array(list(itertools.product((1.0, -1.0), repeat=n_steps)))
    dt = h * h
    grid = TimeGrid(n_steps * dt, n_steps, dt * np.arange(n_steps + 1))
    return PathBundle.from_increments(grid, h * signs, 1.0, label="lattice")


# one line per acceptance criterion, printed at the end of the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
