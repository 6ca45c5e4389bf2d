from __future__ import annotations

import functools
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from fraclap import FracParams, calibrate_constants  # noqa: E402
from fraclap.grid import Constants  # noqa: E402

import oracles  # noqa: E402

ACCEPTANCE_LINES: list[str] = []


@functools.lru_cache(maxsize=None)
def calibrated(s: float, n: int = 1) -> FracParams:
    return FracParams(s, n, calibrate_constants(FracParams(s, n)))


def exact_params(s: float, n: int = 1) -> FracParams:
    """Parameters carrying the closed-form constants (test oracle only)."""
    consts = Constants(
        C_ns=oracles.kernel_constant(n, s),
        d_ns=oracles.flux_constant(s),
        c_nalpha=oracles.poisson_constant(n, 1.0 - 2.0 * s),
    )
    return FracParams(s, n, consts)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda t: int(t.split()[1])):
            terminalreporter.write_line(line)
