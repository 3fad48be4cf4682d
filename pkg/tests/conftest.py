from __future__ import annotations

import warnings

import numpy as np
import pytest
from hypothesis import settings

from collbreak.discretization import build_grid, precompute_operator
from collbreak.model import DaughterSpec, KernelSpec

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")

# acceptance criterion -> (passed, detail); printed at the end of the session
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"criterion {key:>2}: {'PASS' if passed else 'FAIL'}  {detail}")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def make_operator(alpha=0.5, beta=0.5, nu=0.0, x_min=1e-3, x_max=10.0, cells=40, window=None):
    grid = build_grid(x_min, x_max, cells)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return precompute_operator(grid, KernelSpec(alpha, beta), window, DaughterSpec(nu))


@pytest.fixture
def small_op():
    return make_operator()
