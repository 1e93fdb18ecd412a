"""
Shared fixtures for the degenerate diffusion test suite.
Run with: python -m pytest tests/
"""

import pytest

from degenerate_diffusion.core_paths import make_grid
from degenerate_diffusion.models import builtin_model
from degenerate_diffusion.theorems import RunOptions

SEED = 20240607


@pytest.fixture
def grid():
    return make_grid(32)


@pytest.fixture
def small_grid():
    return make_grid(8)


@pytest.fixture
def options():
    return RunOptions(seed=SEED)


@pytest.fixture
def m1():
    return builtin_model("M1")


@pytest.fixture
def m2():
    return builtin_model("M2")


@pytest.fixture
def m3():
    return builtin_model("M3")
