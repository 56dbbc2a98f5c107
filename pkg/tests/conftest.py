"""
Shared test configuration and fixtures.
"""

import os
from unittest.mock import patch

import numpy as np
import pytest

from src.geometry import ConvexObstacle, OuterRegion, build_domain


def _e_n(n):
    normal = np.zeros(n)
    normal[-1] = 1.0
    return normal


@pytest.fixture
def rng():
    """Seeded generator for randomized tests."""
    return np.random.default_rng(1234)


@pytest.fixture
def half_space():
    """E = {x_2 <= 0}."""
    return ConvexObstacle.half_space(_e_n(2), 0.0)


@pytest.fixture
def make_cap_domain():
    """Factory for the cap B_r(-r lambda e_n) over {x_n <= 0}."""

    def build(lambda_=0.0, spacing=1.0 / 32.0, n=2, radius=1.0):
        return build_domain(
            ConvexObstacle.half_space(_e_n(n), 0.0), OuterRegion.cap(radius, lambda_, n), spacing
        )

    return build


@pytest.fixture
def half_disk(make_cap_domain):
    """Unit half-disk at h = 1/32."""
    return make_cap_domain(0.0, 1.0 / 32.0)


@pytest.fixture
def coarse_half_disk(make_cap_domain):
    """Unit half-disk at h = 1/16."""
    return make_cap_domain(0.0, 1.0 / 16.0)


@pytest.fixture
def ball_obstacle_grid():
    """Box [-1.5, 1.5]^2 outside the disk of radius 1/2 at h = 1/16."""
    return build_domain(
        ConvexObstacle.ball([0.0, 0.0], 0.5),
        OuterRegion.box([-1.5, -1.5], [1.5, 1.5]),
        1.0 / 16.0,
    )


@pytest.fixture
def out_dir(tmp_path):
    """Output directory for artifacts."""
    return tmp_path / "out"


@pytest.fixture
def clean_env():
    """Environment without CAPSYM_ variables."""
    kept = {key: value for key, value in os.environ.items() if not key.upper().startswith("CAPSYM_")}
    with patch.dict(os.environ, kept, clear=True):
        yield
