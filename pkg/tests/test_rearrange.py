"""
Tests for distribution functions, rearrangements and the Polya-Szego check.
"""

import logging
import math
from unittest.mock import patch

import numpy as np
import pytest

from src.errors import DomainError
from src.gauge import GaugeDescriptor
from src.geometry import cap_grid
from src.harmonic import analytic_drift_for
from src.rearrange import (
    RadialProfile,
    cap_form_field,
    capillary_symmetrize,
    coarea_check,
    decreasing_rearrangement,
    distribution,
    equimeasurability_check,
    gradient_energy,
    grid_norm,
    polya_szego_check,
    polya_szego_suite,
    random_bump_field,
)
from src.utils import make_rng


class TestDistribution:
    """Test mu(t) on grid fields."""

    def test_constant_field(self, coarse_half_disk):
        """Test a constant field jumps from |Omega| to 0."""
        u = np.where(coarse_half_disk.domain_mask, 1.0, 0.0)
        mu = distribution(u, coarse_half_disk, levels=[0.0, 0.5, 1.0])
        np.testing.assert_allclose(mu.measures, [coarse_half_disk.volume, coarse_half_disk.volume, 0.0])
        assert mu.at(0.75) == pytest.approx(coarse_half_disk.volume)

    def test_non_increasing(self, coarse_half_disk):
        """Test the default levels give a non-increasing staircase."""
        u = cap_form_field(coarse_half_disk, 0.0, lambda rho: 1.0 - rho)
        mu = distribution(np.maximum(u, 0.0), coarse_half_disk)
        assert mu.thresholds[0] == 0.0
        assert np.all(np.diff(mu.measures) <= 0.0)

    def test_negative_field(self, coarse_half_disk):
        """Test signed fields are rejected."""
        u = np.where(coarse_half_disk.domain_mask, -1.0, 0.0)
        with pytest.raises(DomainError, match="negative"):
            distribution(u, coarse_half_disk)

    def test_shape_mismatch(self, coarse_half_disk):
        """Test a field of the wrong shape."""
        with pytest.raises(DomainError, match="shape"):
            distribution(np.zeros((3, 3)), coarse_half_disk)


class TestRearrangement:
    """Test the decreasing rearrangement and capillary symmetrization."""

    def test_sorted_steps(self, coarse_half_disk, rng):
        """Test u# is the sorted cell values on steps of width h^n."""
        u = random_bump_field(coarse_half_disk, rng)
        profile = decreasing_rearrangement(u, coarse_half_disk)
        assert np.all(np.diff(profile.values) <= 0.0)
        np.testing.assert_allclose(np.diff(profile.edges), coarse_half_disk.cell_volume)
        assert profile.total_volume == pytest.approx(coarse_half_disk.volume)

    @pytest.mark.parametrize("q", [1.0, 2.0, 3.5, math.inf])
    def test_norms_preserved(self, coarse_half_disk, rng, q):
        """Test ||u#||_q equals ||u||_q."""
        u = random_bump_field(coarse_half_disk, rng)
        profile = capillary_symmetrize(u, coarse_half_disk, 0.3)
        assert profile.norm(q) == pytest.approx(grid_norm(u, coarse_half_disk, q), rel=1e-12)

    def test_equimeasurability_report(self, coarse_half_disk, rng):
        """Test u* sampled on the cap grid keeps the norms of u within tol(h)."""
        u = random_bump_field(coarse_half_disk, rng)
        report = equimeasurability_check(u, coarse_half_disk, 0.3)
        assert report.passed
        assert report.metadata["distribution_max_error"] == 0.0
        assert report.metadata["profile_exact"]
        assert report.tolerance == pytest.approx(2.0 / 16.0)
        assert -report.lhs >= max(report.metadata["relative_norm_errors"].values())

    def test_equimeasurability_compares_sampled_norms(self, coarse_half_disk, rng):
        """Test the sampled cap norms, not the exact profile norms, drive the margin."""
        u = random_bump_field(coarse_half_disk, rng)
        report = equimeasurability_check(u, coarse_half_disk, 0.3, c_grid=1e-12)
        assert max(report.metadata["profile_norm_errors"].values()) <= 1e-6
        assert max(report.metadata["relative_norm_errors"].values()) > report.tolerance
        assert not report.passed

    def test_constant_profile(self):
        """Test the constant profile and its cumulative integral."""
        profile = RadialProfile.constant(2.0, 1.5)
        np.testing.assert_allclose(profile.at([0.1, 1.0, 1.6]), [2.0, 2.0, 0.0])
        assert profile.cumulative(1.5) == pytest.approx(3.0)
        assert profile.integral() == pytest.approx(3.0)

    def test_cap_form_symmetric(self, half_disk):
        """Test u* of a cap-form field reproduces the field."""
        u = cap_form_field(half_disk, 0.0, lambda rho: np.clip(1.0 - rho, 0.0, None))
        profile = capillary_symmetrize(u, half_disk, 0.0)
        inner = half_disk.domain_points()
        inner = inner[np.linalg.norm(inner, axis=1) < 0.8]
        expected = 1.0 - np.linalg.norm(inner, axis=1)
        np.testing.assert_allclose(profile.evaluate(inner), expected, atol=0.05)

    def test_bump_field_vanishes_on_dirichlet(self, coarse_half_disk):
        """Test random bumps are non-negative, zero on Dirichlet cells and reproducible."""
        u = random_bump_field(coarse_half_disk, make_rng(7))
        assert np.min(u) >= 0.0
        assert np.all(u[coarse_half_disk.dirichlet_mask] == 0.0)
        np.testing.assert_array_equal(u, random_bump_field(coarse_half_disk, make_rng(7)))


class TestGradientEnergy:
    """Test the midpoint-rule gradient energy."""

    def test_linear_field(self, coarse_half_disk):
        """Test u = x_1 has F(-grad u) = 1 for every lambda."""
        u = coarse_half_disk.centers[..., 0]
        g = GaugeDescriptor.capillary(0.5, 2)
        energy = gradient_energy(u, coarse_half_disk, g, 2.0, zero_extension=False)
        assert energy == pytest.approx(coarse_half_disk.volume, rel=1e-9)

    def test_bad_exponent(self, coarse_half_disk):
        """Test p < 1 is rejected."""
        with pytest.raises(DomainError):
            gradient_energy(np.zeros(coarse_half_disk.shape), coarse_half_disk, GaugeDescriptor.euclidean(2), 0.5)


class TestCoarea:
    """Test the co-area identities."""

    def test_cone_on_half_disk(self, make_cap_domain):
        """Test 1 - |x| on the half-disk at p = 1."""
        grid = make_cap_domain(0.0, 1.0 / 64.0)
        u = cap_form_field(grid, 0.0, lambda rho: np.clip(1.0 - rho, 0.0, None))
        report = coarea_check(u, grid, GaugeDescriptor.capillary(0.0, 2), 1.0)
        assert report.metadata["skipped_levels"] == []
        assert report.metadata["relative_error"] < 0.05
        assert report.metadata["mu_relative_error"] < 0.05
        np.testing.assert_allclose(report.metadata["mu_derivative"], np.pi * np.array([0.75, 0.5, 0.25]), rtol=0.05)


class TestPolyaSzego:
    """Test the Polya-Szego comparison."""

    def test_cap_form_is_near_equality(self, half_disk):
        """Test u = 1 - rho on the half-disk sits at the equality case."""
        u = cap_form_field(half_disk, 0.0, lambda rho: np.clip(1.0 - rho, 0.0, None))
        report = polya_szego_check(u, half_disk, 0.0, 2.0)
        assert report.passed
        assert abs(report.margin) < report.tolerance

    def test_suite_passes(self, coarse_half_disk):
        """Test random bump fields satisfy the inequality."""
        reports = polya_szego_suite(coarse_half_disk, 0.3, 2.0, fields=3, seed=11)
        assert len(reports) == 3
        assert all(report.passed for report in reports)
        assert [report.params["seed"] for report in reports] == [11, 12, 13]

    def test_layer_cake_at_p_one(self, coarse_half_disk, rng):
        """Test p = 1 records the layer-cake energy."""
        u = random_bump_field(coarse_half_disk, rng)
        report = polya_szego_check(u, coarse_half_disk, 0.3, 1.0)
        assert "layer_cake" in report.metadata

    @pytest.mark.parametrize("lambda_", [-0.5, 0.5])
    @pytest.mark.parametrize("p", [1.0, 2.0])
    def test_ball_obstacle(self, ball_obstacle_grid, lambda_, p):
        """Test random fields outside a disk obstacle with the analytic drift."""
        drift = analytic_drift_for(ball_obstacle_grid.obstacle, lambda_)
        reports = polya_szego_suite(ball_obstacle_grid, lambda_, p, drift, fields=2, seed=21)
        assert all(report.passed for report in reports)
        assert all(report.metadata["gauge"] == "obstacle" for report in reports)

    def test_cap_volume_mismatch_is_logged(self, coarse_half_disk, rng, caplog):
        """Test a cap grid off the domain volume by more than tol(h) is reported."""
        u = random_bump_field(coarse_half_disk, rng)
        with patch("src.rearrange.cap_grid", side_effect=lambda volume, *args: cap_grid(1.2 * volume, *args)):
            with caplog.at_level(logging.WARNING, logger="src.rearrange"):
                report = polya_szego_check(u, coarse_half_disk, 0.0, 2.0)
        assert report.metadata["cap_volume_mismatch"] == pytest.approx(0.2, abs=0.04)
        assert "Cap grid volume mismatch" in caplog.text
