"""
Tests for obstacles, masked grids, caps and perimeters.
"""

import math

import numpy as np
import pytest

from src.errors import DomainError, GaugeError
from src.gauge import GaugeDescriptor, dual_values, wulff_ball_volume
from src.geometry import (
    DIRICHLET,
    NEUMANN,
    ConvexObstacle,
    MaskedGrid,
    OuterRegion,
    anisotropic_isoperimetric_check,
    anisotropic_perimeter,
    build_domain,
    cap_constant,
    cap_coordinate,
    cap_grid,
    cap_perimeter,
    cap_radius_for_volume,
    capillary_perimeter,
    isoperimetric_check,
    set_volume,
)
from src.harmonic import analytic_drift_for
from src.rearrange import cap_form_field


class TestBuildDomain:
    """Test grid construction and cell classification."""

    def test_half_disk_classes(self, half_disk):
        """Test the flat side is Neumann and the arc Dirichlet."""
        assert half_disk.origin[1] == 0.0
        assert half_disk.volume == pytest.approx(math.pi / 2.0, abs=0.05)
        bottom = half_disk.domain_mask[:, 0]
        np.testing.assert_array_equal(half_disk.neumann_mask[:, 0], bottom)
        assert not np.any(half_disk.neumann_mask[:, 1:])
        assert np.any(half_disk.cell_class == DIRICHLET)
        inventory = half_disk.face_inventory
        assert inventory["contact_faces"] == int(np.count_nonzero(bottom))
        assert inventory["dirichlet_faces"] > 0

    def test_ball_obstacle(self, ball_obstacle_grid):
        """Test a ball obstacle leaves a hole ringed by Neumann cells."""
        grid = ball_obstacle_grid
        inside = np.linalg.norm(grid.centers, axis=-1) <= 0.5
        assert not np.any(grid.domain_mask[inside])
        assert np.count_nonzero(grid.cell_class == NEUMANN) > 0
        expected = 9.0 - math.pi * 0.25
        assert grid.volume == pytest.approx(expected, rel=0.02)

    def test_under_resolved_obstacle(self):
        """Test fewer than 8 cells across the obstacle is an error."""
        with pytest.raises(DomainError, match="under-resolved"):
            build_domain(ConvexObstacle.ball([0.0, 0.0], 0.1), OuterRegion.box([-1, -1], [1, 1]), 1.0 / 16.0)

    def test_narrow_polytope_facet(self):
        """Test a facet narrower than 2h is an error."""
        # square [-0.5, 0.5]^2 with one corner cut by a facet of width 0.1
        cut = 0.5 - 0.05
        obstacle = ConvexObstacle.polytope(
            [[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0], [1.0, 1.0]], [0.5, 0.5, 0.5, 0.5, 2.0 * cut]
        )
        widths = obstacle.facet_widths()
        assert widths[4] == pytest.approx(0.1 * math.sqrt(2.0), rel=1e-6)
        assert widths[0] == pytest.approx(0.9, rel=1e-6)
        with pytest.raises(DomainError, match="facet width"):
            build_domain(obstacle, OuterRegion.box([-1.5, -1.5], [1.5, 1.5]), 1.0 / 8.0)
        grid = build_domain(obstacle, OuterRegion.box([-1.5, -1.5], [1.5, 1.5]), 1.0 / 32.0)
        assert np.count_nonzero(grid.cell_class == NEUMANN) > 0

    def test_facet_widths_unbounded_and_redundant(self):
        """Test wedge facets are unbounded and a facet missing the polytope is empty."""
        wedge = ConvexObstacle.polytope([[1.0, 0.0], [0.0, 1.0]], [0.0, 0.0])
        assert np.all(np.isinf(wedge.facet_widths()))
        square = ConvexObstacle.polytope(
            [[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0], [1.0, 1.0]], [0.5, 0.5, 0.5, 0.5, 5.0]
        )
        assert np.isnan(square.facet_widths()[4])

    def test_empty_domain(self):
        """Test an outer region swallowed by the obstacle."""
        with pytest.raises(DomainError, match="empty domain"):
            build_domain(ConvexObstacle.half_space([0.0, 1.0], 2.0), OuterRegion.box([-1, -1], [1, 1]), 1.0 / 16.0)

    def test_disconnected_domain(self):
        """Test an obstacle cutting the box in two."""
        with pytest.raises(DomainError, match="disconnected"):
            build_domain(
                ConvexObstacle.ball([0.0, 0.0], 0.5), OuterRegion.box([-1.0, -0.25], [1.0, 0.25]), 1.0 / 16.0
            )

    def test_lshape_outer(self, half_space):
        """Test the notch of an L-shaped outer region is excluded."""
        outer = OuterRegion.lshape([-1.0, -1.0], [1.0, 1.0], [0.0, 0.5], [2.0, 2.0])
        grid = build_domain(half_space, outer, 1.0 / 16.0)
        assert grid.volume == pytest.approx(2.0 - 0.5, rel=1e-9)

    def test_text_format(self, coarse_half_disk):
        """Test the capsym-grid v1 format keeps classes and placement."""
        text = coarse_half_disk.to_text()
        assert text.startswith("capsym-grid v1 n=2 h=0.0625 dims=32,16 origin=")
        grid = MaskedGrid.from_text(text)
        np.testing.assert_array_equal(grid.cell_class, coarse_half_disk.cell_class)
        np.testing.assert_array_equal(grid.origin, coarse_half_disk.origin)
        assert grid.spacing == coarse_half_disk.spacing

    def test_text_format_errors(self):
        """Test malformed grid text."""
        with pytest.raises(DomainError):
            MaskedGrid.from_text("not a grid")
        with pytest.raises(DomainError):
            MaskedGrid.from_text("capsym-grid v1 n=2 h=0.5 dims=2,2\nii\ni")


class TestCaps:
    """Test the cap constants and closed forms."""

    @pytest.mark.parametrize("lambda_", [-0.5, 0.0, 0.3, 0.9])
    def test_cap_constant_2d(self, lambda_):
        """Test kappa = arccos(lambda) - lambda sqrt(1 - lambda^2)."""
        expected = math.acos(lambda_) - lambda_ * math.sqrt(1.0 - lambda_**2)
        assert cap_constant(lambda_, 2) == pytest.approx(expected, rel=1e-12)

    def test_cap_constant_half_ball(self):
        """Test the half-disk and half-ball volumes."""
        assert cap_constant(0.0, 2) == pytest.approx(math.pi / 2.0)
        assert cap_constant(0.0, 3) == pytest.approx(2.0 * math.pi / 3.0)

    def test_cap_constant_quadrature_dimension(self):
        """Test n = 4 quadrature against the half-ball volume pi^2/4."""
        assert cap_constant(0.0, 4) == pytest.approx(math.pi**2 / 4.0, rel=1e-9)

    @pytest.mark.parametrize("n", [2, 3])
    def test_cap_constant_decreasing(self, n):
        """Test kappa_lambda strictly decreases across 20 contact parameters."""
        kappas = np.array([cap_constant(value, n) for value in np.linspace(-0.95, 0.95, 20)])
        assert np.all(np.diff(kappas) < 0.0)
        ball_volume = math.pi if n == 2 else 4.0 * math.pi / 3.0
        assert np.all((kappas > 0.0) & (kappas < ball_volume))

    def test_cap_constant_rejects_lambda(self):
        """Test lambda = 1 is rejected."""
        with pytest.raises(GaugeError):
            cap_constant(1.0, 2)

    @pytest.mark.parametrize("lambda_,n", [(0.5, 2), (-0.4, 2), (0.5, 3), (-0.4, 3)])
    def test_cap_energy_split(self, lambda_, n):
        """Test n kappa r^(n-1) = curved - lambda flat."""
        cap = cap_perimeter(lambda_, n, 0.7)
        assert cap.energy == pytest.approx(cap.curved - lambda_ * cap.flat, rel=1e-12)

    def test_cap_radius_for_volume(self):
        """Test the radius of a cap with given volume."""
        volume = cap_constant(0.3, 3) * 1.7**3
        assert cap_radius_for_volume(volume, 0.3, 3) == pytest.approx(1.7)
        assert cap_radius_for_volume(0.0, 0.3, 3) == 0.0

    def test_cap_coordinate(self):
        """Test rho solves |x + rho lambda e_n| = rho."""
        rho = cap_coordinate([[0.0, 1.0], [0.3, 0.4]], 0.5)
        assert rho[0] == pytest.approx(2.0)
        x = np.array([0.3, 0.4])
        assert np.linalg.norm(x + rho[1] * np.array([0.0, 0.5])) == pytest.approx(rho[1])
        np.testing.assert_allclose(cap_coordinate([[3.0, 4.0]], 0.0), [5.0])

    def test_cap_grid_volume(self):
        """Test the equal-volume cap grid."""
        grid = cap_grid(1.0, 0.4, 2, 1.0 / 64.0)
        assert grid.volume == pytest.approx(1.0, rel=0.03)


class TestPerimeters:
    """Test capillary and anisotropic perimeters."""

    @pytest.mark.parametrize("lambda_", [0.0, 0.5, -0.5])
    def test_cap_set_energy(self, make_cap_domain, lambda_):
        """Test the capillary energy of a cap against the closed form."""
        grid = make_cap_domain(lambda_, 1.0 / 64.0)
        cap_set = cap_form_field(grid, lambda_, lambda rho: 0.5 - rho)
        split = capillary_perimeter(cap_set, grid, lambda_, level=0.0)
        exact = cap_perimeter(lambda_, 2, 0.5)
        assert split.energy == pytest.approx(exact.energy, rel=0.08)
        assert split.wet == pytest.approx(exact.flat, rel=0.08)

    def test_euclidean_consistency(self, half_disk, rng):
        """Test P_euclid = free + raw contact area exactly."""
        field = cap_form_field(half_disk, 0.0, lambda rho: 0.6 - rho)
        split = capillary_perimeter(field, half_disk, 0.0, level=0.0)
        total = anisotropic_perimeter(field, half_disk, GaugeDescriptor.euclidean(2), level=0.0)
        assert total == pytest.approx(split.free + split.contact_facet_area, rel=1e-12)

    def test_empty_set(self, half_disk):
        """Test an empty set has zero perimeter."""
        split = capillary_perimeter(np.zeros(half_disk.shape, dtype=bool), half_disk, 0.3)
        assert split.energy == 0.0

    def test_isoperimetric_cap_equality(self, half_disk):
        """Test the cap itself sits in the equality band."""
        field = cap_form_field(half_disk, 0.0, lambda rho: 0.5 - rho)
        report = isoperimetric_check(field, half_disk, 0.0, level=0.0)
        assert report.experiment == "isoperimetric"
        assert report.passed
        assert abs(report.margin) < report.tolerance

    def test_isoperimetric_box_set(self, make_cap_domain):
        """Test a rectangle on the wall has strictly more energy than the cap."""
        grid = make_cap_domain(0.5, 1.0 / 64.0)
        points = grid.centers
        field = np.minimum(0.4 - np.abs(points[..., 0]), 0.3 - points[..., 1])
        report = isoperimetric_check(field, grid, 0.5, level=0.0)
        assert report.passed
        assert report.margin > 0.0

    def test_isoperimetric_empty_set(self, half_disk):
        """Test an empty set is rejected."""
        with pytest.raises(DomainError):
            isoperimetric_check(np.zeros(half_disk.shape, dtype=bool), half_disk, 0.0)

    def test_set_volume(self, half_disk):
        """Test the cell-count volume of the whole domain."""
        assert set_volume(half_disk.domain_mask, half_disk) == pytest.approx(half_disk.volume)

    def test_wulff_shape_equality(self):
        """Test the dual ball of F_lambda minimizes the anisotropic perimeter."""
        grid = build_domain(None, OuterRegion.box([-1.0, -1.0], [1.0, 1.0]), 1.0 / 64.0)
        g = GaugeDescriptor.capillary(0.4, 2)
        field = np.zeros(grid.shape)
        field[grid.domain_mask] = 0.5 - dual_values(grid.domain_points(), g.drift_vectors()[0])
        report = anisotropic_isoperimetric_check(field, grid, g, level=0.0)
        assert report.passed
        assert abs(report.margin) < 0.05 * report.rhs

        square = np.minimum(0.4 - np.abs(grid.centers[..., 0]), 0.4 - np.abs(grid.centers[..., 1]))
        assert anisotropic_isoperimetric_check(square, grid, g, level=0.0).margin > 0.0

    def test_obstacle_gauge_freezes_drift_inside_set(self, ball_obstacle_grid):
        """Test the Wulff volume uses the drift at a cell of the set and records its spread."""
        grid = ball_obstacle_grid
        drift = analytic_drift_for(grid.obstacle, 0.4)
        g = GaugeDescriptor.obstacle(0.4, drift, 2)
        disk = 0.3 - np.linalg.norm(grid.centers - np.array([1.0, 0.0]), axis=-1)
        report = anisotropic_isoperimetric_check(disk, grid, g, level=0.0)
        point = np.asarray(report.metadata["drift_point"])
        assert np.linalg.norm(point - np.array([1.0, 0.0])) < grid.spacing
        assert report.metadata["drift_spread"] > 0.0
        # the unit dual ball is a translated unit disk whatever the frozen drift
        assert report.metadata["wulff_volume"] == pytest.approx(wulff_ball_volume(GaugeDescriptor.euclidean(2)))
