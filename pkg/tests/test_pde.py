"""
Tests for the mixed boundary value problem, the radial problem and the first eigenvalue.
"""

import numpy as np
import pytest

from src.errors import DomainError
from src.gauge import GaugeDescriptor
from src.geometry import MaskedGrid
from src.pde import (
    MixedProblem,
    SimplexGradient,
    first_eigenvalue,
    poincare_constant,
    rayleigh_quotient,
    solve_mixed_bvp,
    solve_radial_ode,
    talenti_upper_profile,
)
from src.rearrange import RadialProfile

HALF_DISK_EIGENVALUE = 5.783185962946784


class TestSimplexGradient:
    """Test the Kuhn triangulation."""

    def test_shapes_and_symmetry(self, coarse_half_disk):
        """Test gradient shapes and a symmetric stiffness matrix."""
        disc = SimplexGradient(coarse_half_disk)
        u = np.full(disc.node_count, 1.0)
        assert disc.gradients(u).shape == (disc.simplex_count, 2)
        stiffness = disc.stiffness()
        assert stiffness.shape == (disc.node_count, disc.node_count)
        np.testing.assert_allclose(stiffness.toarray(), stiffness.toarray().T)

    def test_free_nodes_exclude_dirichlet(self, coarse_half_disk):
        """Test Dirichlet cells are never free."""
        disc = SimplexGradient(coarse_half_disk)
        assert not np.any(disc.free_mask & coarse_half_disk.dirichlet_mask)


class TestMixedProblem:
    """Test the mixed Dirichlet/Neumann solve."""

    def test_torsion_half_disk(self, half_disk):
        """Test f = 1 on the half-disk against (1 - |x|^2)/4."""
        source = np.where(half_disk.domain_mask, 1.0, 0.0)
        solution = solve_mixed_bvp(MixedProblem(half_disk, GaugeDescriptor.capillary(0.0, 2), source))
        points = half_disk.domain_points()
        exact = 0.25 * (1.0 - np.sum(points**2, axis=1))
        error = np.max(np.abs(solution.values[half_disk.domain_mask] - exact))
        assert error < 0.03
        assert solution.decrement < 1e-6
        assert np.all(np.diff(solution.energy_trace) <= 1e-10)
        assert solution.energy < 0.0

    def test_capillary_gauge_solution(self, coarse_half_disk):
        """Test lambda != 0 still gives a non-negative solution vanishing on Dirichlet cells."""
        source = np.where(coarse_half_disk.domain_mask, 1.0, 0.0)
        solution = solve_mixed_bvp(MixedProblem(coarse_half_disk, GaugeDescriptor.capillary(0.4, 2), source))
        assert np.min(solution.values) >= -1e-8
        assert np.all(solution.values[coarse_half_disk.dirichlet_mask] == 0.0)

    def test_zero_source(self, coarse_half_disk):
        """Test f = 0 returns u = 0 without iterating."""
        problem = MixedProblem(coarse_half_disk, GaugeDescriptor.euclidean(2), np.zeros(coarse_half_disk.shape))
        solution = solve_mixed_bvp(problem)
        assert solution.iterations == 0
        assert not np.any(solution.values)

    def test_only_p_two(self, coarse_half_disk):
        """Test other exponents are rejected."""
        with pytest.raises(DomainError, match="p = 2"):
            MixedProblem(coarse_half_disk, GaugeDescriptor.euclidean(2), np.zeros(coarse_half_disk.shape), p=3.0)

    def test_source_shape(self, coarse_half_disk):
        """Test a source of the wrong shape."""
        with pytest.raises(DomainError, match="shape"):
            MixedProblem(coarse_half_disk, GaugeDescriptor.euclidean(2), np.zeros((2, 2)))


class TestRadialProblem:
    """Test the symmetrized radial solution."""

    def test_constant_source(self):
        """Test f# = 1 on the unit half-disk gives v = (1 - rho^2)/4."""
        profile = RadialProfile.constant(1.0, np.pi / 2.0)
        radial = solve_radial_ode(profile, 1.0, 0.0, 2)
        np.testing.assert_allclose(radial.v, 0.25 * (1.0 - radial.rho**2), atol=1e-9)
        assert radial.v[-1] == 0.0

    def test_matches_upper_profile(self):
        """Test v# agrees with the closed-form Talenti profile on the same mesh."""
        profile = RadialProfile(
            edges=np.array([0.0, 0.2, 0.5, 1.0]),
            values=np.array([3.0, 1.0, 0.5]),
            total_volume=1.0,
            lambda_=0.3,
            dim=2,
        )
        radius = profile.r_max
        radial = solve_radial_ode(profile, radius, 0.3, 2)
        upper = talenti_upper_profile(profile, 1.0, 0.3, 2)
        np.testing.assert_allclose(radial.v_sharp.values, upper.values, rtol=1e-6, atol=1e-12)

    def test_negative_profile(self):
        """Test f# must be non-negative."""
        profile = RadialProfile(np.array([0.0, 1.0]), np.array([-1.0]), 1.0)
        with pytest.raises(DomainError):
            solve_radial_ode(profile, 1.0, 0.0, 2)


class TestFirstEigenvalue:
    """Test the first eigenvalue of the mixed problem."""

    def test_half_disk(self, half_disk):
        """Test the half-disk eigenvalue j_{0,1}^2."""
        result = first_eigenvalue(half_disk, GaugeDescriptor.capillary(0.0, 2))
        assert result.eigenvalue == pytest.approx(HALF_DISK_EIGENVALUE, rel=0.1)
        assert np.min(result.eigenfunction) >= 0.0
        quotient = rayleigh_quotient(result.eigenfunction, half_disk, GaugeDescriptor.capillary(0.0, 2))
        assert quotient == pytest.approx(result.eigenvalue, rel=1e-8)

    @pytest.mark.slow
    def test_half_disk_fine(self, make_cap_domain):
        """Test convergence on a fine grid."""
        grid = make_cap_domain(0.0, 1.0 / 256.0)
        result = first_eigenvalue(grid, GaugeDescriptor.capillary(0.0, 2))
        assert result.eigenvalue == pytest.approx(HALF_DISK_EIGENVALUE, rel=0.01)

    def test_poincare_constant_shrinks_with_domain(self, make_cap_domain):
        """Test C = 1/lambda_1 and a smaller cap has a smaller constant."""
        gauge = GaugeDescriptor.capillary(0.2, 2)
        large = make_cap_domain(0.2, 1.0 / 16.0)
        small = make_cap_domain(0.2, 1.0 / 16.0, radius=0.75)
        constant = poincare_constant(large, gauge)
        assert constant == pytest.approx(1.0 / first_eigenvalue(large, gauge).eigenvalue, rel=1e-6)
        assert poincare_constant(small, gauge) < constant

    def test_needs_dirichlet_cells(self):
        """Test a domain without Dirichlet cells."""
        cell_class = np.ones((4, 4), dtype=np.int8)
        grid = MaskedGrid(dim=2, spacing=0.25, origin=np.zeros(2), cell_class=cell_class)
        with pytest.raises(DomainError, match="Dirichlet"):
            first_eigenvalue(grid, GaugeDescriptor.euclidean(2))
