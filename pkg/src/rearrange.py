"""
Distribution functions, rearrangements and the Polya-Szego check.

A grid field ``u >= 0`` is summarized by its distribution function
``mu(t) = |{u > t}|`` and by its decreasing rearrangement ``u#`` on
``[0, |Omega|]``. Because cells all have volume ``h^n``, ``u#`` is exactly the
step function of the cell values sorted in decreasing order, so norms and the
distribution function of the profile coincide with those of ``u``.

The capillary symmetrization ``u*(x) = u#(kappa_lambda * rho(x)^n)`` has the
caps ``B_r^+(-r lambda e_n)`` as super-level sets; ``rho`` is the cap radius
coordinate from :func:`src.geometry.cap_coordinate`.
"""

import logging
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Any, Callable, Dict, List, Optional, Sequence

import numpy as np
from scipy import ndimage

from .config import settings
from .errors import DomainError
from .gauge import GaugeDescriptor, GaugeKind, drift_gauge, gauge_gradients, gauge_values
from .geometry import MaskedGrid, cap_constant, cap_coordinate, cap_grid, capillary_perimeter
from .models import VerificationReport
from .surface import extract_surface
from .utils import grid_tolerance, make_rng

# Configure logging
logger = logging.getLogger(__name__)

# Largest relative mismatch between |Omega| and the cell volume of its cap grid;
# mismatches above tol(h) are logged
CAP_VOLUME_MISMATCH = 0.25


@dataclass(frozen=True)
class LevelProfile:
    """Distribution function mu(t) sampled at sorted thresholds."""

    thresholds: np.ndarray
    measures: np.ndarray
    total_volume: float

    def at(self, t: float) -> float:
        """Staircase value of mu at t (right-continuous)."""
        index = int(np.searchsorted(self.thresholds, t, side="right")) - 1
        return float(self.measures[max(index, 0)])


@dataclass(frozen=True)
class RadialProfile:
    """
    Decreasing rearrangement u# as a step function on [0, total_volume].

    ``values[k]`` is the value on ``(edges[k], edges[k + 1]]``; ``values`` is
    non-increasing.
    """

    edges: np.ndarray
    values: np.ndarray
    total_volume: float
    lambda_: float = 0.0
    dim: int = 2

    @classmethod
    def constant(cls, value: float, total_volume: float, lambda_: float = 0.0, dim: int = 2) -> "RadialProfile":
        return cls(np.array([0.0, total_volume]), np.array([float(value)]), float(total_volume), lambda_, dim)

    @cached_property
    def kappa(self) -> float:
        return cap_constant(self.lambda_, self.dim)

    @property
    def r_max(self) -> float:
        """Radius of the cap carrying the whole profile."""
        return (self.total_volume / self.kappa) ** (1.0 / self.dim)

    @cached_property
    def _midpoints(self) -> np.ndarray:
        return 0.5 * (self.edges[:-1] + self.edges[1:])

    @cached_property
    def _cumulative(self) -> np.ndarray:
        return np.concatenate([[0.0], np.cumsum(self.values * np.diff(self.edges))])

    def at(self, s: Any) -> np.ndarray:
        """
        u#(s), linearly interpolated between step midpoints.

        Constant before the first and after the last midpoint, 0 beyond the
        total volume.
        """
        s = np.asarray(s, dtype=float)
        values = np.interp(s, self._midpoints, self.values)
        return np.where(s > self.total_volume, 0.0, values)

    def evaluate(self, points: Any) -> np.ndarray:
        """u*(x) = u#(kappa_lambda rho(x)^n) at an (m, n) array of points."""
        rho = cap_coordinate(points, self.lambda_)
        return self.at(self.kappa * rho**self.dim)

    def cumulative(self, xi: Any) -> np.ndarray:
        """G(xi) = integral of u# over [0, xi] (exact for the step function)."""
        return np.interp(np.asarray(xi, dtype=float), self.edges, self._cumulative)

    def integral(self) -> float:
        return float(self._cumulative[-1])

    def norm(self, q: float) -> float:
        """L^q norm of u#, equal to that of u and of u*."""
        if math.isinf(q):
            return float(np.max(np.abs(self.values))) if self.values.size else 0.0
        return float(np.sum(np.abs(self.values) ** q * np.diff(self.edges)) ** (1.0 / q))

    def distribution(self, levels: Sequence[float]) -> LevelProfile:
        """Distribution function recomputed from the profile."""
        thresholds = np.sort(np.asarray(levels, dtype=float))
        widths = np.diff(self.edges)
        measures = np.array([float(np.sum(widths[self.values > t])) for t in thresholds])
        return LevelProfile(thresholds, measures, self.total_volume)


def _nonnegative(u: np.ndarray, grid: MaskedGrid) -> np.ndarray:
    values = np.asarray(u, dtype=float)
    if values.shape != grid.shape:
        raise DomainError(f"field shape {values.shape} does not match grid shape {grid.shape}")
    if grid.cell_count == 0:
        raise DomainError("empty grid")
    inside = values[grid.domain_mask]
    if not np.all(np.isfinite(inside)):
        raise DomainError("field must be finite on the domain")
    if np.min(inside) < 0.0:
        raise DomainError(f"negative field (min {np.min(inside):.3e}): signed rearrangement is not supported")
    return inside


def distribution(u: np.ndarray, grid: MaskedGrid, levels: Optional[Sequence[float]] = None) -> LevelProfile:
    """
    Distribution function mu(t) = h^n #{cells : u > t}.

    Args:
        u: Non-negative field on the grid
        grid: Grid the field lives on
        levels: Thresholds; defaults to 0 plus the quantile grid of u's values

    Returns:
        LevelProfile with non-increasing measures
    """
    inside = np.sort(_nonnegative(u, grid))
    if levels is None:
        quantiles = np.quantile(inside, np.linspace(0.0, 1.0, settings.quantile_levels))
        thresholds = np.unique(np.concatenate([[0.0], quantiles]))
    else:
        thresholds = np.sort(np.asarray(levels, dtype=float))
    above = inside.size - np.searchsorted(inside, thresholds, side="right")
    return LevelProfile(thresholds, above * grid.cell_volume, grid.volume)


def decreasing_rearrangement(f: np.ndarray, grid: MaskedGrid, lambda_: float = 0.0) -> RadialProfile:
    """
    f#(s) = inf{t : |{f > t}| < s} as a step function with steps of width h^n.

    Args:
        f: Non-negative field
        grid: Grid the field lives on
        lambda_: Contact parameter used when the profile is evaluated as u*

    Returns:
        RadialProfile over [0, |Omega|]
    """
    values = np.sort(_nonnegative(f, grid))[::-1]
    edges = grid.cell_volume * np.arange(values.size + 1, dtype=float)
    return RadialProfile(edges=edges, values=values, total_volume=grid.volume, lambda_=lambda_, dim=grid.dim)


def capillary_symmetrize(u: np.ndarray, grid: MaskedGrid, lambda_: float) -> RadialProfile:
    """
    Capillary Schwartz symmetrization of u.

    Super-level sets of the result are caps with the same volume as those of
    u; evaluate it with :meth:`RadialProfile.evaluate`.
    """
    profile = decreasing_rearrangement(u, grid, lambda_)
    boundary = np.asarray(u, dtype=float)[grid.dirichlet_mask]
    if boundary.size and np.max(boundary) > 0.0:
        logger.warning(f"Field does not vanish on Dirichlet cells (max {np.max(boundary):.3e})")
    logger.debug(
        f"Symmetrized {profile.values.size} cells, lambda={lambda_}, cap radius {profile.r_max:.6g}"
    )
    return profile


def cap_form_field(grid: MaskedGrid, lambda_: float, profile: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
    """Field u = g(rho(x)) on the domain cells, 0 elsewhere."""
    field_values = np.zeros(grid.shape)
    rho = cap_coordinate(grid.domain_points(), lambda_)
    field_values[grid.domain_mask] = np.asarray(profile(rho), dtype=float)
    return field_values


def grid_norm(u: np.ndarray, grid: MaskedGrid, q: float) -> float:
    inside = np.abs(np.asarray(u, dtype=float)[grid.domain_mask])
    if math.isinf(q):
        return float(np.max(inside)) if inside.size else 0.0
    return float((grid.cell_volume * np.sum(inside**q)) ** (1.0 / q))


def gradient_energy(
    u: np.ndarray,
    grid: MaskedGrid,
    g: GaugeDescriptor,
    p: float,
    zero_extension: bool = True,
) -> float:
    """
    Midpoint rule for the integral of F(-grad u)^p over the domain.

    Gradients are central differences, one-sided next to the obstacle. With
    ``zero_extension`` the cells beyond the outer boundary carry 0, otherwise
    they are one-sided too.
    """
    if p < 1:
        raise DomainError(f"p must be >= 1, got {p}")
    grads = grid.cell_gradients(u, zero_outside=zero_extension)[grid.domain_mask]
    a = g.drift_vectors(grid.domain_points())
    density = gauge_values(-grads, a)
    return float(grid.cell_volume * np.sum(np.maximum(density, 0.0) ** p))


# Co-area


def _level_integrals(
    values: np.ndarray, density: np.ndarray, cell_volume: float, t: float
) -> float:
    return float(cell_volume * np.sum(density[values > t]))


def coarea_check(
    u: np.ndarray,
    grid: MaskedGrid,
    g: GaugeDescriptor,
    p: float,
    levels: Optional[Sequence[float]] = None,
    c_grid: Optional[float] = None,
) -> VerificationReport:
    """
    Co-area identities on a handful of levels.

    Compares -d/dt of the integral of F^p(-grad u) over {u > t} with the
    surface integral of F^p(-grad u)/|grad u| over {u = t}, and -mu'(t) with
    the surface integral of 1/|grad u|. Levels where the gradient vanishes on
    the extracted level set are skipped and counted.

    Reported as lhs = -max relative difference, rhs = 0.
    """
    if p < 1:
        raise DomainError(f"p must be >= 1, got {p}")
    inside = _nonnegative(u, grid)
    top = float(np.max(inside))
    if levels is None:
        levels = [0.25 * top, 0.5 * top, 0.75 * top]
    delta = 0.05 * top if top > 0.0 else 1.0

    gradients = grid.cell_gradients(u)
    a_cells = g.drift_vectors(grid.domain_points())
    density = np.maximum(gauge_values(-gradients[grid.domain_mask], a_cells), 0.0) ** p
    h_n = grid.cell_volume

    bulk, surface_terms, mu_bulk, mu_surface, skipped = [], [], [], [], []
    for t in levels:
        surface = extract_surface(u, grid, level=float(t)).free()
        if surface.size == 0:
            skipped.append(float(t))
            continue
        facet_grads = grid.interpolate(gradients, surface.centroids)
        norms = np.linalg.norm(facet_grads, axis=1)
        if not np.all(norms > 0.0):
            logger.warning(f"Degenerate level t={t:.6g}: vanishing gradient on the level set, skipped")
            skipped.append(float(t))
            continue
        units = facet_grads / norms[:, None]
        a_facets = g.drift_vectors(surface.centroids)
        weights = norms ** (p - 1.0) * np.maximum(gauge_values(-units, a_facets), 0.0) ** p

        upper = _level_integrals(inside, density, h_n, t + delta)
        lower = _level_integrals(inside, density, h_n, t - delta)
        bulk.append((lower - upper) / (2.0 * delta))
        surface_terms.append(float(np.sum(surface.areas * weights)))
        mu_upper = h_n * np.count_nonzero(inside > t + delta)
        mu_lower = h_n * np.count_nonzero(inside > t - delta)
        mu_bulk.append((mu_lower - mu_upper) / (2.0 * delta))
        mu_surface.append(float(np.sum(surface.areas / norms)))

    tested = [float(t) for t in levels if float(t) not in skipped]
    bulk_arr, surface_arr = np.array(bulk), np.array(surface_terms)
    mu_bulk_arr, mu_surface_arr = np.array(mu_bulk), np.array(mu_surface)

    def relative(x: np.ndarray, y: np.ndarray) -> np.ndarray:
        scale = np.maximum(np.abs(y), 1e-300)
        return np.where(np.abs(y) > 0.0, np.abs(x - y) / scale, np.abs(x - y))

    energy_error = relative(bulk_arr, surface_arr) if tested else np.zeros(0)
    mu_error = relative(mu_bulk_arr, mu_surface_arr) if tested else np.zeros(0)
    worst = float(max(np.max(energy_error, initial=0.0), np.max(mu_error, initial=0.0)))
    tolerance = grid_tolerance(grid.spacing, scale=1.0, c_grid=c_grid)
    if skipped:
        logger.info(f"Co-area check skipped {len(skipped)} of {len(levels)} levels")
    return VerificationReport(
        experiment="coarea",
        params={"lambda": g.lambda_, "p": p, "n": grid.dim, "h": grid.spacing, "gauge": g.kind.value},
        lhs=-worst,
        rhs=0.0,
        tolerance=tolerance,
        metadata={
            "levels": tested,
            "bulk_derivative": bulk_arr,
            "surface_integral": surface_arr,
            "mu_derivative": mu_bulk_arr,
            "mu_surface_integral": mu_surface_arr,
            "relative_error": float(np.max(energy_error, initial=0.0)),
            "mu_relative_error": float(np.max(mu_error, initial=0.0)),
            "skipped_levels": skipped,
            "skipped_fraction": len(skipped) / max(len(levels), 1),
            "delta": delta,
        },
    )


# Polya-Szego


def _neumann_residual(u: np.ndarray, grid: MaskedGrid, g: GaugeDescriptor, p: float) -> float:
    """Largest |F^(p-1) DF(-grad u) . nu| over Neumann cells, nu the outward normal of Omega."""
    cells = grid.neumann_mask
    if not np.any(cells):
        return 0.0
    points = grid.centers[cells]
    xi = -grid.cell_gradients(u)[cells]
    moving = np.linalg.norm(xi, axis=1) > 0.0
    if not np.any(moving):
        return 0.0
    xi, points = xi[moving], points[moving]
    a = g.drift_vectors(points)
    outward = -grid.obstacle_normals(points)
    flux = gauge_values(xi, a) ** (p - 1.0) * np.sum(gauge_gradients(xi, a) * outward, axis=1)
    return float(np.max(np.abs(flux)))


def _layer_cake(u: np.ndarray, grid: MaskedGrid, lambda_: float, top: float, count: int = 32) -> float:
    """Midpoint rule in t for the integral of the capillary energies of {u > t}."""
    step = top / count
    levels = (np.arange(count) + 0.5) * step
    return float(step * sum(capillary_perimeter(u, grid, lambda_, level=t).energy for t in levels))


def polya_szego_check(
    u: np.ndarray,
    grid: MaskedGrid,
    lambda_: float,
    p: float,
    drift: Optional[Any] = None,
    c_grid: Optional[float] = None,
    seed: Optional[int] = None,
) -> VerificationReport:
    """
    Energy of u with the obstacle gauge against that of u* on the equal-volume cap.

    Args:
        u: Non-negative field vanishing on Dirichlet cells
        grid: Domain grid
        lambda_: Contact parameter
        p: Exponent (>= 1)
        drift: Drift field for the obstacle gauge; None uses the half-space gauge F_lambda
        c_grid: Tolerance constant override
        seed: Recorded in the report parameters

    Returns:
        VerificationReport with lhs = energy of u, rhs = energy of u*

    Raises:
        DomainError: Negative u or a cap grid whose volume is far from |Omega|
    """
    inside = _nonnegative(u, grid)
    g = drift_gauge(lambda_, drift, grid.dim)
    lhs = gradient_energy(u, grid, g, p)

    profile = capillary_symmetrize(u, grid, lambda_)
    cap = cap_grid(grid.volume, lambda_, grid.dim, grid.spacing)
    support = float(np.count_nonzero(inside > 0.0)) * grid.cell_volume
    mismatch = abs(cap.volume - grid.volume) / grid.volume
    if mismatch > CAP_VOLUME_MISMATCH or support > cap.volume * (1.0 + CAP_VOLUME_MISMATCH):
        raise DomainError(
            f"volume mismatch: cap grid {cap.volume:.6g}, |Omega| {grid.volume:.6g}, mu(0) {support:.6g}"
        )
    volume_tolerance = grid_tolerance(grid.spacing, c_grid=c_grid)
    if mismatch > volume_tolerance:
        logger.warning(f"Cap grid volume mismatch {mismatch:.3e} exceeds tol(h) = {volume_tolerance:.3e}")
    u_star = np.zeros(cap.shape)
    u_star[cap.domain_mask] = profile.evaluate(cap.domain_points())
    rhs = gradient_energy(u_star, cap, GaugeDescriptor.capillary(lambda_, grid.dim), p)

    tolerance = grid_tolerance(grid.spacing, scale=max(abs(lhs), abs(rhs)), c_grid=c_grid)
    margin = lhs - rhs
    metadata: Dict[str, Any] = {
        "gauge": g.kind.value,
        "omega_volume": grid.volume,
        "cap_volume": cap.volume,
        "support_volume": support,
        "cap_volume_mismatch": mismatch,
        "cap_radius": profile.r_max,
        "neumann_residual": _neumann_residual(u, grid, g, p),
        "rigidity_candidate": None,
    }
    if p == 1.0 and g.kind is not GaugeKind.EUCLIDEAN:
        layer_cake = _layer_cake(u, grid, lambda_, float(np.max(inside)))
        metadata["layer_cake"] = layer_cake
        metadata["layer_cake_relative_error"] = abs(layer_cake - lhs) / lhs if lhs > 0.0 else abs(layer_cake)
    if abs(margin) < settings.rigidity_factor * tolerance:
        metadata["rigidity_candidate"] = "u of cap form on a facet"
    params = {"lambda": lambda_, "p": p, "n": grid.dim, "h": grid.spacing}
    if seed is not None:
        params["seed"] = seed
    logger.info(f"Polya-Szego lambda={lambda_} p={p}: {lhs:.6g} vs {rhs:.6g} (margin {margin:.3e})")
    return VerificationReport(
        experiment="polya_szego", params=params, lhs=lhs, rhs=rhs, tolerance=tolerance, metadata=metadata
    )


def _outside_distance(grid: MaskedGrid) -> np.ndarray:
    """Distance from every cell center to the nearest cell beyond the outer boundary."""
    outside = ~grid.padded_domain & ~grid.padded_obstacle
    distance = ndimage.distance_transform_edt(~outside) * grid.spacing
    return distance[tuple(slice(1, -1) for _ in range(grid.dim))]


def random_bump_field(grid: MaskedGrid, rng: np.random.Generator, bumps: int = 4) -> np.ndarray:
    """
    Smooth non-negative field vanishing on Dirichlet cells.

    A sum of ``bumps`` quartic bumps at random domain points, multiplied by a
    cut-off that is 0 within one cell of the outer boundary.
    """
    points = grid.domain_points()
    lo, hi = points.min(axis=0), points.max(axis=0)
    diameter = float(np.max(hi - lo)) + grid.spacing
    distance = _outside_distance(grid)
    reach = max(0.25 * float(np.max(distance)), grid.spacing)
    cutoff = np.clip((distance - grid.spacing) / reach, 0.0, 1.0) ** 2

    centers = points[rng.integers(0, points.shape[0], size=bumps)]
    widths = rng.uniform(0.2, 0.6, size=bumps) * diameter
    heights = rng.uniform(0.5, 1.5, size=bumps)
    total = np.zeros(grid.shape)
    for center, width, height in zip(centers, widths, heights):
        r2 = np.sum((grid.centers - center) ** 2, axis=-1) / width**2
        total += height * np.clip(1.0 - r2, 0.0, None) ** 2
    values = np.where(grid.domain_mask, total * cutoff, 0.0)
    if not np.any(values > 0.0):
        values = np.where(grid.domain_mask, cutoff, 0.0)
    return values


def polya_szego_suite(
    grid: MaskedGrid,
    lambda_: float,
    p: float,
    drift: Optional[Any] = None,
    fields: int = 10,
    seed: int = 0,
    c_grid: Optional[float] = None,
) -> List[VerificationReport]:
    """Polya-Szego checks on random bump fields seeded with seed + index."""
    reports = []
    for index in range(fields):
        rng = make_rng(seed + index)
        u = random_bump_field(grid, rng)
        reports.append(polya_szego_check(u, grid, lambda_, p, drift, c_grid=c_grid, seed=seed + index))
    failed = sum(not report.passed for report in reports)
    logger.info(f"Polya-Szego suite lambda={lambda_} p={p}: {fields - failed}/{fields} passed")
    return reports


def equimeasurability_check(
    u: np.ndarray,
    grid: MaskedGrid,
    lambda_: float,
    qs: Sequence[float] = (1.0, 2.0, 5.0, math.inf),
    c_grid: Optional[float] = None,
) -> VerificationReport:
    """
    L^q norms of u against those of u* for several q.

    u* is sampled on the equal-volume cap grid and its grid norms are compared
    with those of u within tol(h). The exact profile norms are reported alongside.
    """
    profile = capillary_symmetrize(u, grid, lambda_)
    errors, profile_errors, sampled = {}, {}, {}
    cap = cap_grid(grid.volume, lambda_, grid.dim, grid.spacing)
    u_star = np.zeros(cap.shape)
    u_star[cap.domain_mask] = profile.evaluate(cap.domain_points())
    for q in qs:
        original = grid_norm(u, grid, q)
        key = "inf" if math.isinf(q) else f"{q:g}"
        sampled[key] = grid_norm(u_star, cap, q)
        errors[key] = _relative_error(original, sampled[key])
        profile_errors[key] = _relative_error(original, profile.norm(q))
    worst = max(max(errors.values()), max(profile_errors.values()))
    levels = distribution(u, grid).thresholds
    recomputed = profile.distribution(levels).measures
    direct = distribution(u, grid, levels).measures
    return VerificationReport(
        experiment="rearrange",
        params={"lambda": lambda_, "n": grid.dim, "h": grid.spacing},
        lhs=-worst,
        rhs=0.0,
        tolerance=grid_tolerance(grid.spacing, c_grid=c_grid),
        metadata={
            "relative_norm_errors": errors,
            "profile_norm_errors": profile_errors,
            "profile_exact": max(profile_errors.values()) <= 1e-6,
            "sampled_cap_norms": sampled,
            "distribution_max_error": float(np.max(np.abs(recomputed - direct))),
            "cap_radius": profile.r_max,
            "cap_volume": cap.volume,
        },
    )


def _relative_error(reference: float, value: float) -> float:
    return abs(reference - value) / reference if reference > 0.0 else abs(value)
