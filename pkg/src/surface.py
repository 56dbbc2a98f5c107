"""
Surface extraction for super-level sets on masked grids.

The boundary of ``{field > level}`` restricted to the domain cells of a
:class:`~src.geometry.MaskedGrid` is extracted with marching squares (n = 2)
or marching cubes (n = 3) from scikit-image. Cells outside the domain are
filled with values below ``level`` so that every extracted surface is closed;
facets lying on the obstacle are flagged as contact facets.
"""

import logging
from dataclasses import dataclass
from typing import TYPE_CHECKING, Callable, Optional

import numpy as np
from scipy import ndimage
from skimage import measure

from .errors import DomainError

if TYPE_CHECKING:
    from .geometry import MaskedGrid

# Configure logging
logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Surface:
    """Polygonal surface: segments (n = 2) or triangles (n = 3)."""

    centroids: np.ndarray
    normals: np.ndarray
    areas: np.ndarray
    contact: np.ndarray

    @classmethod
    def empty(cls, dim: int) -> "Surface":
        return cls(
            centroids=np.zeros((0, dim)),
            normals=np.zeros((0, dim)),
            areas=np.zeros(0),
            contact=np.zeros(0, dtype=bool),
        )

    @property
    def size(self) -> int:
        return int(self.areas.shape[0])

    def subset(self, mask: np.ndarray) -> "Surface":
        return Surface(self.centroids[mask], self.normals[mask], self.areas[mask], self.contact[mask])

    def free(self) -> "Surface":
        """Facets away from the obstacle."""
        return self.subset(~self.contact)

    def contact_part(self) -> "Surface":
        return self.subset(self.contact)

    def total_area(self) -> float:
        return float(np.sum(self.areas))

    def projected_contact_area(self, obstacle_normals: Callable[[np.ndarray], np.ndarray]) -> float:
        """
        Contact area measured on the obstacle boundary.

        Args:
            obstacle_normals: Maps (m, n) points to unit normals of the obstacle

        Returns:
            Sum of A * |nu . n_E| over contact facets
        """
        part = self.contact_part()
        if part.size == 0:
            return 0.0
        n_e = obstacle_normals(part.centroids)
        return float(np.sum(part.areas * np.abs(np.sum(part.normals * n_e, axis=1))))


def padded_field(field: np.ndarray, grid: "MaskedGrid", level: float) -> np.ndarray:
    """
    Field on the padded grid with non-domain cells set below ``level``.

    A non-domain cell next to domain cells gets ``level - d``, where ``d`` is the
    largest excess ``field - level`` among its axis neighbors. A crossing between
    a domain cell and such a cell then sits at the shared face, which places
    contact facets on the obstacle boundary.
    """
    values = np.asarray(field, dtype=float)
    if values.shape != grid.shape:
        raise DomainError(f"field shape {values.shape} does not match grid shape {grid.shape}")
    domain = grid.domain_mask
    if not np.all(np.isfinite(values[domain])):
        raise DomainError("field must be finite on the domain")

    excess = np.where(domain, values - level, 0.0)
    scale = float(np.max(np.abs(excess))) if excess.size else 1.0
    scale = scale if scale > 0.0 else 1.0

    padded_excess = np.pad(np.maximum(excess, 0.0), 1)
    padded_domain = grid.padded_domain
    largest = np.zeros_like(padded_excess)
    for axis in range(grid.dim):
        for step in (-1, 1):
            largest = np.maximum(largest, np.roll(padded_excess, step, axis=axis))
    fill = level - np.where(largest > 0.0, largest, scale)

    out = np.pad(values, 1)
    out[~padded_domain] = fill[~padded_domain]
    return out


def _physical(index_points: np.ndarray, grid: "MaskedGrid") -> np.ndarray:
    # padded index p -> unpadded index p - 1 -> center origin + (p - 0.5) h
    return grid.origin + (index_points - 0.5) * grid.spacing


def _orient(
    padded: np.ndarray, index_centroids: np.ndarray, normals: np.ndarray
) -> np.ndarray:
    """Flip normals so they point toward lower field values."""
    if normals.shape[0] == 0:
        return normals
    offset = 0.25
    ahead = ndimage.map_coordinates(padded, (index_centroids + offset * normals).T, order=1, mode="nearest")
    behind = ndimage.map_coordinates(padded, (index_centroids - offset * normals).T, order=1, mode="nearest")
    flip = ahead > behind
    normals = normals.copy()
    normals[flip] *= -1.0
    return normals


def _segments(padded: np.ndarray, level: float):
    contours = measure.find_contours(padded, level)
    starts, ends = [], []
    for contour in contours:
        if contour.shape[0] < 2:
            continue
        starts.append(contour[:-1])
        ends.append(contour[1:])
    if not starts:
        return np.zeros((0, 2)), np.zeros((0, 2)), np.zeros(0)
    a = np.concatenate(starts)
    b = np.concatenate(ends)
    edge = b - a
    length = np.linalg.norm(edge, axis=1)
    keep = length > 0.0
    a, edge, length = a[keep], edge[keep], length[keep]
    centroids = a + 0.5 * edge
    normals = np.column_stack([edge[:, 1], -edge[:, 0]]) / length[:, None]
    return centroids, normals, length


def _triangles(padded: np.ndarray, level: float):
    low, high = float(np.min(padded)), float(np.max(padded))
    if not low < level < high:
        return np.zeros((0, 3)), np.zeros((0, 3)), np.zeros(0)
    try:
        verts, faces, _, _ = measure.marching_cubes(padded, level=level)
    except (ValueError, RuntimeError) as e:
        logger.debug(f"marching_cubes found no surface: {e}")
        return np.zeros((0, 3)), np.zeros((0, 3)), np.zeros(0)
    tri = verts[faces]
    cross = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    doubled = np.linalg.norm(cross, axis=1)
    keep = doubled > 0.0
    tri, cross, doubled = tri[keep], cross[keep], doubled[keep]
    return tri.mean(axis=1), cross / doubled[:, None], 0.5 * doubled


def extract_surface(
    field: np.ndarray,
    grid: "MaskedGrid",
    level: float = 0.5,
    contact_distance: Optional[float] = None,
) -> Surface:
    """
    Extract the boundary of ``{field > level}`` inside the domain.

    Args:
        field: Array with the grid's shape (boolean indicators are accepted)
        grid: Masked grid the field lives on
        level: Threshold of the super-level set
        contact_distance: Facets with obstacle signed distance below this are
            contact facets (defaults to h/2)

    Returns:
        Surface with outward unit normals and physical areas
    """
    values = np.asarray(field, dtype=float)
    padded = padded_field(values, grid, level)
    if grid.dim == 2:
        centroids, normals, areas = _segments(padded, level)
    elif grid.dim == 3:
        centroids, normals, areas = _triangles(padded, level)
    else:
        raise DomainError(f"surface extraction supports n = 2 or 3, got {grid.dim}")

    if areas.size == 0:
        return Surface.empty(grid.dim)

    normals = _orient(padded, centroids, normals)
    physical = _physical(centroids, grid)
    areas = areas * grid.spacing ** (grid.dim - 1)

    threshold = 0.5 * grid.spacing if contact_distance is None else contact_distance
    contact = grid.obstacle_distance(physical) < threshold
    logger.debug(
        f"Extracted {areas.size} facets at level {level:.6g} ({int(np.sum(contact))} on the obstacle)"
    )
    return Surface(centroids=physical, normals=normals, areas=areas, contact=contact)
