"""
Convex obstacles, masked grids and capillary perimeters.

A domain is the part of a bounded outer region that lies outside a convex
obstacle E. It is discretized on a uniform cell-centered grid; every cell is
classified as exterior, interior, Dirichlet boundary (next to the outer
boundary) or Neumann boundary (next to the obstacle).
"""

import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, Dict, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import integrate, ndimage, optimize, special

from .config import settings
from .errors import DomainError, GaugeError
from .gauge import GaugeDescriptor, GaugeKind, dual_values, gauge_values, wulff_ball_volume
from .models import VerificationReport
from .surface import Surface, extract_surface
from .utils import as_points, grid_tolerance

# Configure logging
logger = logging.getLogger(__name__)

EXTERIOR = 0
INTERIOR = 1
DIRICHLET = 2
NEUMANN = 3

CLASS_CHARS = {EXTERIOR: ".", INTERIOR: "i", DIRICHLET: "d", NEUMANN: "n"}
CHAR_CLASSES = {char: code for code, char in CLASS_CHARS.items()}

# Neighbor states returned by MaskedGrid.neighbor_state
IN_DOMAIN = 0
IN_OBSTACLE = 1
OUTSIDE = 2

ArrayLike = Union[Sequence[float], np.ndarray]


def unit_ball_volume(n: int) -> float:
    """Volume v_n of the Euclidean unit ball in R^n."""
    return float(math.pi ** (n / 2.0) / special.gamma(n / 2.0 + 1.0))


def sphere_area(n: int) -> float:
    """Area of the unit sphere S^{n-1} in R^n."""
    return float(2.0 * math.pi ** (n / 2.0) / special.gamma(n / 2.0))


# Obstacles and outer regions


@dataclass(frozen=True)
class ConvexObstacle:
    """
    Convex obstacle E.

    ``halfspace``: E = {<normal, x> <= offset}
    ``ball``:      E = {|x - center| <= radius}
    ``polytope``:  intersection of half-spaces
    """

    kind: str
    dim: int
    normals: Optional[np.ndarray] = None
    offsets: Optional[np.ndarray] = None
    center: Optional[np.ndarray] = None
    radius: float = 0.0

    @classmethod
    def half_space(cls, normal: ArrayLike, offset: float = 0.0) -> "ConvexObstacle":
        vector = np.asarray(normal, dtype=float)
        length = float(np.linalg.norm(vector))
        if length == 0.0:
            raise DomainError("half-space normal must be nonzero")
        return cls("halfspace", vector.size, (vector / length)[None, :], np.array([offset / length]))

    @classmethod
    def ball(cls, center: ArrayLike, radius: float) -> "ConvexObstacle":
        if not radius > 0.0:
            raise DomainError(f"ball obstacle radius must be > 0, got {radius}")
        point = np.asarray(center, dtype=float)
        return cls("ball", point.size, center=point, radius=float(radius))

    @classmethod
    def polytope(cls, normals: Sequence[ArrayLike], offsets: Sequence[float]) -> "ConvexObstacle":
        matrix = np.atleast_2d(np.asarray(normals, dtype=float))
        bounds = np.asarray(offsets, dtype=float).reshape(-1)
        if matrix.shape[0] == 0 or matrix.shape[0] != bounds.size:
            raise DomainError("polytope needs a nonempty list of half-spaces with matching offsets")
        lengths = np.linalg.norm(matrix, axis=1)
        if np.any(lengths == 0.0):
            raise DomainError("polytope normals must be nonzero")
        return cls("polytope", matrix.shape[1], matrix / lengths[:, None], bounds / lengths)

    @property
    def axis_plane(self) -> Optional[Tuple[int, float, float]]:
        """(axis, sign, offset) when E is a half-space with normal +-e_axis."""
        if self.kind != "halfspace":
            return None
        normal = self.normals[0]
        axis = int(np.argmax(np.abs(normal)))
        if abs(abs(normal[axis]) - 1.0) > 1e-14:
            return None
        return axis, float(np.sign(normal[axis])), float(self.offsets[0])

    def signed_distance(self, points: ArrayLike) -> np.ndarray:
        """Convex function that is <= 0 exactly on E (true distance for half-space and ball)."""
        x = as_points(points, self.dim)
        if self.kind == "ball":
            return np.linalg.norm(x - self.center, axis=1) - self.radius
        return np.max(x @ self.normals.T - self.offsets, axis=1)

    def normals_at(self, points: ArrayLike) -> np.ndarray:
        """Unit gradient of the signed distance (outward normal of E)."""
        x = as_points(points, self.dim)
        if self.kind == "ball":
            offset = x - self.center
            length = np.linalg.norm(offset, axis=1, keepdims=True)
            return np.divide(offset, length, out=np.zeros_like(offset), where=length > 0)
        active = np.argmax(x @ self.normals.T - self.offsets, axis=1)
        return self.normals[active]

    def contains(self, points: ArrayLike) -> np.ndarray:
        return self.signed_distance(points) <= 0.0

    def facet_widths(self) -> np.ndarray:
        """
        Diameter of the largest disk inscribed in each polytope facet.

        Each facet's Chebyshev center is found by a linear program inside its
        hyperplane. Unbounded facets give inf and empty ones nan.
        """
        box = 1e6
        if self.kind != "polytope":
            return np.full(1 if self.kind == "halfspace" else 0, np.inf)
        count = len(self.offsets)
        widths = np.full(count, np.inf)
        objective = np.zeros(self.dim + 1)
        objective[-1] = -1.0
        bounds = [(-box, box)] * self.dim + [(0.0, box)]
        for i, normal in enumerate(self.normals):
            others = np.arange(count) != i
            if not np.any(others):
                continue
            tangential = self.normals[others] - np.outer(self.normals[others] @ normal, normal)
            result = optimize.linprog(
                objective,
                A_ub=np.column_stack([self.normals[others], np.linalg.norm(tangential, axis=1)]),
                b_ub=self.offsets[others],
                A_eq=np.append(normal, 0.0)[None, :],
                b_eq=[self.offsets[i]],
                bounds=bounds,
                method="highs",
            )
            if result.status != 0:
                widths[i] = np.nan
            elif result.x[-1] < 1e-3 * box:
                widths[i] = 2.0 * result.x[-1]
        return widths


@dataclass(frozen=True)
class OuterRegion:
    """Bounded region whose part outside the obstacle is the domain."""

    kind: str
    dim: int
    lo: Optional[np.ndarray] = None
    hi: Optional[np.ndarray] = None
    center: Optional[np.ndarray] = None
    radius: float = 0.0
    notch_lo: Optional[np.ndarray] = None
    notch_hi: Optional[np.ndarray] = None
    lambda_: float = 0.0

    @classmethod
    def box(cls, lo: ArrayLike, hi: ArrayLike) -> "OuterRegion":
        lo_arr, hi_arr = np.asarray(lo, dtype=float), np.asarray(hi, dtype=float)
        if lo_arr.shape != hi_arr.shape or np.any(hi_arr <= lo_arr):
            raise DomainError("box needs lo < hi componentwise")
        return cls("box", lo_arr.size, lo=lo_arr, hi=hi_arr)

    @classmethod
    def ball(cls, center: ArrayLike, radius: float) -> "OuterRegion":
        if not radius > 0.0:
            raise DomainError(f"outer ball radius must be > 0, got {radius}")
        point = np.asarray(center, dtype=float)
        return cls("ball", point.size, center=point, radius=float(radius))

    @classmethod
    def lshape(
        cls, lo: ArrayLike, hi: ArrayLike, notch_lo: ArrayLike, notch_hi: ArrayLike
    ) -> "OuterRegion":
        """Box [lo, hi] with the box [notch_lo, notch_hi] removed."""
        outer = cls.box(lo, hi)
        return cls(
            "lshape",
            outer.dim,
            lo=outer.lo,
            hi=outer.hi,
            notch_lo=np.asarray(notch_lo, dtype=float),
            notch_hi=np.asarray(notch_hi, dtype=float),
        )

    @classmethod
    def cap(cls, radius: float, lambda_: float, dim: int) -> "OuterRegion":
        """Ball B_r(-r lambda e_n); its part in {x_n > 0} is the cap."""
        if not -1.0 < lambda_ < 1.0:
            raise GaugeError("lambda must lie strictly inside (-1,1)")
        center = np.zeros(dim)
        center[-1] = -radius * lambda_
        outer = cls.ball(center, radius)
        return cls("cap", dim, center=outer.center, radius=outer.radius, lambda_=lambda_)

    def bounds(self) -> Tuple[np.ndarray, np.ndarray]:
        if self.kind in ("ball", "cap"):
            return self.center - self.radius, self.center + self.radius
        return self.lo.copy(), self.hi.copy()

    def contains(self, points: ArrayLike) -> np.ndarray:
        x = as_points(points, self.dim)
        if self.kind in ("ball", "cap"):
            return np.linalg.norm(x - self.center, axis=1) < self.radius
        inside = np.all((x > self.lo) & (x < self.hi), axis=1)
        if self.kind == "lshape":
            notch = np.all((x > self.notch_lo) & (x < self.notch_hi), axis=1)
            inside &= ~notch
        return inside


# Masked grid


@dataclass
class MaskedGrid:
    """Cell-centered grid with per-cell classification."""

    dim: int
    spacing: float
    origin: np.ndarray
    cell_class: np.ndarray
    obstacle: Optional[ConvexObstacle] = None
    outer: Optional[OuterRegion] = None
    padded_obstacle: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        self.origin = np.asarray(self.origin, dtype=float)
        self.cell_class = np.asarray(self.cell_class, dtype=np.int8)
        if self.padded_obstacle is None:
            self.padded_obstacle = self._obstacle_from_neumann()

    @property
    def shape(self) -> Tuple[int, ...]:
        return tuple(int(d) for d in self.cell_class.shape)

    @property
    def cell_volume(self) -> float:
        return self.spacing**self.dim

    @cached_property
    def domain_mask(self) -> np.ndarray:
        return self.cell_class != EXTERIOR

    @cached_property
    def padded_domain(self) -> np.ndarray:
        return np.pad(self.domain_mask, 1)

    @property
    def dirichlet_mask(self) -> np.ndarray:
        return self.cell_class == DIRICHLET

    @property
    def neumann_mask(self) -> np.ndarray:
        return self.cell_class == NEUMANN

    @property
    def cell_count(self) -> int:
        return int(np.count_nonzero(self.domain_mask))

    @property
    def volume(self) -> float:
        """|Omega| as cell count times h^n."""
        return self.cell_count * self.cell_volume

    def axis_coordinates(self, axis: int) -> np.ndarray:
        return self.origin[axis] + (np.arange(self.shape[axis]) + 0.5) * self.spacing

    @cached_property
    def centers(self) -> np.ndarray:
        """Cell centers, shape grid.shape + (n,)."""
        axes = [self.axis_coordinates(k) for k in range(self.dim)]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)

    def domain_points(self) -> np.ndarray:
        """Centers of domain cells in row-major order, shape (m, n)."""
        return self.centers[self.domain_mask]

    def point_to_index(self, points: ArrayLike) -> np.ndarray:
        """Fractional cell indices (center of cell i at index i)."""
        return (as_points(points, self.dim) - self.origin) / self.spacing - 0.5

    def neighbor_state(self, axis: int, step: int) -> np.ndarray:
        """
        State of the axis neighbor of every cell.

        Returns:
            Array of grid.shape with IN_DOMAIN, IN_OBSTACLE or OUTSIDE
        """
        index = [slice(1, -1)] * self.dim
        index[axis] = slice(1 + step, self.shape[axis] + 1 + step)
        index = tuple(index)
        state = np.full(self.shape, OUTSIDE, dtype=np.int8)
        state[self.padded_obstacle[index]] = IN_OBSTACLE
        state[self.padded_domain[index]] = IN_DOMAIN
        return state

    def cell_gradients(self, values: np.ndarray, zero_outside: bool = False) -> np.ndarray:
        """
        Per-cell gradient by central differences, one-sided where a neighbor is missing.

        Args:
            values: Field with the grid's shape
            zero_outside: Treat cells beyond the outer boundary as carrying 0
                (zero extension across Dirichlet faces); obstacle cells are
                always missing

        Returns:
            Array of shape grid.shape + (n,), zero outside the domain
        """
        values = np.where(self.domain_mask, np.asarray(values, dtype=float), 0.0)
        padded = np.pad(values, 1)
        grads = np.zeros(self.shape + (self.dim,))
        for axis in range(self.dim):
            ahead_state = self.neighbor_state(axis, 1)
            behind_state = self.neighbor_state(axis, -1)
            has_ahead = ahead_state == IN_DOMAIN
            has_behind = behind_state == IN_DOMAIN
            if zero_outside:
                has_ahead |= ahead_state == OUTSIDE
                has_behind |= behind_state == OUTSIDE
            ahead = _neighbor(padded, axis, 1, self.shape)
            behind = _neighbor(padded, axis, -1, self.shape)
            central = (ahead - behind) / (2.0 * self.spacing)
            forward = (ahead - values) / self.spacing
            backward = (values - behind) / self.spacing
            grads[..., axis] = np.where(
                has_ahead & has_behind,
                central,
                np.where(has_ahead, forward, np.where(has_behind, backward, 0.0)),
            )
        grads[~self.domain_mask] = 0.0
        return grads

    @cached_property
    def _nearest_domain_cell(self) -> Tuple[np.ndarray, ...]:
        _, nearest = ndimage.distance_transform_edt(~self.domain_mask, return_indices=True)
        return tuple(nearest)

    def interpolate(self, cell_values: np.ndarray, points: ArrayLike) -> np.ndarray:
        """
        Linear interpolation of per-cell values at points.

        Non-domain cells take the value of their nearest domain cell first.
        ``cell_values`` has shape grid.shape or grid.shape + (k,).
        """
        filled = np.asarray(cell_values, dtype=float)[self._nearest_domain_cell]
        index = self.point_to_index(points).T
        if filled.ndim == self.dim:
            return ndimage.map_coordinates(filled, index, order=1, mode="nearest")
        return np.stack(
            [ndimage.map_coordinates(filled[..., k], index, order=1, mode="nearest") for k in range(filled.shape[-1])],
            axis=1,
        )

    def obstacle_distance(self, points: ArrayLike) -> np.ndarray:
        """Signed distance to E; interpolated from the cell marks when E is unknown."""
        if self.obstacle is not None:
            return self.obstacle.signed_distance(points)
        if not np.any(self.padded_obstacle):
            return np.full(as_points(points, self.dim).shape[0], np.inf)
        index = self.point_to_index(points) + 1.0
        marks = ndimage.map_coordinates(self.padded_obstacle.astype(float), index.T, order=1, mode="nearest")
        return self.spacing * (1.0 - 2.0 * marks)

    def obstacle_normals(self, points: ArrayLike) -> np.ndarray:
        """Outward normals of E; falls back to the gradient of the cell marks."""
        if self.obstacle is not None:
            return self.obstacle.normals_at(points)
        smooth = ndimage.gaussian_filter(self.padded_obstacle.astype(float), 1.0)
        index = self.point_to_index(points) + 1.0
        grad = np.stack(
            [
                ndimage.map_coordinates(np.gradient(smooth, axis=k), index.T, order=1, mode="nearest")
                for k in range(self.dim)
            ],
            axis=1,
        )
        length = np.linalg.norm(grad, axis=1, keepdims=True)
        return np.divide(-grad, length, out=np.zeros_like(grad), where=length > 0)

    @cached_property
    def face_inventory(self) -> Dict[str, int]:
        """Counts of contact faces (domain|obstacle) and Dirichlet faces (domain|outside)."""
        contact = dirichlet = 0
        domain = self.domain_mask
        for axis in range(self.dim):
            for step in (-1, 1):
                state = self.neighbor_state(axis, step)[domain]
                contact += int(np.count_nonzero(state == IN_OBSTACLE))
                dirichlet += int(np.count_nonzero(state == OUTSIDE))
        return {
            "contact_faces": contact,
            "dirichlet_faces": dirichlet,
            "interior_cells": int(np.count_nonzero(self.cell_class == INTERIOR)),
            "dirichlet_cells": int(np.count_nonzero(self.cell_class == DIRICHLET)),
            "neumann_cells": int(np.count_nonzero(self.cell_class == NEUMANN)),
        }

    def _obstacle_from_neumann(self) -> np.ndarray:
        neumann = np.pad(self.cell_class == NEUMANN, 1)
        cross = ndimage.generate_binary_structure(self.dim, 1)
        return ndimage.binary_dilation(neumann, structure=cross) & ~np.pad(self.domain_mask, 1)

    def to_text(self) -> str:
        """Serialize to the ``capsym-grid v1`` text format."""
        dims = ",".join(str(d) for d in self.shape)
        origin = ",".join(repr(float(x)) for x in self.origin)
        header = f"capsym-grid v1 n={self.dim} h={self.spacing!r} dims={dims} origin={origin}"
        chars = np.vectorize(CLASS_CHARS.get)(self.cell_class).reshape(-1, self.shape[-1])
        rows = ["".join(row) for row in chars]
        return "\n".join([header] + rows) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "MaskedGrid":
        """Parse the ``capsym-grid v1`` format; the obstacle is reconstructed from Neumann cells."""
        lines = text.strip().splitlines()
        if not lines or not lines[0].startswith("capsym-grid v1"):
            raise DomainError("not a capsym-grid v1 file")
        fields = {}
        for token in lines[0].split()[2:]:
            key, _, value = token.partition("=")
            fields[key] = value
        try:
            dim = int(fields["n"])
            spacing = float(fields["h"])
            dims = tuple(int(d) for d in fields["dims"].split(","))
            origin = (
                np.array([float(x) for x in fields["origin"].split(",")])
                if "origin" in fields
                else np.zeros(dim)
            )
        except (KeyError, ValueError) as e:
            raise DomainError(f"invalid grid header: {lines[0]!r}") from e
        body = "".join("".join(line.split()) for line in lines[1:])
        if len(body) != int(np.prod(dims)) or len(dims) != dim:
            raise DomainError(f"grid body has {len(body)} cells, header declares {dims}")
        try:
            codes = np.array([CHAR_CLASSES[c] for c in body], dtype=np.int8).reshape(dims)
        except KeyError as e:
            raise DomainError(f"unknown cell class character {e}") from e
        return cls(dim=dim, spacing=spacing, origin=origin, cell_class=codes)


def _neighbor(padded: np.ndarray, axis: int, step: int, shape: Tuple[int, ...]) -> np.ndarray:
    index = [slice(1, -1)] * len(shape)
    index[axis] = slice(1 + step, shape[axis] + 1 + step)
    return padded[tuple(index)]


def _grid_frame(
    obstacle: Optional[ConvexObstacle], outer: OuterRegion, spacing: float
) -> Tuple[np.ndarray, Tuple[int, ...]]:
    """Origin and cell counts covering the outer region, aligned to an axis plane of E."""
    lo, hi = outer.bounds()
    origin = lo.copy()
    dims = np.ceil((hi - lo) / spacing - 1e-9).astype(int)
    plane = obstacle.axis_plane if obstacle is not None else None
    if plane is not None:
        axis, sign, offset = plane
        # E = {sign * x_axis <= offset}; the domain side starts at the plane
        wall = sign * offset
        if sign > 0 and lo[axis] < wall < hi[axis]:
            origin[axis] = wall
            dims[axis] = int(np.ceil((hi[axis] - wall) / spacing - 1e-9))
        elif sign < 0 and lo[axis] < wall < hi[axis]:
            dims[axis] = int(np.ceil((wall - lo[axis]) / spacing - 1e-9))
            origin[axis] = wall - dims[axis] * spacing
        elif sign > 0 and wall <= lo[axis]:
            shift = np.floor((lo[axis] - wall) / spacing)
            origin[axis] = wall + shift * spacing
            dims[axis] = int(np.ceil((hi[axis] - origin[axis]) / spacing - 1e-9))
    return origin, tuple(int(d) for d in np.maximum(dims, 1))


def build_domain(
    obstacle: Optional[ConvexObstacle], outer: OuterRegion, spacing: float
) -> MaskedGrid:
    """
    Discretize Omega = outer minus E.

    Args:
        obstacle: Convex obstacle E (None for a plain outer region)
        outer: Bounded outer region
        spacing: Grid spacing h

    Returns:
        Classified MaskedGrid

    Raises:
        DomainError: Empty, disconnected or under-resolved domain
    """
    if not spacing > 0.0:
        raise DomainError(f"spacing must be > 0, got {spacing}")
    dim = outer.dim
    if dim not in (2, 3):
        raise DomainError(f"grids support n = 2 or 3, got {dim}")
    if obstacle is not None:
        if obstacle.dim != dim:
            raise DomainError(f"obstacle dimension {obstacle.dim} does not match outer dimension {dim}")
        if obstacle.kind == "ball" and 2.0 * obstacle.radius / spacing < 8.0:
            raise DomainError(
                f"under-resolved obstacle: 2R/h = {2.0 * obstacle.radius / spacing:.3g} < 8 cells"
            )
        if obstacle.kind == "polytope":
            widths = obstacle.facet_widths()
            narrow = widths[(widths > 1e-12) & (widths < 2.0 * spacing)]
            if narrow.size:
                raise DomainError(
                    f"under-resolved obstacle: facet width {float(np.min(narrow)):.3g} < 2h = {2.0 * spacing:.3g}"
                )

    origin, dims = _grid_frame(obstacle, outer, spacing)
    padded_shape = tuple(d + 2 for d in dims)
    axes = [origin[k] + (np.arange(-1, dims[k] + 1) + 0.5) * spacing for k in range(dim)]
    centers = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, dim)

    in_outer = outer.contains(centers).reshape(padded_shape)
    if obstacle is not None:
        in_obstacle = obstacle.contains(centers).reshape(padded_shape)
    else:
        in_obstacle = np.zeros(padded_shape, dtype=bool)
    domain = in_outer & ~in_obstacle
    ring = np.ones(padded_shape, dtype=bool)
    ring[tuple(slice(1, -1) for _ in range(dim))] = False
    domain[ring] = False

    inner = domain[tuple(slice(1, -1) for _ in range(dim))]
    if not np.any(inner):
        raise DomainError("empty domain")

    touches_obstacle = np.zeros(dims, dtype=bool)
    touches_outside = np.zeros(dims, dtype=bool)
    for axis in range(dim):
        for step in (-1, 1):
            nb_domain = _neighbor(domain, axis, step, dims)
            nb_obstacle = _neighbor(in_obstacle, axis, step, dims)
            touches_obstacle |= ~nb_domain & nb_obstacle
            touches_outside |= ~nb_domain & ~nb_obstacle

    cell_class = np.full(dims, EXTERIOR, dtype=np.int8)
    cell_class[inner] = INTERIOR
    cell_class[inner & touches_outside] = DIRICHLET
    cell_class[inner & touches_obstacle] = NEUMANN

    labels, count = ndimage.label(inner, structure=ndimage.generate_binary_structure(dim, 1))
    if count > 1:
        raise DomainError(f"disconnected domain: {count} components")

    grid = MaskedGrid(
        dim=dim,
        spacing=float(spacing),
        origin=origin,
        cell_class=cell_class,
        obstacle=obstacle,
        outer=outer,
        padded_obstacle=in_obstacle & ~domain,
    )
    logger.info(
        f"Built {dim}D grid {dims} h={spacing:.6g}: {grid.cell_count} cells, |Omega|={grid.volume:.6g}, "
        f"{grid.face_inventory['contact_faces']} contact / {grid.face_inventory['dirichlet_faces']} Dirichlet faces"
    )
    return grid


# Caps


def cap_constant(lambda_: float, n: int) -> float:
    """
    kappa_lambda = |B_1(-lambda e_n) intersected with {x_n > 0}|.

    Closed forms for n = 2, 3; adaptive quadrature (absolute tolerance 1e-10) otherwise.
    """
    if not -1.0 < lambda_ < 1.0:
        raise GaugeError("lambda must lie strictly inside (-1,1)")
    if n < 2:
        raise DomainError(f"cap constant needs n >= 2, got {n}")
    if n == 2:
        return math.acos(lambda_) - lambda_ * math.sqrt(1.0 - lambda_ * lambda_)
    if n == 3:
        return math.pi * (1.0 - lambda_) ** 2 * (2.0 + lambda_) / 3.0
    slice_volume = unit_ball_volume(n - 1)
    value, _ = integrate.quad(
        lambda t: slice_volume * (1.0 - t * t) ** ((n - 1) / 2.0), lambda_, 1.0, epsabs=1e-10, epsrel=1e-12
    )
    return float(value)


def cap_radius_for_volume(volume: float, lambda_: float, n: int) -> float:
    """Radius r with kappa_lambda * r^n = volume."""
    if volume < 0.0:
        raise DomainError(f"volume must be >= 0, got {volume}")
    if volume == 0.0:
        return 0.0
    return (volume / cap_constant(lambda_, n)) ** (1.0 / n)


@dataclass(frozen=True)
class CapGeometry:
    """Spherical cap B_r(-r lambda e_n) in the upper half-space."""

    lambda_: float
    dim: int
    radius: float
    kappa_lambda: float

    @classmethod
    def from_radius(cls, lambda_: float, dim: int, radius: float) -> "CapGeometry":
        return cls(lambda_, dim, float(radius), cap_constant(lambda_, dim))

    @classmethod
    def from_volume(cls, volume: float, lambda_: float, dim: int) -> "CapGeometry":
        return cls.from_radius(lambda_, dim, cap_radius_for_volume(volume, lambda_, dim))

    @property
    def volume(self) -> float:
        return self.kappa_lambda * self.radius**self.dim


class CapPerimeter(NamedTuple):
    curved: float
    flat: float
    energy: float


def cap_perimeter(lambda_: float, n: int, r: float) -> CapPerimeter:
    """Curved area, flat (wetted) area and capillary energy of B_r^+(-r lambda e_n)."""
    kappa = cap_constant(lambda_, n)
    if n == 2:
        curved = 2.0 * r * math.acos(lambda_)
        flat = 2.0 * r * math.sqrt(1.0 - lambda_ * lambda_)
    elif n == 3:
        curved = 2.0 * math.pi * r * r * (1.0 - lambda_)
        flat = math.pi * r * r * (1.0 - lambda_ * lambda_)
    else:
        angle, _ = integrate.quad(lambda t: math.sin(t) ** (n - 2), 0.0, math.acos(lambda_))
        curved = sphere_area(n - 1) * angle * r ** (n - 1)
        flat = unit_ball_volume(n - 1) * (1.0 - lambda_ * lambda_) ** ((n - 1) / 2.0) * r ** (n - 1)
    energy = n * kappa * r ** (n - 1)
    return CapPerimeter(curved=curved, flat=flat, energy=energy)


def cap_coordinate(points: ArrayLike, lambda_: float) -> np.ndarray:
    """
    Cap radius rho(x): the unique rho with |x + rho lambda e_n| = rho.

    Equals the dual gauge F_lambda^o(x), whose unit ball is B_1(-lambda e_n).
    """
    x = np.atleast_2d(np.asarray(points, dtype=float))
    a = np.zeros(x.shape[-1])
    a[-1] = -lambda_
    return dual_values(x, a)


def cap_grid(volume: float, lambda_: float, n: int, spacing: float) -> MaskedGrid:
    """Grid of the cap of the given volume resting on the half-space {x_n <= 0}."""
    radius = cap_radius_for_volume(volume, lambda_, n)
    if radius == 0.0:
        raise DomainError("empty domain")
    normal = np.zeros(n)
    normal[-1] = 1.0
    return build_domain(ConvexObstacle.half_space(normal, 0.0), OuterRegion.cap(radius, lambda_, n), spacing)


# Perimeters


class PerimeterSplit(NamedTuple):
    free: float
    wet: float
    energy: float
    contact_facet_area: float


def _set_surface(set_field: np.ndarray, grid: MaskedGrid, level: Optional[float]) -> Surface:
    values = np.asarray(set_field)
    if values.shape != grid.shape:
        raise DomainError(f"set shape {values.shape} does not match grid shape {grid.shape}")
    if values.dtype == bool:
        if np.any(values & ~grid.domain_mask):
            raise DomainError("set must lie inside the domain")
        return extract_surface(values.astype(float), grid, 0.5)
    return extract_surface(values, grid, 0.0 if level is None else level)


def _set_mask(set_field: np.ndarray, grid: MaskedGrid, level: Optional[float] = None) -> np.ndarray:
    values = np.asarray(set_field)
    inside = values if values.dtype == bool else values > (0.0 if level is None else level)
    return inside & grid.domain_mask


def set_volume(set_field: np.ndarray, grid: MaskedGrid, level: Optional[float] = None) -> float:
    """Cell-count volume of a set given as an indicator or as {field > level}."""
    return float(np.count_nonzero(_set_mask(set_field, grid, level))) * grid.cell_volume


def capillary_perimeter(
    set_field: np.ndarray, grid: MaskedGrid, lambda_: float, level: Optional[float] = None
) -> PerimeterSplit:
    """
    Capillary energy P - lambda * wet of a set.

    Args:
        set_field: Boolean indicator, or a smooth field whose set is {field > level}
        grid: Grid the set lives on
        lambda_: Contact parameter
        level: Threshold for smooth fields (default 0)

    Returns:
        PerimeterSplit(free, wet, energy, contact_facet_area)
    """
    if not -1.0 < lambda_ < 1.0:
        raise GaugeError("lambda must lie strictly inside (-1,1)")
    surface = _set_surface(set_field, grid, level)
    if surface.size == 0:
        return PerimeterSplit(0.0, 0.0, 0.0, 0.0)
    free = surface.free().total_area()
    raw_contact = surface.contact_part().total_area()
    wet = surface.projected_contact_area(grid.obstacle_normals)
    return PerimeterSplit(free=free, wet=wet, energy=free - lambda_ * wet, contact_facet_area=raw_contact)


def anisotropic_perimeter(
    set_field: np.ndarray,
    grid: MaskedGrid,
    g: GaugeDescriptor,
    level: Optional[float] = None,
    free_only: bool = False,
) -> float:
    """
    Sum of F(nu) * area over the extracted boundary of the set.

    With ``free_only`` the facets on the obstacle are skipped.
    """
    surface = _set_surface(set_field, grid, level)
    if free_only:
        surface = surface.free()
    if surface.size == 0:
        return 0.0
    at = surface.centroids if g.kind is GaugeKind.OBSTACLE else None
    a = g.drift_vectors(at, count=surface.size)
    return float(np.sum(gauge_values(surface.normals, a) * surface.areas))


def _rigidity(margin: float, tolerance: float) -> bool:
    return abs(margin) < settings.rigidity_factor * tolerance


def isoperimetric_check(
    set_field: np.ndarray,
    grid: MaskedGrid,
    lambda_: float,
    level: Optional[float] = None,
    c_grid: Optional[float] = None,
) -> VerificationReport:
    """
    Capillary isoperimetric inequality against the equal-volume cap.

    LHS is the capillary energy of the set, RHS the energy n kappa r^(n-1) of
    the cap with the same volume.
    """
    volume = set_volume(set_field, grid, level)
    if volume == 0.0:
        raise DomainError("isoperimetric check needs a nonempty set")
    if volume > grid.volume * (1.0 + 1e-12):
        raise DomainError(f"set volume {volume:.6g} exceeds |Omega| = {grid.volume:.6g}")
    split = capillary_perimeter(set_field, grid, lambda_, level)
    radius = cap_radius_for_volume(volume, lambda_, grid.dim)
    cap = cap_perimeter(lambda_, grid.dim, radius)
    tolerance = grid_tolerance(grid.spacing, scale=cap.energy, c_grid=c_grid)
    margin = split.energy - cap.energy
    metadata = {
        "volume": volume,
        "cap_radius": radius,
        "free": split.free,
        "wet": split.wet,
        "contact_facet_area": split.contact_facet_area,
        "cap_curved": cap.curved,
        "cap_flat": cap.flat,
        "rigidity_candidate": None,
    }
    if _rigidity(margin, tolerance):
        metadata["rigidity_candidate"] = "cap on a facet"
        logger.warning(f"Isoperimetric margin {margin:.3e} within rigidity band: cap on a facet")
    return VerificationReport(
        experiment="isoperimetric",
        params={"lambda": lambda_, "n": grid.dim, "h": grid.spacing},
        lhs=split.energy,
        rhs=cap.energy,
        tolerance=tolerance,
        metadata=metadata,
    )


def anisotropic_isoperimetric_check(
    set_field: np.ndarray,
    grid: MaskedGrid,
    g: GaugeDescriptor,
    level: Optional[float] = None,
    c_grid: Optional[float] = None,
) -> VerificationReport:
    """
    Wulff inequality P_F(K) >= n kappa_F^(1/n) |K|^((n-1)/n) for sets away from E.

    kappa_F is the volume of the unit dual ball; Wulff shapes give equality.
    For the obstacle gauge the drift is frozen at the cell of K nearest its centroid when
    computing kappa_F, while the perimeter uses the drift at each boundary
    facet; the spread of the drift over the boundary goes to the metadata.
    """
    volume = set_volume(set_field, grid, level)
    if volume == 0.0:
        raise DomainError("isoperimetric check needs a nonempty set")
    surface = _set_surface(set_field, grid, level)
    if np.any(surface.contact):
        raise DomainError("anisotropic isoperimetric check needs a set away from the obstacle")
    n = grid.dim
    at = None
    metadata: Dict[str, Any] = {"volume": volume, "rigidity_candidate": None}
    if g.kind is GaugeKind.OBSTACLE:
        points = grid.centers[_set_mask(set_field, grid, level)]
        at = points[np.argmin(np.linalg.norm(points - np.mean(points, axis=0), axis=1))]
        frozen = g.drift_vectors(at[None, :], count=1)[0]
        boundary = g.drift_vectors(surface.centroids, count=surface.size)
        metadata["drift_point"] = at
        metadata["drift_spread"] = float(np.max(np.linalg.norm(boundary - frozen, axis=1), initial=0.0))
    lhs = anisotropic_perimeter(set_field, grid, g, level)
    kappa = wulff_ball_volume(g, at)
    rhs = n * kappa ** (1.0 / n) * volume ** ((n - 1.0) / n)
    tolerance = grid_tolerance(grid.spacing, scale=rhs, c_grid=c_grid)
    metadata["wulff_volume"] = kappa
    if _rigidity(lhs - rhs, tolerance):
        metadata["rigidity_candidate"] = "Wulff shape"
    return VerificationReport(
        experiment="isoperimetric",
        params={"lambda": g.lambda_, "n": n, "h": grid.spacing, "gauge": g.kind.value},
        lhs=lhs,
        rhs=rhs,
        tolerance=tolerance,
        metadata=metadata,
    )
