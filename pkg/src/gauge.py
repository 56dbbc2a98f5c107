"""
Gauges, their gradients and duals.

Three kinds of positively one-homogeneous convex gauges are supported:

* Euclidean ``F(xi) = |xi|``
* capillary half-space ``F_lambda(xi) = |xi| - lambda * xi_n``
* obstacle gauge ``F(xi) = |xi| + grad h(x) . xi`` with a drift field ``grad h``

All three share the form ``|xi| + a . xi`` with a drift vector ``a`` that is
zero, ``-lambda e_n`` or ``grad h`` frozen at a point. The vectorized kernels
(:func:`gauge_values`, :func:`gauge_gradients`, :func:`dual_values`) work on
that representation and are what the solvers call; the public operations wrap
them with validation.
"""

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Protocol, Sequence, Union, runtime_checkable

import numpy as np
from scipy import integrate, special

from .config import settings
from .errors import GaugeError

# Configure logging
logger = logging.getLogger(__name__)

ArrayLike = Union[Sequence[float], np.ndarray]


class GaugeKind(str, Enum):
    """Supported gauge families."""

    EUCLIDEAN = "euclidean"
    CAPILLARY_HALF_SPACE = "capillary_half_space"
    OBSTACLE = "obstacle"


@runtime_checkable
class DriftField(Protocol):
    """Anything that can report grad h at points (analytic or gridded)."""

    dim: int
    sup_grad: float

    def gradient_at(self, points: np.ndarray) -> np.ndarray:
        """Return grad h at an (m, n) array of points as an (m, n) array."""
        ...


@dataclass(frozen=True)
class GaugeDescriptor:
    """Immutable description of a gauge."""

    kind: GaugeKind
    dim: int
    lambda_: float = 0.0
    drift: Optional[DriftField] = field(default=None, compare=False)

    def __post_init__(self):
        if self.dim < 2:
            raise GaugeError(f"gauge dimension must be >= 2, got {self.dim}")
        if not -1.0 < self.lambda_ < 1.0:
            raise GaugeError("lambda must lie strictly inside (-1,1)")
        if self.drift is not None:
            if self.drift.dim != self.dim:
                raise GaugeError(
                    f"drift dimension {self.drift.dim} does not match gauge dimension {self.dim}"
                )
            if not self.drift.sup_grad < 1.0:
                raise GaugeError(
                    f"sup|grad h| = {self.drift.sup_grad:.6g} must be < 1 for a positive gauge"
                )

    @classmethod
    def euclidean(cls, dim: int) -> "GaugeDescriptor":
        return cls(GaugeKind.EUCLIDEAN, dim)

    @classmethod
    def capillary(cls, lambda_: float, dim: int) -> "GaugeDescriptor":
        return cls(GaugeKind.CAPILLARY_HALF_SPACE, dim, lambda_)

    @classmethod
    def obstacle(cls, lambda_: float, drift: Optional[DriftField], dim: Optional[int] = None) -> "GaugeDescriptor":
        if dim is None:
            if drift is None:
                raise GaugeError("obstacle gauge needs a drift field or an explicit dimension")
            dim = drift.dim
        return cls(GaugeKind.OBSTACLE, dim, lambda_, drift)

    def drift_vectors(self, at: Optional[ArrayLike] = None, count: int = 1) -> np.ndarray:
        """
        Drift vectors ``a`` such that ``F(xi) = |xi| + a . xi``.

        Args:
            at: Evaluation points, shape (m, n) or (n,); required for obstacle gauges
            count: Number of rows to return when ``at`` is not needed

        Returns:
            Array of shape (m, n)
        """
        if self.kind is GaugeKind.EUCLIDEAN:
            rows = count if at is None else np.atleast_2d(np.asarray(at, dtype=float)).shape[0]
            return np.zeros((rows, self.dim))
        if self.kind is GaugeKind.CAPILLARY_HALF_SPACE:
            rows = count if at is None else np.atleast_2d(np.asarray(at, dtype=float)).shape[0]
            a = np.zeros((rows, self.dim))
            a[:, -1] = -self.lambda_
            return a
        if self.drift is None:
            raise GaugeError("obstacle gauge evaluated without a drift field")
        if at is None:
            raise GaugeError("obstacle gauge evaluation needs a point `at` for grad h")
        points = np.atleast_2d(np.asarray(at, dtype=float)).reshape(-1, self.dim)
        return np.asarray(self.drift.gradient_at(points), dtype=float).reshape(-1, self.dim)


@dataclass(frozen=True)
class DualEvaluation:
    """Result of a dual gauge evaluation."""

    value: float
    at_point: np.ndarray
    drift_used: np.ndarray


@dataclass
class PolarityReport:
    """Maximum residuals of the polarity identities over a sample set."""

    dual_of_gradient: float
    euler: float
    inverse_map: float
    samples: int

    @property
    def max_residual(self) -> float:
        return max(self.dual_of_gradient, self.euler, self.inverse_map)


# Vectorized kernels on the |xi| + a.xi representation


def gauge_values(xi: np.ndarray, a: np.ndarray) -> np.ndarray:
    """F(xi) = |xi| + a.xi over the last axis."""
    return np.linalg.norm(xi, axis=-1) + np.sum(a * xi, axis=-1)


def gauge_gradients(xi: np.ndarray, a: np.ndarray) -> np.ndarray:
    """DF(xi) = xi/|xi| + a; the unit part is taken as 0 where xi = 0."""
    norm = np.linalg.norm(xi, axis=-1, keepdims=True)
    unit = np.divide(xi, norm, out=np.zeros_like(xi, dtype=float), where=norm > 0)
    return unit + a


def dual_values(x: np.ndarray, a: np.ndarray) -> np.ndarray:
    """
    F^o(x) = |x|^2 / (sqrt(<x,a>^2 + |x|^2 (1-|a|^2)) + <x,a>).

    The rationalized form (S - <x,a>) / (1 - |a|^2) is used where <x,a> < 0
    to avoid cancellation.
    """
    x = np.asarray(x, dtype=float)
    a = np.broadcast_to(np.asarray(a, dtype=float), x.shape)
    xa = np.sum(x * a, axis=-1)
    xx = np.sum(x * x, axis=-1)
    aa = np.sum(a * a, axis=-1)
    root = np.sqrt(np.maximum(xa * xa + xx * (1.0 - aa), 0.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        direct = xx / (root + xa)
        rationalized = (root - xa) / (1.0 - aa)
    value = np.where(xa >= 0.0, direct, rationalized)
    return np.where(xx > 0.0, value, 0.0)


def _check_drift_magnitude(a: np.ndarray) -> None:
    magnitude = float(np.max(np.linalg.norm(a, axis=-1))) if a.size else 0.0
    if magnitude >= 1.0:
        raise GaugeError(f"drift magnitude {magnitude:.6g} >= 1: dual gauge undefined")


def _prepare(g: GaugeDescriptor, vectors: ArrayLike, at: Optional[ArrayLike]):
    array = np.asarray(vectors, dtype=float)
    if array.shape[-1] != g.dim:
        raise GaugeError(f"expected vectors of dimension {g.dim}, got shape {array.shape}")
    if not np.all(np.isfinite(array)):
        raise GaugeError("gauge arguments must be finite")
    flat = array.reshape(-1, g.dim)
    if at is not None and g.kind is GaugeKind.OBSTACLE:
        at_array = np.atleast_2d(np.asarray(at, dtype=float)).reshape(-1, g.dim)
        if at_array.shape[0] == 1 and flat.shape[0] > 1:
            at_array = np.repeat(at_array, flat.shape[0], axis=0)
        a = g.drift_vectors(at_array)
    else:
        a = g.drift_vectors(at, count=flat.shape[0])
        if a.shape[0] == 1 and flat.shape[0] > 1:
            a = np.repeat(a, flat.shape[0], axis=0)
    return array, flat, a


# Public operations


def eval_gauge(g: GaugeDescriptor, xi: ArrayLike, at: Optional[ArrayLike] = None):
    """
    Evaluate the gauge.

    Args:
        g: Gauge descriptor
        xi: Vector of length n or array (..., n)
        at: Point(s) where grad h is read (obstacle gauges only)

    Returns:
        Float for a single vector, otherwise an array of shape xi.shape[:-1]
    """
    array, flat, a = _prepare(g, xi, at)
    values = gauge_values(flat, a)
    if array.ndim == 1:
        return float(values[0])
    return values.reshape(array.shape[:-1])


def grad_gauge(g: GaugeDescriptor, xi: ArrayLike, at: Optional[ArrayLike] = None) -> np.ndarray:
    """
    Gradient DF(xi) = xi/|xi| + a.

    Raises:
        GaugeError: If any xi is zero (the gauge is not differentiable there)
    """
    array, flat, a = _prepare(g, xi, at)
    if np.any(np.linalg.norm(flat, axis=-1) == 0.0):
        raise GaugeError("gauge gradient undefined at xi = 0")
    return gauge_gradients(flat, a).reshape(array.shape)


def eval_dual(g: GaugeDescriptor, x: ArrayLike, at: Optional[ArrayLike] = None) -> DualEvaluation:
    """
    Dual gauge F^o at a single vector x with the drift frozen at ``at``.

    Raises:
        GaugeError: If the drift magnitude is >= 1
    """
    array, flat, a = _prepare(g, x, at)
    if flat.shape[0] != 1:
        raise GaugeError("eval_dual takes a single vector; use dual_values for batches")
    _check_drift_magnitude(a)
    value = float(dual_values(flat, a)[0])
    return DualEvaluation(value=value, at_point=flat[0].copy(), drift_used=a[0].copy())


def dual_gradient_fd(x: np.ndarray, a: np.ndarray, step: Optional[float] = None) -> np.ndarray:
    """DF^o(x) by central differences with step ``step * |x|`` per component."""
    step = settings.polarity_fd_step if step is None else step
    x = np.atleast_2d(np.asarray(x, dtype=float))
    a = np.broadcast_to(np.atleast_2d(a), x.shape)
    delta = step * np.linalg.norm(x, axis=-1, keepdims=True)
    grad = np.empty_like(x)
    for axis in range(x.shape[1]):
        shift = np.zeros_like(x)
        shift[:, axis] = delta[:, 0]
        grad[:, axis] = (dual_values(x + shift, a) - dual_values(x - shift, a)) / (2.0 * delta[:, 0])
    return grad


def check_polarity(
    g: GaugeDescriptor, samples: ArrayLike, at: Optional[ArrayLike] = None
) -> PolarityReport:
    """
    Verify F(DF^o(x)) = 1, DF(x).x = F(x) and F^o(x) DF(DF^o(x)) = x.

    The drift is frozen at ``at`` (identities are pointwise in grad h).

    Args:
        g: Gauge descriptor
        samples: Nonzero vectors, shape (m, n)
        at: Single point fixing grad h for obstacle gauges

    Returns:
        PolarityReport with the max absolute residual of each identity
    """
    x = np.atleast_2d(np.asarray(samples, dtype=float))
    if x.shape[-1] != g.dim:
        raise GaugeError(f"expected samples of dimension {g.dim}")
    if np.any(np.linalg.norm(x, axis=-1) == 0.0):
        raise GaugeError("polarity samples must be nonzero")
    a_row = g.drift_vectors(at if g.kind is GaugeKind.OBSTACLE else None)[0]
    _check_drift_magnitude(a_row[None, :])
    a = np.broadcast_to(a_row, x.shape)

    dual_grad = dual_gradient_fd(x, a)
    r_dual = np.abs(gauge_values(dual_grad, a) - 1.0)
    r_euler = np.abs(np.sum(gauge_gradients(x, a) * x, axis=-1) - gauge_values(x, a))
    reconstructed = dual_values(x, a)[:, None] * gauge_gradients(dual_grad, a)
    r_inverse = np.max(np.abs(reconstructed - x), axis=-1)

    report = PolarityReport(
        dual_of_gradient=float(np.max(r_dual)),
        euler=float(np.max(r_euler)),
        inverse_map=float(np.max(r_inverse)),
        samples=x.shape[0],
    )
    logger.debug(f"Polarity check on {report.samples} samples: max residual {report.max_residual:.3e}")
    return report


def polar_transform_sup(
    g: GaugeDescriptor,
    x: ArrayLike,
    directions: int = 100_000,
    rng: Optional[np.random.Generator] = None,
    at: Optional[ArrayLike] = None,
) -> float:
    """
    Brute-force polar ``sup <x, xi> / F(xi)`` over sampled unit directions.

    Used as an oracle for :func:`eval_dual`. For n = 2 the directions are an
    equispaced circle; otherwise they are drawn uniformly on the sphere.
    """
    x = np.asarray(x, dtype=float)
    a_row = g.drift_vectors(at if g.kind is GaugeKind.OBSTACLE else None)[0]
    if g.dim == 2:
        theta = np.linspace(0.0, 2.0 * np.pi, directions, endpoint=False)
        xi = np.column_stack([np.cos(theta), np.sin(theta)])
    else:
        rng = np.random.default_rng(0) if rng is None else rng
        xi = rng.normal(size=(directions, g.dim))
        xi /= np.linalg.norm(xi, axis=1, keepdims=True)
    return float(np.max(xi @ x / gauge_values(xi, a_row)))


def wulff_ball_volume(g: GaugeDescriptor, at: Optional[ArrayLike] = None) -> float:
    """
    Volume of the unit dual ball {F^o <= 1}.

    The ball is star-shaped about the origin with radial function
    ``1 / F^o(u)``, which depends only on the angle phi between u and the
    drift a. Hence

        |K| = |S^{n-2}| * int_0^pi rho(phi)^n / n * sin(phi)^(n-2) dphi

    integrated adaptively.
    """
    a_row = g.drift_vectors(at if g.kind is GaugeKind.OBSTACLE else None)[0]
    _check_drift_magnitude(a_row[None, :])
    alpha = float(np.linalg.norm(a_row))
    n = g.dim

    def integrand(phi: float) -> float:
        c = alpha * math.cos(phi)
        rho = math.sqrt(c * c + 1.0 - alpha * alpha) + c
        return rho**n / n * math.sin(phi) ** (n - 2)

    sphere = 2.0 * math.pi ** ((n - 1) / 2.0) / special.gamma((n - 1) / 2.0)
    value, error = integrate.quad(integrand, 0.0, math.pi, epsabs=1e-13, epsrel=1e-12, limit=200)
    logger.debug(f"Wulff ball volume n={n} |a|={alpha:.4f}: {sphere * value:.12g} (+/- {sphere * error:.1e})")
    return float(sphere * value)


def drift_gauge(lambda_: float, drift: Optional[DriftField], dim: int) -> GaugeDescriptor:
    """Capillary half-space gauge without a drift, obstacle gauge with one."""
    if drift is None:
        return GaugeDescriptor.capillary(lambda_, dim)
    return GaugeDescriptor.obstacle(lambda_, drift, dim)
