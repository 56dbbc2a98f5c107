"""
Solvers for the mixed problem, the symmetrized radial problem and the first eigenvalue.

Fields live on the cell centers of a :class:`~src.geometry.MaskedGrid`. Gradients
for the solvers come from :class:`SimplexGradient`: P1 elements on the Kuhn
triangulation of the cell-center lattice. Values on Dirichlet cells are held
at zero; the condition on the obstacle is natural.

Gauges are evaluated at ``-grad u`` throughout, the outward normal direction of
the super-level sets of ``u``.
"""

import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Any, Callable, List, Optional

import numpy as np
from scipy import integrate, optimize, sparse
from scipy.sparse import linalg as splinalg

from .config import settings
from .errors import DomainError, SolverError
from .gauge import GaugeDescriptor, drift_gauge, gauge_gradients, gauge_values
from .geometry import DIRICHLET, INTERIOR, NEUMANN, MaskedGrid, cap_constant, cap_coordinate

# Configure logging
logger = logging.getLogger(__name__)

# Profile kinks passed to quad per mesh interval
MAX_BREAKPOINTS = 50


class SimplexGradient:
    """
    Piecewise-linear gradient on the Kuhn triangulation of the cell centers.

    Every cube of 2^n domain cells is split into n! simplices of volume
    h^n / n!. The free nodes are the interior and Neumann cells touched by at
    least one simplex; all other nodes carry 0.
    """

    def __init__(self, grid: MaskedGrid):
        self.grid = grid
        n = grid.dim
        h = grid.spacing
        domain = grid.domain_mask
        corner_shape = tuple(d - 1 for d in grid.shape)
        offsets = list(itertools.product((0, 1), repeat=n))

        full = np.ones(corner_shape, dtype=bool)
        for offset in offsets:
            full &= domain[tuple(slice(o, o + d) for o, d in zip(offset, corner_shape))]
        corners = np.argwhere(full)

        touched = np.zeros(grid.shape, dtype=bool)
        for offset in offsets:
            touched[tuple(slice(o, o + d) for o, d in zip(offset, corner_shape))] |= full
        cell_class = grid.cell_class
        self.free_mask = touched & ((cell_class == INTERIOR) | (cell_class == NEUMANN))
        self.node_count = int(np.count_nonzero(self.free_mask))
        numbering = -np.ones(grid.shape, dtype=np.int64)
        numbering[self.free_mask] = np.arange(self.node_count)

        permutations = list(itertools.permutations(range(n)))
        count = corners.shape[0]
        self.simplex_count = count * len(permutations)
        rows, cols, data = [], [], []
        centroid_index = np.zeros((self.simplex_count, n))
        for p_index, order in enumerate(permutations):
            simplex_ids = p_index * count + np.arange(count)
            vertex = corners.copy()
            previous = numbering[tuple(vertex.T)]
            vertex_sum = vertex.astype(float)
            for axis in order:
                vertex = vertex.copy()
                vertex[:, axis] += 1
                current = numbering[tuple(vertex.T)]
                row = simplex_ids * n + axis
                for ids, sign in ((current, 1.0), (previous, -1.0)):
                    keep = ids >= 0
                    rows.append(row[keep])
                    cols.append(ids[keep])
                    data.append(np.full(int(np.count_nonzero(keep)), sign / h))
                previous = current
                vertex_sum += vertex
            centroid_index[simplex_ids] = vertex_sum / (n + 1)

        self.matrix = sparse.csr_matrix(
            (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
            shape=(self.simplex_count * n, self.node_count),
        )
        self.volumes = np.full(self.simplex_count, h**n / math.factorial(n))
        self.centroids = grid.origin + (centroid_index + 0.5) * h
        logger.debug(f"Kuhn triangulation: {self.simplex_count} simplices on {self.node_count} free nodes")

    @property
    def dim(self) -> int:
        return self.grid.dim

    def gradients(self, u: np.ndarray) -> np.ndarray:
        """Per-simplex gradients of free-node values, shape (S, n)."""
        return (self.matrix @ u).reshape(self.simplex_count, self.dim)

    def gather(self, field_values: np.ndarray) -> np.ndarray:
        return np.asarray(field_values, dtype=float)[self.free_mask]

    def scatter(self, u: np.ndarray) -> np.ndarray:
        out = np.zeros(self.grid.shape)
        out[self.free_mask] = u
        return out

    def stiffness(self) -> sparse.csr_matrix:
        """Euclidean stiffness matrix B^T diag(vol) B."""
        weights = sparse.diags(np.repeat(self.volumes, self.dim))
        return (self.matrix.T @ weights @ self.matrix).tocsr()


def rayleigh_quotient(u: np.ndarray, grid: MaskedGrid, gauge: GaugeDescriptor) -> float:
    """Integral of F(-grad u)^2 over the integral of u^2, on the Kuhn triangulation."""
    disc = SimplexGradient(grid)
    values = disc.gather(u)
    denominator = grid.cell_volume * float(values @ values)
    if denominator == 0.0:
        raise DomainError("Rayleigh quotient of a field vanishing on all free nodes")
    density = np.maximum(gauge_values(-disc.gradients(values), gauge.drift_vectors(disc.centroids)), 0.0)
    return float(disc.volumes @ density**2) / denominator


# Mixed boundary value problem


@dataclass
class MixedProblem:
    """Minimize the regularized gauge energy minus the source work."""

    grid: MaskedGrid
    gauge: GaugeDescriptor
    source: np.ndarray
    p: float = 2.0
    eps: Optional[float] = None

    def __post_init__(self):
        self.source = np.asarray(self.source, dtype=float)
        if self.p != 2.0:
            raise DomainError(f"the mixed problem is solved for p = 2 only, got p = {self.p}")
        if self.eps is None:
            self.eps = self.grid.spacing
        if not self.eps > 0.0:
            raise DomainError(f"regularization eps must be > 0, got {self.eps}")
        if self.source.shape != self.grid.shape:
            raise DomainError(f"source shape {self.source.shape} does not match grid shape {self.grid.shape}")
        if not np.all(np.isfinite(self.source[self.grid.domain_mask])):
            raise DomainError("source must be finite on the domain")
        if not np.any(self.grid.cell_class == DIRICHLET):
            raise DomainError("the mixed problem needs Dirichlet cells")


class MixedEnergy:
    """
    J(u) = sum over simplices of vol * W(-grad u) - sum of h^n f u.

    W(xi) = G^2/2 - eps^2/2 - eps a.xi with G = sqrt(|xi|^2 + eps^2) + a.xi.
    W is convex, W(0) = 0, DW(0) = 0, and W = |xi|^2/2 when a = 0.
    """

    def __init__(self, problem: MixedProblem):
        self.problem = problem
        self.disc = SimplexGradient(problem.grid)
        self.drift = problem.gauge.drift_vectors(self.disc.centroids)
        self.load = problem.grid.cell_volume * self.disc.gather(problem.source)
        self.eps = float(problem.eps)

    def _state(self, u: np.ndarray):
        xi = -self.disc.gradients(u)
        root = np.sqrt(np.sum(xi * xi, axis=1) + self.eps**2)
        drift_dot = np.sum(self.drift * xi, axis=1)
        return xi, root, drift_dot, root + drift_dot

    def value(self, u: np.ndarray) -> float:
        _, _, drift_dot, big_g = self._state(u)
        density = 0.5 * big_g * big_g - 0.5 * self.eps**2 - self.eps * drift_dot
        return float(self.disc.volumes @ density - self.load @ u)

    def value_and_gradient(self, u: np.ndarray):
        xi, root, drift_dot, big_g = self._state(u)
        density = 0.5 * big_g * big_g - 0.5 * self.eps**2 - self.eps * drift_dot
        d_density = big_g[:, None] * (xi / root[:, None] + self.drift) - self.eps * self.drift
        flux = (self.disc.volumes[:, None] * d_density).ravel()
        value = float(self.disc.volumes @ density - self.load @ u)
        return value, -(self.disc.matrix.T @ flux) - self.load

    def hessian(self, u: np.ndarray) -> sparse.csc_matrix:
        xi, root, _, big_g = self._state(u)
        n = self.disc.dim
        count = self.disc.simplex_count
        direction = xi / root[:, None] + self.drift
        blocks = direction[:, :, None] * direction[:, None, :]
        blocks += (big_g / root)[:, None, None] * np.eye(n)
        blocks -= (big_g / root**3)[:, None, None] * xi[:, :, None] * xi[:, None, :]
        blocks *= self.disc.volumes[:, None, None]
        base = np.arange(count)[:, None, None] * n
        rows = np.broadcast_to(base + np.arange(n)[None, :, None], blocks.shape)
        cols = np.broadcast_to(base + np.arange(n)[None, None, :], blocks.shape)
        middle = sparse.csr_matrix(
            (blocks.ravel(), (rows.ravel(), cols.ravel())), shape=(count * n, count * n)
        )
        matrix = self.disc.matrix
        return (matrix.T @ middle @ matrix).tocsc()


@dataclass
class BvpSolution:
    """Discrete minimizer of the mixed problem."""

    grid: MaskedGrid
    values: np.ndarray
    energy_trace: List[float]
    iterations: int
    decrement: float
    diagnostics: dict = field(default_factory=dict)

    @property
    def energy(self) -> float:
        return self.energy_trace[-1]


def _warm_start(energy: MixedEnergy, u: np.ndarray, trace: List[float]) -> np.ndarray:
    def record(intermediate_result):
        trace.append(float(intermediate_result.fun))

    result = optimize.minimize(
        energy.value_and_gradient,
        u,
        jac=True,
        method="L-BFGS-B",
        callback=record,
        options={"maxiter": min(settings.bvp_max_iter, 200), "gtol": 1e-12, "ftol": 1e-15},
    )
    logger.debug(f"L-BFGS warm start: {result.nit} iterations, J = {result.fun:.12g}")
    return result.x


def solve_mixed_bvp(problem: MixedProblem, max_newton: int = 50) -> BvpSolution:
    """
    Minimize the regularized energy over fields vanishing on Dirichlet cells.

    L-BFGS gives a warm start; Newton steps with the assembled Hessian and a
    backtracking line search polish it until the Newton decrement (the
    residual in the energy norm) drops below ``settings.bvp_residual_tol``.

    Returns:
        BvpSolution whose ``values`` is the solution on the grid

    Raises:
        SolverError: Newton polishing did not converge within the budget
    """
    energy = MixedEnergy(problem)
    size = energy.disc.node_count
    if not np.any(energy.load):
        logger.info("Zero source: the minimizer is u = 0")
        return BvpSolution(problem.grid, np.zeros(problem.grid.shape), [0.0], 0, 0.0, {"nodes": size})

    trace = [energy.value(np.zeros(size))]
    u = _warm_start(energy, np.zeros(size), trace)
    restarts = 0
    decrement = math.inf
    iteration = 0
    for iteration in range(1, max_newton + 1):
        value, gradient = energy.value_and_gradient(u)
        step = splinalg.spsolve(energy.hessian(u), -gradient)
        decrement = math.sqrt(max(-float(gradient @ step), 0.0))
        if decrement <= settings.bvp_residual_tol:
            break
        slope = float(gradient @ step)
        t = 1.0
        while True:
            candidate = energy.value(u + t * step)
            if candidate <= value + 1e-4 * t * slope:
                break
            if t < 1e-10:
                break
            t *= 0.5
        if candidate > value + 1e-4 * t * slope:
            if candidate <= value + 1e-12 * max(1.0, abs(value)):
                t = 1.0
                candidate = energy.value(u + step)
            elif restarts < settings.bvp_restarts:
                restarts += 1
                logger.warning(f"Newton step failed to descend; L-BFGS restart {restarts}")
                u = _warm_start(energy, u, trace)
                continue
            else:
                raise SolverError("mixed problem line search failed", iterations=iteration, residual=decrement)
        u = u + t * step
        if candidate > trace[-1] + 1e-12 * max(1.0, abs(trace[-1])):
            logger.warning(f"Energy increased from {trace[-1]:.12g} to {candidate:.12g}")
        trace.append(candidate)
        logger.debug(f"Newton {iteration}: J = {candidate:.14g}, decrement {decrement:.3e}, step {t:g}")
    else:
        raise SolverError("mixed problem did not converge", iterations=max_newton, residual=decrement)

    values = energy.disc.scatter(u)
    logger.info(
        f"Solved mixed problem on {size} nodes: {iteration} Newton steps, "
        f"decrement {decrement:.2e}, J = {trace[-1]:.10g}"
    )
    return BvpSolution(
        grid=problem.grid,
        values=values,
        energy_trace=trace,
        iterations=iteration,
        decrement=decrement,
        diagnostics={"nodes": size, "simplices": energy.disc.simplex_count, "restarts": restarts, "eps": energy.eps},
    )


# Radial problem


@dataclass(frozen=True)
class SampledProfile:
    """Profile sampled on an increasing mesh, linearly interpolated."""

    s: np.ndarray
    values: np.ndarray

    def __call__(self, s: Any) -> np.ndarray:
        return np.interp(np.asarray(s, dtype=float), self.s, self.values)


@dataclass(frozen=True)
class RadialSolution:
    """Solution v(rho) of the symmetrized problem on the cap of radius r."""

    r: float
    lambda_: float
    dim: int
    kappa: float
    rho: np.ndarray
    v: np.ndarray
    cumulative: np.ndarray

    @property
    def s(self) -> np.ndarray:
        return self.kappa * self.rho**self.dim

    @property
    def v_sharp(self) -> SampledProfile:
        """v#(s) = v(rho) at s = kappa rho^n."""
        return SampledProfile(self.s, self.v)

    def derivative(self) -> np.ndarray:
        """v'(rho) = -G(kappa rho^n) / (n kappa rho^(n-1)), 0 at rho = 0."""
        with np.errstate(divide="ignore", invalid="ignore"):
            slope = -self.cumulative / (self.dim * self.kappa * self.rho ** (self.dim - 1))
        return np.where(self.rho > 0.0, slope, 0.0)

    def evaluate(self, points: Any) -> np.ndarray:
        """v at points through the cap coordinate; 0 outside the cap."""
        rho = cap_coordinate(points, self.lambda_)
        return np.where(rho <= self.r, np.interp(rho, self.rho, self.v), 0.0)


def _rho_mesh(r: float) -> np.ndarray:
    half = max(settings.rho_mesh_points // 2, 8)
    return np.unique(np.concatenate([np.linspace(0.0, r, half), np.geomspace(r * 1e-8, r, half)]))


def _breakpoints(kinks: np.ndarray, lo: float, hi: float) -> Optional[np.ndarray]:
    if kinks.size == 0:
        return None
    inside = kinks[(kinks > lo) & (kinks < hi)]
    if inside.size == 0 or inside.size > MAX_BREAKPOINTS:
        return None
    return inside


def _interval_integrals(
    integrand: Callable[[float], float], mesh: np.ndarray, kinks: np.ndarray
) -> np.ndarray:
    pieces = np.zeros(mesh.size - 1)
    for k in range(mesh.size - 1):
        lo, hi = float(mesh[k]), float(mesh[k + 1])
        pieces[k], _ = integrate.quad(
            integrand,
            lo,
            hi,
            points=_breakpoints(kinks, lo, hi),
            epsabs=1e-15,
            epsrel=settings.quad_rel_tol,
            limit=200,
        )
    return pieces


def _check_profile(f_sharp: Any) -> None:
    values = np.asarray(f_sharp.values, dtype=float)
    if values.size and np.min(values) < 0.0:
        raise DomainError(f"negative f# (min {np.min(values):.3e})")


def solve_radial_ode(f_sharp: Any, r: float, lambda_: float, n: int) -> RadialSolution:
    """
    v(rho) = integral over [rho, r] of G(kappa t^n) / (n kappa t^(n-1)) dt.

    Args:
        f_sharp: Non-increasing profile with ``cumulative(xi)`` and ``edges``
            (a :class:`~src.rearrange.RadialProfile`)
        r: Cap radius
        lambda_: Contact parameter
        n: Dimension

    Returns:
        RadialSolution with v(r) = 0
    """
    if not r > 0.0:
        raise DomainError(f"cap radius must be > 0, got {r}")
    _check_profile(f_sharp)
    kappa = cap_constant(lambda_, n)
    rho = _rho_mesh(r)
    kinks = (np.asarray(f_sharp.edges, dtype=float) / kappa) ** (1.0 / n)

    def integrand(t: float) -> float:
        if t <= 0.0:
            return 0.0
        return float(f_sharp.cumulative(kappa * t**n)) / (n * kappa * t ** (n - 1))

    pieces = _interval_integrals(integrand, rho, kinks)
    v = np.concatenate([np.cumsum(pieces[::-1])[::-1], [0.0]])
    cumulative = np.asarray(f_sharp.cumulative(kappa * rho**n), dtype=float)
    logger.debug(f"Radial ODE on {rho.size} nodes: v(0) = {v[0]:.12g}")
    return RadialSolution(r=r, lambda_=lambda_, dim=n, kappa=kappa, rho=rho, v=v, cumulative=cumulative)


def talenti_upper_profile(f_sharp: Any, omega_vol: float, lambda_: float, n: int) -> SampledProfile:
    """
    (n kappa^(1/n))^(-2) times the integral over [s, |Omega|] of xi^(2/n - 2) G(xi) dxi.

    Sampled on the same s-mesh as :func:`solve_radial_ode` on the cap of
    volume ``omega_vol``.
    """
    if not omega_vol > 0.0:
        raise DomainError(f"volume must be > 0, got {omega_vol}")
    _check_profile(f_sharp)
    kappa = cap_constant(lambda_, n)
    r = (omega_vol / kappa) ** (1.0 / n)
    s = kappa * _rho_mesh(r) ** n
    s[-1] = omega_vol
    kinks = np.asarray(f_sharp.edges, dtype=float)
    factor = (n * kappa ** (1.0 / n)) ** -2

    def integrand(xi: float) -> float:
        if xi <= 0.0:
            return 0.0
        return xi ** (2.0 / n - 2.0) * float(f_sharp.cumulative(xi))

    pieces = _interval_integrals(integrand, s, kinks)
    values = factor * np.concatenate([np.cumsum(pieces[::-1])[::-1], [0.0]])
    return SampledProfile(s, values)


def radial_gradient_norm(f_sharp: Any, omega_vol: float, lambda_: float, n: int, q: float) -> float:
    """
    L^q norm of F_lambda(-grad v) for the symmetrized solution.

    F_lambda(-grad v) = G(s) / (n kappa^(1/n) s^(1 - 1/n)) at s = kappa rho^n.
    """
    kappa = cap_constant(lambda_, n)
    r = (omega_vol / kappa) ** (1.0 / n)
    scale = n * kappa ** (1.0 / n)

    def density(s: float) -> float:
        if s <= 0.0:
            return 0.0
        return float(f_sharp.cumulative(s)) / (scale * s ** (1.0 - 1.0 / n))

    if math.isinf(q):
        mesh = kappa * _rho_mesh(r) ** n
        return float(max(density(s) for s in mesh))
    mesh = kappa * _rho_mesh(r) ** n
    pieces = _interval_integrals(lambda s: density(s) ** q, mesh, np.asarray(f_sharp.edges, dtype=float))
    return float(np.sum(pieces) ** (1.0 / q))


def radial_rayleigh_quotient(profile: SampledProfile, lambda_: float, n: int) -> float:
    """
    Integral of F_lambda(-grad v)^2 over the integral of v^2 for v = profile(kappa rho^n).

    Both integrals are taken in the volume coordinate s, where
    F_lambda(-grad v) = |dv/drho|.
    """
    kappa = cap_constant(lambda_, n)
    s = np.asarray(profile.s, dtype=float)
    values = np.asarray(profile.values, dtype=float)
    rho = (s / kappa) ** (1.0 / n)
    slope = np.gradient(values, rho)
    numerator = integrate.trapezoid(slope**2, s)
    denominator = integrate.trapezoid(values**2, s)
    if denominator <= 0.0:
        raise DomainError("Rayleigh quotient of a vanishing profile")
    return float(numerator / denominator)


# First eigenvalue


@dataclass
class EigenResult:
    """First eigenvalue of the mixed problem and its non-negative eigenfunction."""

    eigenvalue: float
    eigenfunction: np.ndarray
    history: List[float]
    iterations: int


def first_eigenvalue(
    grid: MaskedGrid, gauge: GaugeDescriptor, drift: Optional[Any] = None
) -> EigenResult:
    """
    Minimize the integral of F(-grad u)^2 over the integral of u^2.

    Projected gradient descent on the non-negative cone. The gradient is
    preconditioned by the Euclidean stiffness matrix K; Barzilai-Borwein step
    lengths are measured in the K metric, with step 1/2 (inverse iteration) as
    the fallback. Each iterate is renormalized to unit L^2 norm.

    Args:
        grid: Domain grid with Dirichlet cells
        gauge: Gauge of the quotient
        drift: Optional drift field; replaces the gauge by the obstacle gauge

    Returns:
        EigenResult with the quotient of the returned eigenfunction

    Raises:
        DomainError: No Dirichlet cells or no free nodes
        SolverError: No convergence within ``settings.eigen_max_iter`` iterations
    """
    if drift is not None:
        gauge = drift_gauge(gauge.lambda_, drift, grid.dim)
    if not np.any(grid.cell_class == DIRICHLET):
        raise DomainError("the eigenvalue problem needs Dirichlet cells")
    disc = SimplexGradient(grid)
    if disc.node_count == 0:
        raise DomainError("no free nodes for the eigenvalue problem")
    a = gauge.drift_vectors(disc.centroids)
    mass = grid.cell_volume
    volumes = disc.volumes

    def quotient(u: np.ndarray):
        xi = -disc.gradients(u)
        values = np.maximum(gauge_values(xi, a), 0.0)
        numerator = float(volumes @ values**2)
        denominator = mass * float(u @ u)
        ratio = numerator / denominator
        d_numerator = -(disc.matrix.T @ ((2.0 * volumes * values)[:, None] * gauge_gradients(xi, a)).ravel())
        return ratio, (d_numerator - 2.0 * ratio * mass * u) / denominator

    def normalize(u: np.ndarray) -> np.ndarray:
        return u / math.sqrt(mass * float(u @ u))

    stiffness = disc.stiffness() + 1e-8 * mass * sparse.identity(disc.node_count, format="csr")
    solve = splinalg.splu(stiffness.tocsc()).solve

    u = normalize(np.maximum(solve(np.full(disc.node_count, mass)), 0.0))
    ratio, gradient = quotient(u)
    history = [ratio]
    previous_u, previous_gradient = None, None
    window = settings.eigen_window
    for iteration in range(1, settings.eigen_max_iter + 1):
        direction = solve(gradient)
        alpha = 0.5
        if previous_u is not None:
            s = u - previous_u
            y = gradient - previous_gradient
            curvature = float(s @ y)
            if curvature > 0.0:
                alpha = float(np.clip(float(s @ (stiffness @ s)) / curvature, 1e-2, 1e2))
        candidate = np.maximum(u - alpha * direction, 0.0)
        if not np.any(candidate > 0.0) or (alpha != 0.5 and quotient(normalize(candidate))[0] > 1.1 * ratio):
            candidate = np.maximum(u - 0.5 * direction, 0.0)
        if not np.any(candidate > 0.0):
            raise SolverError("eigen iteration collapsed to zero", iterations=iteration)
        previous_u, previous_gradient = u, gradient
        u = normalize(candidate)
        ratio, gradient = quotient(u)
        history.append(ratio)
        if iteration >= window and abs(history[-1] - history[-1 - window]) < settings.eigen_rel_tol * ratio:
            break
        if iteration % 100 == 0:
            logger.debug(f"Eigen iteration {iteration}: quotient {ratio:.12g}")
    else:
        raise SolverError(
            "eigenvalue iteration did not converge",
            iterations=settings.eigen_max_iter,
            residual=abs(history[-1] - history[-1 - window]) / ratio,
        )

    logger.info(f"First eigenvalue {ratio:.10g} after {iteration} iterations ({disc.node_count} nodes)")
    return EigenResult(eigenvalue=ratio, eigenfunction=disc.scatter(u), history=history, iterations=iteration)


def poincare_constant(grid: MaskedGrid, gauge: GaugeDescriptor, drift: Optional[Any] = None) -> float:
    """Best constant C in the integral of u^2 <= C times the integral of F(-grad u)^2."""
    return 1.0 / first_eigenvalue(grid, gauge, drift).eigenvalue
