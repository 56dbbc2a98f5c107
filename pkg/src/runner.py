"""
Experiment orchestration.

Parses the sectioned ``key = value`` experiment format, builds the domain and
drift an experiment needs, dispatches to the numerical modules and writes the
reports, CSV tables and SVG charts. Batches fan out to a process pool; the
artifacts are written by the calling process in config order.
"""

import logging
import math
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import ValidationError

from .config import settings
from .errors import ConfigError
from .gauge import (
    GaugeDescriptor,
    check_polarity,
    drift_gauge,
    eval_dual,
    eval_gauge,
    grad_gauge,
    polar_transform_sup,
)
from .geometry import (
    ConvexObstacle,
    MaskedGrid,
    OuterRegion,
    anisotropic_perimeter,
    build_domain,
    cap_coordinate,
    cap_perimeter,
    cap_radius_for_volume,
    capillary_perimeter,
    isoperimetric_check,
)
from .harmonic import HarmonicField, OuterBC, analytic_drift_for, flux_identity_check, solve_h
from .models import ExperimentConfig, VerificationReport
from .output import append_reports, margin_chart, render_svg, write_csv, write_svg
from .pde import (
    MixedProblem,
    first_eigenvalue,
    rayleigh_quotient,
    solve_mixed_bvp,
    solve_radial_ode,
    talenti_upper_profile,
)
from .rearrange import (
    cap_form_field,
    capillary_symmetrize,
    coarea_check,
    decreasing_rearrangement,
    distribution,
    equimeasurability_check,
    polya_szego_suite,
    random_bump_field,
)
from .utils import grid_tolerance, make_rng, parse_bool, parse_number, parse_vector
from .verify import (
    best_constant_estimate,
    bossel_daners_compare,
    moser_check,
    run_talenti,
    sobolev_check,
)

# Configure logging
logger = logging.getLogger(__name__)

REPORTS_FILE = "reports.jsonl"

# Dirichlet-Neumann eigenvalues of the unit half-disk and half-ball
HALF_BALL_EIGENVALUES = {2: 5.783185962946784, 3: math.pi**2}

# Accuracy floors of the closed-form torsion and eigenvalue comparisons
TORSION_SUP_TOL = 5e-3
EIGEN_REL_TOL = 0.02


# Config parsing


def _text(value: str) -> str:
    return value.strip()


def _integer(value: str) -> int:
    number = parse_number(value)
    if not float(number).is_integer():
        raise ValueError(f"expected an integer, got {value!r}")
    return int(number)


def _integers(value: str) -> List[int]:
    numbers = parse_vector(value)
    if any(not float(number).is_integer() for number in numbers):
        raise ValueError(f"expected integers, got {value!r}")
    return [int(number) for number in numbers]


def _matrix(value: str) -> List[List[float]]:
    """Rows separated by ``|``: ``1, 0 | 0, 1``."""
    return [parse_vector(row) for row in value.split("|") if row.strip()]


Converter = Callable[[str], Any]

_RUN_KEYS: Dict[str, Tuple[str, Converter]] = {
    "seed": ("seed", _integer),
    "fields": ("fields", _integer),
    "samples": ("samples", _integer),
    "ks": ("ks", _integers),
    "scale": ("scale", parse_number),
    "radii": ("radii", parse_vector),
    "source": ("source", _text),
    "outer_bc": ("outer_bc", _text),
    "drift": ("drift", _text),
    "xi": ("xi", parse_vector),
    "moser_convention": ("moser_convention", _text),
}

SECTION_KEYS: Dict[str, Dict[str, Tuple[str, Converter]]] = {
    "experiment": {
        "experiment": ("experiment", _text),
        "lambda": ("lambda", parse_number),
        "p": ("p", parse_number),
        "n": ("n", _integer),
        "spacing": ("spacing", parse_number),
        **_RUN_KEYS,
    },
    "obstacle": {
        "kind": ("kind", _text),
        "normal": ("normal", parse_vector),
        "offset": ("offset", parse_number),
        "center": ("center", parse_vector),
        "radius": ("radius", parse_number),
        "normals": ("normals", _matrix),
        "offsets": ("offsets", parse_vector),
    },
    "outer": {
        "kind": ("kind", _text),
        "lo": ("lo", parse_vector),
        "hi": ("hi", parse_vector),
        "center": ("center", parse_vector),
        "radius": ("radius", parse_number),
        "notch_lo": ("notch_lo", parse_vector),
        "notch_hi": ("notch_hi", parse_vector),
    },
    "tolerance": {
        "c_grid": ("c_grid", parse_number),
        "tolerance": ("tolerance", parse_number),
    },
    "output": {
        "dir": ("output_dir", _text),
        "output_dir": ("output_dir", _text),
        "svg": ("svg", parse_bool),
    },
    "run": _RUN_KEYS,
}

# Top-level shorthands selecting the kind of a nested section
_SHORTHANDS = {"obstacle", "outer"}

_SECTION_RE = re.compile(r"^\[\s*([A-Za-z_]+)\s*\]$")


def _strip_comment(line: str) -> str:
    cut = min((index for index in (line.find("#"), line.find(";")) if index >= 0), default=len(line))
    return line[:cut].strip()


def validate_config(payload: Dict[str, Any], key_lines: Optional[Dict[str, int]] = None) -> ExperimentConfig:
    """
    Validate a raw payload into an ExperimentConfig.

    Raises:
        ConfigError: Naming the offending key (and its line when known)
    """
    key_lines = key_lines or {}
    try:
        return ExperimentConfig.model_validate(payload)
    except ValidationError as exc:
        error = exc.errors()[0]
        key = ".".join(str(part) for part in error.get("loc", ())) or None
        message = str(error.get("msg", "invalid value")).removeprefix("Value error, ")
        line = key_lines.get(key) if key else None
        if key is None:
            raise ConfigError(message) from None
        raise ConfigError(f"invalid value for '{key}': {message}", line=line, key=key) from None


def parse_config(text: str) -> ExperimentConfig:
    """
    Parse the sectioned ``key = value`` experiment format.

    Args:
        text: Config text; ``#`` and ``;`` start comments

    Returns:
        Validated ExperimentConfig

    Raises:
        ConfigError: Syntax errors, unknown or duplicate keys (with the line
            number) and range violations (with the key)
    """
    payload: Dict[str, Any] = {}
    nested: Dict[str, Dict[str, Any]] = {"obstacle": {}, "outer": {}}
    key_lines: Dict[str, int] = {}
    section = "experiment"

    for number, raw in enumerate(text.splitlines(), start=1):
        line = _strip_comment(raw)
        if not line:
            continue
        header = _SECTION_RE.match(line)
        if header:
            section = header.group(1).lower()
            if section not in SECTION_KEYS:
                raise ConfigError(f"unknown section [{section}]", line=number, key=section)
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {line!r}", line=number)
        key, value = (part.strip() for part in line.split("=", 1))
        key = key.lower()
        if not key:
            raise ConfigError("missing key before '='", line=number)

        if section == "experiment" and key in _SHORTHANDS:
            target, name, converter = nested[key], "kind", _text
            full_key = f"{key}.kind"
        elif section in nested:
            if key not in SECTION_KEYS[section]:
                raise ConfigError(f"unknown key '{key}' in [{section}]", line=number, key=key)
            name, converter = SECTION_KEYS[section][key]
            target, full_key = nested[section], f"{section}.{name}"
        else:
            if key not in SECTION_KEYS[section]:
                raise ConfigError(f"unknown key '{key}' in [{section}]", line=number, key=key)
            name, converter = SECTION_KEYS[section][key]
            target, full_key = payload, name

        if full_key in key_lines:
            raise ConfigError(f"duplicate key '{key}' (first set on line {key_lines[full_key]})", line=number, key=key)
        try:
            target[name] = converter(value)
        except ValueError as exc:
            raise ConfigError(f"bad value for '{key}': {exc}", line=number, key=key) from None
        key_lines[full_key] = number

    for name, values in nested.items():
        if values:
            payload[name] = values
    config = validate_config(payload, key_lines)
    logger.debug(f"Parsed config for {config.experiment}: {config.params()}")
    return config


def load_config(path: Path) -> ExperimentConfig:
    """Read and parse a config file."""
    return parse_config(Path(path).read_text(encoding="utf-8"))


def with_overrides(config: ExperimentConfig, **overrides: Any) -> ExperimentConfig:
    """Revalidated copy with the non-None overrides applied."""
    payload = config.model_dump(by_alias=True)
    payload.update({key: value for key, value in overrides.items() if value is not None})
    return validate_config(payload)


def default_suite(base: ExperimentConfig) -> List[ExperimentConfig]:
    """Every verification experiment on the domain and contact parameter of ``base``."""
    sobolev_p = 1.5 if base.n == 2 else 2.0
    moser_spacing = min(base.spacing, 1.0 / (8.0 * max(base.ks)))
    return [
        with_overrides(base, experiment="polya_szego"),
        with_overrides(base, experiment="sobolev", p=sobolev_p),
        with_overrides(base, experiment="moser", spacing=moser_spacing),
        with_overrides(base, experiment="talenti", p=2.0),
        with_overrides(base, experiment="bossel_daners", p=2.0),
    ]


# Domains


def _unit(n: int) -> np.ndarray:
    vector = np.zeros(n)
    vector[-1] = 1.0
    return vector


def build_obstacle(config: ExperimentConfig) -> ConvexObstacle:
    spec, n = config.obstacle, config.n
    if spec.kind == "halfspace":
        normal = _unit(n) if spec.normal is None else np.asarray(spec.normal)
        if normal.size != n:
            raise ConfigError(f"obstacle normal must have {n} components", key="obstacle.normal")
        return ConvexObstacle.half_space(normal, spec.offset)
    if spec.kind == "ball":
        center = np.zeros(n) if spec.center is None else np.asarray(spec.center)
        if center.size != n:
            raise ConfigError(f"obstacle center must have {n} components", key="obstacle.center")
        return ConvexObstacle.ball(center, spec.radius)
    if not spec.normals or not spec.offsets:
        raise ConfigError("polytope obstacle needs normals and offsets", key="obstacle.normals")
    if any(len(row) != n for row in spec.normals):
        raise ConfigError(f"polytope normals must have {n} components", key="obstacle.normals")
    return ConvexObstacle.polytope(spec.normals, spec.offsets)


def _is_standard_halfspace(obstacle: Optional[ConvexObstacle]) -> bool:
    """E = {x_n <= 0}, the half-space the caps rest on."""
    if obstacle is None:
        return False
    return obstacle.axis_plane == (obstacle.dim - 1, 1.0, 0.0)


def build_outer(config: ExperimentConfig, obstacle: ConvexObstacle) -> OuterRegion:
    """
    Outer region from the config, or the default for the obstacle.

    Defaults: the unit cap over {x_n <= 0}, a box three radii around a ball
    obstacle, and [-1, 1]^n otherwise.
    """
    n = config.n
    spec = config.outer
    if spec is None:
        if _is_standard_halfspace(obstacle):
            return OuterRegion.cap(1.0, config.lambda_, n)
        if obstacle.kind == "ball":
            return OuterRegion.box(obstacle.center - 3.0 * obstacle.radius, obstacle.center + 3.0 * obstacle.radius)
        if obstacle.kind == "polytope":
            return OuterRegion.box(-2.0 * np.ones(n), 2.0 * np.ones(n))
        return OuterRegion.box(-np.ones(n), np.ones(n))
    lo = -np.ones(n) if spec.lo is None else np.asarray(spec.lo)
    hi = np.ones(n) if spec.hi is None else np.asarray(spec.hi)
    if spec.kind == "box":
        return OuterRegion.box(lo, hi)
    if spec.kind == "ball":
        return OuterRegion.ball(np.zeros(n) if spec.center is None else spec.center, spec.radius)
    if spec.kind == "lshape":
        notch_lo = 0.5 * (lo + hi) if spec.notch_lo is None else np.asarray(spec.notch_lo)
        notch_hi = hi + (hi - lo) if spec.notch_hi is None else np.asarray(spec.notch_hi)
        return OuterRegion.lshape(lo, hi, notch_lo, notch_hi)
    return OuterRegion.cap(spec.radius, config.lambda_, n)


def build_grid(config: ExperimentConfig) -> MaskedGrid:
    obstacle = build_obstacle(config)
    return build_domain(obstacle, build_outer(config, obstacle), config.spacing)


# Experiment context


@dataclass
class ExperimentContext:
    """Lazily built domain, drift and gauge shared by one experiment."""

    config: ExperimentConfig

    @cached_property
    def grid(self) -> MaskedGrid:
        return build_grid(self.config)

    @property
    def n(self) -> int:
        return self.config.n

    @property
    def lambda_(self) -> float:
        return self.config.lambda_

    @cached_property
    def drift(self) -> Optional[Any]:
        """
        None on the standard half-space (the capillary gauge is exact there),
        otherwise the analytic or numerical grad h.
        """
        obstacle = self.grid.obstacle
        if obstacle is None or _is_standard_halfspace(obstacle):
            return None
        analytic = analytic_drift_for(obstacle, self.lambda_)
        if self.config.drift == "analytic" and analytic is not None:
            return analytic
        return self.harmonic_field

    @cached_property
    def harmonic_field(self) -> HarmonicField:
        obstacle = self.grid.obstacle
        analytic = analytic_drift_for(obstacle, self.lambda_) if obstacle is not None else None
        if self.config.drift == "analytic" and analytic is not None:
            return analytic.sample(self.grid)
        outer_bc = OuterBC(self.config.outer_bc) if analytic is not None else None
        return solve_h(self.grid, self.lambda_, outer_bc)

    @cached_property
    def gauge(self) -> GaugeDescriptor:
        return drift_gauge(self.lambda_, self.drift, self.n)

    def rng(self, offset: int = 0) -> np.random.Generator:
        return make_rng(self.config.seed + offset)

    def source(self) -> np.ndarray:
        """f = 1 on the domain, or the indicator of the inner half of the cap coordinate."""
        grid = self.grid
        if self.config.source == "one":
            return cap_form_field(grid, self.lambda_, np.ones_like)
        rho_max = float(np.max(cap_coordinate(grid.domain_points(), self.lambda_)))
        return cap_form_field(grid, self.lambda_, lambda rho: (rho < 0.5 * rho_max).astype(float))

    def bump_fields(self) -> List[np.ndarray]:
        return [random_bump_field(self.grid, self.rng(index)) for index in range(self.config.fields)]


@dataclass
class RunResult:
    """Reports and artifact payloads of one experiment."""

    config: ExperimentConfig
    reports: List[VerificationReport]
    tables: Dict[str, Dict[str, np.ndarray]] = field(default_factory=dict)
    charts: Dict[str, str] = field(default_factory=dict)
    artifacts: List[Path] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(report.passed for report in self.reports)

    @property
    def exit_code(self) -> int:
        return 0 if self.passed else 1


Handler = Callable[[ExperimentContext], RunResult]


def _field_columns(grid: MaskedGrid, **fields: np.ndarray) -> Dict[str, np.ndarray]:
    points = grid.domain_points()
    columns = {f"x{k + 1}": points[:, k] for k in range(grid.dim)}
    for name, values in fields.items():
        columns[name] = np.asarray(values, dtype=float)[grid.domain_mask]
    return columns


def _half_level_set(u: np.ndarray) -> np.ndarray:
    return u - 0.5 * float(np.max(u))


# Handlers


def _gauge_eval(ctx: ExperimentContext) -> RunResult:
    n, config = ctx.n, ctx.config
    xi = np.ones(n) if config.xi is None else np.asarray(config.xi, dtype=float)
    if xi.size != n:
        raise ConfigError(f"xi must have {n} components", key="xi")
    g = GaugeDescriptor.capillary(ctx.lambda_, n)
    value = eval_gauge(g, xi)
    dual = eval_dual(g, xi).value
    brute = polar_transform_sup(g, xi, rng=ctx.rng())
    gradient = grad_gauge(g, xi) if np.any(xi != 0.0) else None
    # sampled directions are equispaced for n = 2 and random otherwise
    relative = 1e-4 if n == 2 else 1e-3
    report = VerificationReport(
        experiment="gauge_eval",
        params=config.params(),
        lhs=-abs(dual - brute),
        rhs=0.0,
        tolerance=relative * max(1.0, abs(dual)),
        metadata={"xi": xi, "F": value, "F_dual": dual, "polar_sup": brute, "grad_F": gradient},
    )
    return RunResult(config, [report])


def _gauge_check(ctx: ExperimentContext) -> RunResult:
    config = ctx.config
    samples = ctx.rng().normal(size=(config.samples, ctx.n))
    samples /= np.linalg.norm(samples, axis=1, keepdims=True)
    polarity = check_polarity(GaugeDescriptor.capillary(ctx.lambda_, ctx.n), samples)
    # the dual's finite-difference gradient loses digits as |lambda| -> 1
    tolerance = settings.tol_floor / (1.0 - abs(ctx.lambda_))
    report = VerificationReport(
        experiment="gauge_check",
        params=config.params(),
        lhs=-polarity.max_residual,
        rhs=0.0,
        tolerance=tolerance,
        metadata={
            "dual_of_gradient": polarity.dual_of_gradient,
            "euler": polarity.euler,
            "inverse_map": polarity.inverse_map,
            "samples": polarity.samples,
        },
    )
    return RunResult(config, [report])


def _perimeter(ctx: ExperimentContext) -> RunResult:
    grid, lambda_, config = ctx.grid, ctx.lambda_, ctx.config
    rho_max = float(np.max(cap_coordinate(grid.domain_points(), lambda_)))
    radius = 0.5 * rho_max
    set_field = cap_form_field(grid, lambda_, lambda rho: radius - rho)
    split = capillary_perimeter(set_field, grid, lambda_, level=0.0)
    euclidean = anisotropic_perimeter(set_field, grid, GaugeDescriptor.euclidean(grid.dim), level=0.0)
    total = split.free + split.contact_facet_area
    reports = [
        VerificationReport(
            experiment="perimeter",
            params=config.params(),
            lhs=-abs(euclidean - total),
            rhs=0.0,
            tolerance=max(settings.tol_floor, 1e-12 * total),
            metadata={"check": "euclidean_consistency", "anisotropic": euclidean, "free_plus_contact": total},
        )
    ]
    if _is_standard_halfspace(grid.obstacle):
        exact = cap_perimeter(lambda_, grid.dim, radius)
        reports.append(
            VerificationReport(
                experiment="perimeter",
                params=config.params(),
                lhs=-abs(split.energy - exact.energy),
                rhs=0.0,
                tolerance=grid_tolerance(grid.spacing, exact.energy, config.c_grid),
                metadata={
                    "check": "cap_energy",
                    "radius": radius,
                    "free": split.free,
                    "wet": split.wet,
                    "energy": split.energy,
                    "exact_curved": exact.curved,
                    "exact_flat": exact.flat,
                    "exact_energy": exact.energy,
                },
            )
        )
    return RunResult(config, reports)


def _isoperimetric(ctx: ExperimentContext) -> RunResult:
    grid, config = ctx.grid, ctx.config
    reports = [
        isoperimetric_check(_half_level_set(u), grid, ctx.lambda_, level=0.0, c_grid=config.c_grid)
        for u in ctx.bump_fields()
    ]
    return RunResult(config, reports)


def _harmonic(ctx: ExperimentContext) -> RunResult:
    grid, config = ctx.grid, ctx.config
    h = ctx.harmonic_field
    error = h.diagnostics.get("max_error_vs_analytic")
    metadata = {**h.diagnostics, "sup_grad": h.sup_grad}
    if error is not None:
        extent = float(np.max(np.linalg.norm(grid.domain_points(), axis=1)))
        lhs, tolerance = -error, grid_tolerance(grid.spacing, abs(ctx.lambda_) * extent, config.c_grid)
    else:
        lhs, tolerance = 1.0 - h.sup_grad, 0.0
    report = VerificationReport(
        experiment="harmonic", params=config.params(), lhs=lhs, rhs=0.0, tolerance=tolerance, metadata=metadata
    )
    gradients = {f"dh{k + 1}": h.gradients[..., k] for k in range(grid.dim)}
    return RunResult(config, [report], tables={"h": _field_columns(grid, h=h.values, **gradients)})


def _flux_identity(ctx: ExperimentContext) -> RunResult:
    h, config = ctx.harmonic_field, ctx.config
    reports = [
        flux_identity_check(h, _half_level_set(u), level=0.0, c_grid=config.c_grid) for u in ctx.bump_fields()
    ]
    return RunResult(config, reports)


def _rearrange(ctx: ExperimentContext) -> RunResult:
    grid, config = ctx.grid, ctx.config
    u = random_bump_field(grid, ctx.rng())
    report = equimeasurability_check(u, grid, ctx.lambda_, c_grid=config.c_grid)
    profile = capillary_symmetrize(u, grid, ctx.lambda_)
    levels = distribution(u, grid)
    tables = {
        "profile": {"s": 0.5 * (profile.edges[:-1] + profile.edges[1:]), "u_sharp": profile.values},
        "distribution": {"t": levels.thresholds, "mu": levels.measures},
    }
    return RunResult(config, [report], tables=tables)


def _coarea(ctx: ExperimentContext) -> RunResult:
    grid, config = ctx.grid, ctx.config
    rho_max = float(np.max(cap_coordinate(grid.domain_points(), ctx.lambda_)))
    u = cap_form_field(grid, ctx.lambda_, lambda rho: np.maximum(rho_max - rho, 0.0))
    report = coarea_check(u, grid, ctx.gauge, config.p, c_grid=config.c_grid)
    return RunResult(config, [report])


def _pde_solve(ctx: ExperimentContext) -> RunResult:
    grid, config = ctx.grid, ctx.config
    solution = solve_mixed_bvp(MixedProblem(grid, ctx.gauge, ctx.source()))
    trace = np.asarray(solution.energy_trace, dtype=float)
    metadata: Dict[str, Any] = {
        "iterations": solution.iterations,
        "decrement": solution.decrement,
        "energy": solution.energy,
        "energy_monotone": bool(np.all(np.diff(trace) <= 1e-12 * max(1.0, float(np.max(np.abs(trace)))))),
        **solution.diagnostics,
    }
    outer = grid.outer
    if (
        ctx.lambda_ == 0.0
        and _is_standard_halfspace(grid.obstacle)
        and config.source == "one"
        and outer is not None
        and outer.kind == "cap"
    ):
        points = grid.domain_points()
        torsion = (outer.radius**2 - np.sum(points**2, axis=1)) / (2.0 * grid.dim)
        error = float(np.max(np.abs(solution.values[grid.domain_mask] - torsion)))
        metadata["max_error_vs_torsion"] = error
        lhs = -error
        tolerance = max(TORSION_SUP_TOL, grid_tolerance(grid.spacing, float(np.max(torsion)), config.c_grid))
    else:
        lhs, tolerance = -solution.decrement, settings.bvp_residual_tol
    report = VerificationReport(
        experiment="pde_solve",
        params=config.params(),
        lhs=lhs,
        rhs=0.0,
        tolerance=tolerance,
        metadata=metadata,
    )
    return RunResult(config, [report], tables={"solution": _field_columns(grid, u=solution.values)})


def _pde_ode(ctx: ExperimentContext) -> RunResult:
    grid, config, n = ctx.grid, ctx.config, ctx.n
    f_sharp = decreasing_rearrangement(ctx.source(), grid, ctx.lambda_)
    radius = cap_radius_for_volume(grid.volume, ctx.lambda_, n)
    radial = solve_radial_ode(f_sharp, radius, ctx.lambda_, n)
    upper = talenti_upper_profile(f_sharp, grid.volume, ctx.lambda_, n)
    top = float(np.max(radial.v))
    gap = float(np.max(np.abs(radial.v - upper(radial.s)))) / top if top > 0.0 else 0.0
    report = VerificationReport(
        experiment="pde_ode",
        params=config.params(),
        lhs=-gap,
        rhs=0.0,
        tolerance=1e-6,
        metadata={"cap_radius": radius, "v_max": top, "mesh_points": int(radial.rho.size)},
    )
    return RunResult(config, [report], tables={"profile": {"s": radial.s, "v_sharp": radial.v}})


def _pde_eigen(ctx: ExperimentContext) -> RunResult:
    grid, config = ctx.grid, ctx.config
    result = first_eigenvalue(grid, GaugeDescriptor.capillary(ctx.lambda_, ctx.n), ctx.drift)
    eigenvalue = result.eigenvalue
    tolerance = grid_tolerance(grid.spacing, eigenvalue, config.c_grid)
    quotients = [rayleigh_quotient(u, grid, ctx.gauge) for u in ctx.bump_fields()]
    metadata: Dict[str, Any] = {
        "iterations": result.iterations,
        "poincare_constant": 1.0 / eigenvalue,
        "history_tail": result.history[-settings.eigen_window :],
        "field_quotients": quotients,
    }
    reports = [
        VerificationReport(
            experiment="pde_eigen",
            params=config.params(),
            lhs=min(quotients),
            rhs=eigenvalue,
            tolerance=tolerance,
            metadata=metadata,
        )
    ]
    outer = grid.outer
    if ctx.lambda_ == 0.0 and _is_standard_halfspace(grid.obstacle) and outer is not None and outer.kind == "cap":
        exact = HALF_BALL_EIGENVALUES[ctx.n] / outer.radius**2
        error = abs(eigenvalue - exact) / exact
        reports.append(
            VerificationReport(
                experiment="pde_eigen_exact",
                params=config.params(),
                lhs=-error,
                rhs=0.0,
                tolerance=max(EIGEN_REL_TOL, grid_tolerance(grid.spacing, c_grid=config.c_grid)),
                metadata={"exact": exact, "eigenvalue": eigenvalue, "relative_error_vs_exact": error},
            )
        )
    return RunResult(config, reports, tables={"eigenfunction": _field_columns(grid, u=result.eigenfunction)})


def _polya_szego(ctx: ExperimentContext) -> RunResult:
    config = ctx.config
    reports = polya_szego_suite(
        ctx.grid, ctx.lambda_, config.p, ctx.drift, fields=config.fields, seed=config.seed, c_grid=config.c_grid
    )
    return RunResult(config, reports)


def _sobolev(ctx: ExperimentContext) -> RunResult:
    config = ctx.config
    estimate, trace = best_constant_estimate(ctx.lambda_, config.p, ctx.n, ball_radii=config.radii, seed=config.seed)
    reports = []
    for u in ctx.bump_fields():
        report = sobolev_check(u, ctx.grid, ctx.lambda_, config.p, ctx.drift, estimate, c_grid=config.c_grid)
        reports.append(report.model_copy(update={"metadata": {**report.metadata, "estimate_trace": trace}}))
    return RunResult(config, reports)


def _moser(ctx: ExperimentContext) -> RunResult:
    config = ctx.config
    report = moser_check(ctx.grid, ctx.lambda_, config.ks, config.scale, ctx.drift, config.moser_convention)
    return RunResult(config, [report])


def _talenti(ctx: ExperimentContext) -> RunResult:
    config = ctx.config
    outer = ctx.grid.outer
    on_cap = _is_standard_halfspace(ctx.grid.obstacle) and outer is not None and outer.kind == "cap"
    result = run_talenti(
        ctx.grid, ctx.source(), ctx.lambda_, ctx.drift, c_grid=config.c_grid, expect_equality=on_cap
    )
    s_u = 0.5 * (result.u_sharp.edges[:-1] + result.u_sharp.edges[1:])
    tables = {
        "u_sharp": {"s": s_u, "u_sharp": result.u_sharp.values},
        "v_sharp": {"s": result.radial.s, "v_sharp": result.radial.v},
    }
    charts = {}
    if config.svg:
        charts["profiles"] = render_svg(
            {"u#": (s_u, result.u_sharp.values), "v#": (result.radial.s, result.radial.v)},
            title="Rearranged solution against the symmetrized solution",
            x_label="s",
            y_label="value",
            params=config.params(),
        )
    return RunResult(config, result.reports, tables=tables, charts=charts)


def _bossel_daners(ctx: ExperimentContext) -> RunResult:
    config = ctx.config
    report = bossel_daners_compare(ctx.grid, ctx.lambda_, ctx.drift, c_grid=config.c_grid)
    return RunResult(config, [report])


EXPERIMENT_HANDLERS: Dict[str, Handler] = {
    "gauge_eval": _gauge_eval,
    "gauge_check": _gauge_check,
    "perimeter": _perimeter,
    "isoperimetric": _isoperimetric,
    "harmonic": _harmonic,
    "flux_identity": _flux_identity,
    "rearrange": _rearrange,
    "coarea": _coarea,
    "pde_solve": _pde_solve,
    "pde_ode": _pde_ode,
    "pde_eigen": _pde_eigen,
    "polya_szego": _polya_szego,
    "sobolev": _sobolev,
    "moser": _moser,
    "talenti": _talenti,
    "bossel_daners": _bossel_daners,
}


# Execution


def execute(config: ExperimentConfig) -> RunResult:
    """
    Run one experiment without touching the filesystem.

    Report params carry the full config parameters; a tolerance override in the
    config replaces every report's tolerance.
    """
    logger.info(f"Running {config.experiment} with {config.params()}")
    result = EXPERIMENT_HANDLERS[config.experiment](ExperimentContext(config))
    reports = []
    for report in result.reports:
        update: Dict[str, Any] = {"params": {**config.params(), **report.params}}
        if config.tolerance is not None:
            update["tolerance"] = config.tolerance
        reports.append(report.model_copy(update=update))
    result.reports = reports
    failed = sum(not report.passed for report in reports)
    logger.info(f"{config.experiment}: {len(reports) - failed}/{len(reports)} reports passed")
    return result


def write_artifacts(result: RunResult, out_dir: Path, stem: str) -> List[Path]:
    """Append the reports and write the tables and charts of one result."""
    out_dir = Path(out_dir)
    paths = [append_reports(out_dir / REPORTS_FILE, result.reports)]
    for name, columns in result.tables.items():
        paths.append(write_csv(out_dir / f"{stem}_{name}.csv", columns))
    for name, document in result.charts.items():
        paths.append(write_svg(out_dir / f"{stem}_{name}.svg", document))
    result.artifacts.extend(paths)
    return paths


def _margin_charts(results: Sequence[RunResult], out_dir: Path) -> List[Path]:
    """Margin-against-h charts for experiments run at more than one spacing."""
    paths = []
    by_experiment: Dict[str, List[VerificationReport]] = {}
    for result in results:
        if result.config.svg:
            for report in (r for r in result.reports if "h" in r.params):
                by_experiment.setdefault(report.experiment, []).append(report)
    for experiment, reports in by_experiment.items():
        spacings = sorted({float(report.params["h"]) for report in reports})
        if len(spacings) < 2:
            continue
        margins = [min(r.margin for r in reports if float(r.params["h"]) == h) for h in spacings]
        tolerances = [max(r.tolerance for r in reports if float(r.params["h"]) == h) for h in spacings]
        params = {key: value for key, value in reports[0].params.items() if key != "h"}
        paths.append(margin_chart(out_dir / f"{experiment}_margins.svg", spacings, margins, tolerances, params))
    return paths


def run_experiment(config: ExperimentConfig, out_dir: Optional[Path] = None) -> RunResult:
    """
    Run one experiment and write its artifacts.

    Returns:
        RunResult whose ``exit_code`` is 0 when every report passed, else 1
    """
    out = Path(config.output_dir if out_dir is None else out_dir)
    result = execute(config)
    write_artifacts(result, out, f"000_{config.experiment}")
    return result


def run_batch(
    configs: Sequence[ExperimentConfig], jobs: Optional[int] = None, out_dir: Optional[Path] = None
) -> List[RunResult]:
    """
    Run experiments on a process pool of ``jobs`` workers.

    Results come back in config order and are written by this process, so the
    report file is ordered by experiment index.
    """
    jobs = settings.jobs if jobs is None else jobs
    if jobs < 1:
        raise ConfigError(f"jobs must be >= 1, got {jobs}", key="jobs")
    if jobs == 1 or len(configs) <= 1:
        results = [execute(config) for config in configs]
    else:
        logger.info(f"Running {len(configs)} experiments on {jobs} workers")
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(execute, configs))
    charts_dir = None
    for index, result in enumerate(results):
        out = Path(result.config.output_dir if out_dir is None else out_dir)
        write_artifacts(result, out, f"{index:03d}_{result.config.experiment}")
        charts_dir = charts_dir or out
    if charts_dir is not None:
        _margin_charts(results, charts_dir)
    return results
