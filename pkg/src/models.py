"""
Pydantic models shared by the verification experiments and the CLI.
"""

import json
import math
from typing import Any, Dict, List, Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, computed_field, field_validator, model_validator

EXPERIMENTS = (
    "gauge_eval",
    "gauge_check",
    "perimeter",
    "isoperimetric",
    "harmonic",
    "flux_identity",
    "rearrange",
    "coarea",
    "pde_solve",
    "pde_ode",
    "pde_eigen",
    "polya_szego",
    "sobolev",
    "moser",
    "talenti",
    "bossel_daners",
)

ExperimentName = Literal[
    "gauge_eval",
    "gauge_check",
    "perimeter",
    "isoperimetric",
    "harmonic",
    "flux_identity",
    "rearrange",
    "coarea",
    "pde_solve",
    "pde_ode",
    "pde_eigen",
    "polya_szego",
    "sobolev",
    "moser",
    "talenti",
    "bossel_daners",
]


def to_jsonable(value: Any) -> Any:
    """Convert numpy scalars/arrays and non-finite floats into JSON-safe values."""
    if isinstance(value, dict):
        return {str(key): to_jsonable(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(item) for item in value]
    if isinstance(value, np.ndarray):
        return [to_jsonable(item) for item in value.tolist()]
    if isinstance(value, (np.bool_, bool)):
        return bool(value)
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return value if math.isfinite(value) else None
    return value


class VerificationReport(BaseModel):
    """Model for one inequality experiment."""

    model_config = ConfigDict(frozen=True)

    experiment: str = Field(..., description="Experiment name")
    params: Dict[str, Any] = Field(default_factory=dict, description="lambda, p, n, h, seed")
    lhs: float = Field(..., description="Left-hand side of the tested inequality")
    rhs: float = Field(..., description="Right-hand side of the tested inequality")
    tolerance: float = Field(..., ge=0, description="Allowed negative margin")
    metadata: Dict[str, Any] = Field(default_factory=dict, description="Residuals, flags, runtimes")

    @field_validator("lhs", "rhs", "tolerance")
    @classmethod
    def validate_finite(cls, value: float) -> float:
        """All numeric report fields must be finite."""
        if not math.isfinite(value):
            raise ValueError("report values must be finite")
        return float(value)

    @field_validator("params", "metadata")
    @classmethod
    def validate_jsonable(cls, value: Dict[str, Any]) -> Dict[str, Any]:
        return to_jsonable(value)

    @computed_field
    @property
    def margin(self) -> float:
        return self.lhs - self.rhs

    @computed_field
    @property
    def passed(self) -> bool:
        return self.margin >= -self.tolerance

    def to_json_line(self) -> str:
        """Serialize in the documented key order as one JSON line."""
        payload = {
            "experiment": self.experiment,
            "params": to_jsonable(self.params),
            "lhs": self.lhs,
            "rhs": self.rhs,
            "margin": self.margin,
            "tolerance": self.tolerance,
            "passed": self.passed,
            "metadata": to_jsonable(self.metadata),
        }
        return json.dumps(payload, allow_nan=False)

    @classmethod
    def from_json_line(cls, line: str) -> "VerificationReport":
        """Rebuild a report; ``margin`` and ``passed`` are recomputed."""
        payload = json.loads(line)
        payload.pop("margin", None)
        payload.pop("passed", None)
        return cls(**payload)


class ObstacleSpec(BaseModel):
    """Convex obstacle parameters from an experiment config."""

    model_config = ConfigDict(extra="forbid")

    kind: Literal["halfspace", "ball", "polytope"] = Field(default="halfspace")
    normal: Optional[List[float]] = Field(default=None, description="Outward normal of E (halfspace)")
    offset: float = Field(default=0.0, description="E = {<normal, x> <= offset}")
    center: Optional[List[float]] = Field(default=None, description="Ball center")
    radius: float = Field(default=1.0, gt=0, description="Ball radius")
    normals: Optional[List[List[float]]] = Field(default=None, description="Polytope normals")
    offsets: Optional[List[float]] = Field(default=None, description="Polytope offsets")


class OuterSpec(BaseModel):
    """Outer region bounding the domain."""

    model_config = ConfigDict(extra="forbid")

    kind: Literal["box", "ball", "lshape", "cap"] = Field(default="box")
    lo: Optional[List[float]] = Field(default=None)
    hi: Optional[List[float]] = Field(default=None)
    center: Optional[List[float]] = Field(default=None)
    radius: float = Field(default=1.0, gt=0)
    notch_lo: Optional[List[float]] = Field(default=None, description="Removed corner box (lshape)")
    notch_hi: Optional[List[float]] = Field(default=None)


class ExperimentConfig(BaseModel):
    """Fully validated experiment configuration."""

    model_config = ConfigDict(extra="forbid", populate_by_name=True)

    experiment: ExperimentName = Field(..., description="Experiment to run")
    lambda_: float = Field(default=0.0, alias="lambda", description="Contact parameter")
    p: float = Field(default=2.0, description="Exponent")
    n: int = Field(default=2, description="Dimension (2 or 3)")
    spacing: float = Field(default=1.0 / 32.0, description="Grid spacing h")
    seed: int = Field(default=0, description="Base RNG seed")
    obstacle: ObstacleSpec = Field(default_factory=ObstacleSpec)
    outer: Optional[OuterSpec] = Field(default=None, description="Defaults per experiment")

    # Tolerance overrides
    c_grid: Optional[float] = Field(default=None, gt=0)
    tolerance: Optional[float] = Field(default=None, ge=0, description="Absolute tolerance override")

    # Output
    output_dir: str = Field(default="capsym-out")
    svg: bool = Field(default=False)

    # Experiment-specific knobs
    moser_convention: Literal["proposition", "theorem"] = Field(default="proposition")
    fields: int = Field(default=10, ge=1, description="Random fields per suite")
    ks: List[int] = Field(default_factory=lambda: [4, 8, 16], description="Moser sequence indices")
    scale: float = Field(default=1.0, gt=0, description="Moser exponent scale")
    radii: List[float] = Field(default_factory=lambda: [4.0, 8.0, 16.0, 32.0])
    source: Literal["one", "indicator"] = Field(default="one")
    outer_bc: Literal["match_analytic", "homogeneous_neumann"] = Field(default="match_analytic")
    drift: Literal["analytic", "numerical"] = Field(default="analytic")
    xi: Optional[List[float]] = Field(default=None, description="Vector for gauge_eval")
    samples: int = Field(default=1000, ge=1)

    @field_validator("lambda_")
    @classmethod
    def validate_lambda(cls, value: float) -> float:
        if not -1.0 < value < 1.0:
            raise ValueError("lambda must lie strictly inside (-1,1)")
        return value

    @field_validator("n")
    @classmethod
    def validate_dimension(cls, value: int) -> int:
        if value not in (2, 3):
            raise ValueError("n must be 2 or 3")
        return value

    @field_validator("spacing")
    @classmethod
    def validate_spacing(cls, value: float) -> float:
        if not value > 0:
            raise ValueError("spacing must be > 0")
        return value

    @field_validator("ks")
    @classmethod
    def validate_ks(cls, value: List[int]) -> List[int]:
        if not value or min(value) < 1:
            raise ValueError("ks must be a nonempty list of integers >= 1")
        return sorted(value)

    @model_validator(mode="after")
    def validate_exponent(self) -> "ExperimentConfig":
        """Exponent ranges depend on the experiment."""
        if self.p < 1:
            raise ValueError("p must be >= 1")
        if self.experiment == "sobolev" and not 1 < self.p < self.n:
            raise ValueError(f"sobolev needs 1 < p < n (got p={self.p}, n={self.n})")
        if self.experiment in ("pde_solve", "talenti", "pde_eigen", "bossel_daners") and self.p != 2:
            raise ValueError("the mixed problem and eigenvalue experiments use p = 2")
        for vector_name in ("lo", "hi", "center", "notch_lo", "notch_hi"):
            vector = getattr(self.outer, vector_name, None) if self.outer else None
            if vector is not None and len(vector) != self.n:
                raise ValueError(f"outer {vector_name} must have {self.n} components")
        return self

    def params(self) -> Dict[str, Any]:
        """Report parameters for this config."""
        return {"lambda": self.lambda_, "p": self.p, "n": self.n, "h": self.spacing, "seed": self.seed}
