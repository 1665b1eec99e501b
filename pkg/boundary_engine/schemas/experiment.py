"""
Pydantic models for experiment configuration, output rows, run summaries and the
verification report.
"""
from typing import Any, Dict, List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator

from boundary_engine.errors import InvariantFailureError

ExperimentName = Literal["exp1", "exp2", "exp3", "verify"]

GRID_FIELDS = ("tau_grid", "offset_grid", "sweep_angles", "sweep_offsets")


class ExperimentConfig(BaseModel):
    """Flat run configuration. Unknown keys are rejected."""
    model_config = ConfigDict(extra="forbid", frozen=True)

    experiment: ExperimentName
    seed: int = Field(default=42, ge=0, lt=2 ** 64)
    samples: int = Field(default=1_000_000, ge=2)
    dim: int = Field(default=4, ge=1)
    tau_grid: List[float] = Field(default_factory=lambda: [0.02, 0.05, 0.1, 0.2])
    offset_grid: List[float] = Field(default_factory=lambda: [0.0])
    epsilon: float = Field(default=0.25, gt=0.0, lt=0.5)
    contrast_norm: float = Field(default=2.0, ge=0.0)
    perturbation: float = Field(default=0.063, gt=0.0)
    eta: float = Field(default=0.05, gt=0.0)
    steps: int = Field(default=2000, ge=0)
    student_contrast: float = Field(default=0.2, ge=0.0)
    initial_alignment: float = Field(default=0.05, ge=0.0, le=1.0)
    sweep_angles: List[float] = Field(default_factory=lambda: [-0.02, -0.01, 0.0, 0.01, 0.02])
    sweep_offsets: List[float] = Field(default_factory=lambda: [-0.02, -0.01, 0.0, 0.01, 0.02])
    sweep_samples: int = Field(default=100_000, ge=2)
    shape_samples: int = Field(default=4_000_000, ge=2)
    output_dir: str = "outputs"
    workers: int = Field(default=1, ge=1)

    @field_validator(*GRID_FIELDS)
    @classmethod
    def _sorted_grid(cls, grid: List[float]) -> List[float]:
        if not grid:
            raise ValueError("grid must be nonempty")
        if any(b <= a for a, b in zip(grid, grid[1:])):
            raise ValueError(f"grid must be strictly increasing, got {grid}")
        return grid

    @field_validator("tau_grid")
    @classmethod
    def _positive_taus(cls, grid: List[float]) -> List[float]:
        if grid[0] <= 0.0:
            raise ValueError("temperatures must be positive")
        return grid


class Exp1Record(BaseModel):
    model_config = ConfigDict(frozen=True)

    tau: float = Field(gt=0.0)
    bm_mc: float = Field(ge=0.0, le=1.0)
    bm_analytic: float = Field(ge=0.0, le=1.0)
    gap: float = Field(ge=0.0)
    gap_over_tau: float = Field(ge=0.0)
    seed: int
    n: int


class Exp2Record(BaseModel):
    model_config = ConfigDict(frozen=True)

    offset: float
    bm: float = Field(ge=0.0, le=1.0)
    gap: float = Field(ge=0.0)
    flip: float = Field(ge=0.0, le=1.0)
    seed: int
    n: int


class Exp3Record(BaseModel):
    model_config = ConfigDict(frozen=True)

    tau: float = Field(gt=0.0)
    risk: float = Field(ge=0.0)
    align: float = Field(ge=0.0, le=1.0)
    unorm: float = Field(ge=0.0)
    bm: float = Field(ge=0.0, le=1.0)
    entropy: float = Field(ge=0.0)
    diverged: bool = False
    seed: int
    n: int


class DataTable(BaseModel):
    """Named columns of numbers; used for traces and plot-ready files."""
    columns: List[str]
    rows: List[List[float]] = Field(default_factory=list)


class ExperimentResult(BaseModel):
    """Everything a runner produces before it is written to disk."""
    experiment: ExperimentName
    columns: List[str]
    records: List[Dict[str, Any]]
    metrics: Dict[str, Any] = Field(default_factory=dict)
    assumptions: List[str] = Field(default_factory=list)
    limitations: List[str] = Field(default_factory=list)
    traces: Dict[str, DataTable] = Field(default_factory=dict)
    plots: Dict[str, DataTable] = Field(default_factory=dict)
    table: str = ""


class ExperimentSummary(BaseModel):
    """JSON envelope written next to every experiment's CSV."""
    experiment: ExperimentName
    version: str
    seed: int
    n: int
    wall_time_sec: float
    config_hash: str
    metrics: Dict[str, Any]
    assumptions: List[str] = Field(default_factory=list)
    limitations: List[str] = Field(default_factory=list)


class CheckResult(BaseModel):
    name: str
    passed: bool
    observed: Optional[float] = None
    tolerance: Optional[float] = None
    detail: str = ""


class VerifyReport(BaseModel):
    checks: List[CheckResult]

    @property
    def passed(self) -> bool:
        return all(check.passed for check in self.checks)

    @property
    def failures(self) -> List[CheckResult]:
        return [check for check in self.checks if not check.passed]

    def require_passed(self) -> "VerifyReport":
        if not self.passed:
            names = ", ".join(check.name for check in self.failures)
            raise InvariantFailureError(f"{len(self.failures)} verification checks failed: {names}")
        return self
