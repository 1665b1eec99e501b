"""
Pydantic models for teacher targets, paired risk estimates, bound constants and
risk splits.
"""
import math
from typing import List, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy import special

from boundary_engine.schemas.routing import LinearExpertSet, LinearRouter, MoEModel
from boundary_engine.schemas.sampling import McEstimate


class TeacherSpec(BaseModel):
    """Noiseless hard-routed teacher: y(x) is the teacher's hard prediction."""
    model_config = ConfigDict(frozen=True)

    router: LinearRouter
    experts: LinearExpertSet

    @model_validator(mode="after")
    def _check_compatible(self) -> "TeacherSpec":
        # MoEModel performs the shape checks
        MoEModel(router=self.router, experts=self.experts, temperature=0.0)
        return self

    @property
    def model(self) -> MoEModel:
        return MoEModel(router=self.router, experts=self.experts, temperature=0.0)

    @property
    def dim(self) -> int:
        return self.router.dim


class RiskEstimate(BaseModel):
    """Paired soft/hard empirical risks on one batch."""
    model_config = ConfigDict(frozen=True)

    soft: McEstimate
    hard: McEstimate
    gap: float = Field(ge=0.0)
    tau: float

    @model_validator(mode="after")
    def _nonnegative(self) -> "RiskEstimate":
        if self.soft.value < 0 or self.hard.value < 0:
            raise ValueError("squared-error risks cannot be negative")
        return self

    @property
    def signed_gap(self) -> float:
        return self.soft.value - self.hard.value


class BoundConstants(BaseModel):
    """Empirical B_Y, B_f and fitted margin-tail constants (alpha, C_mt)."""
    model_config = ConfigDict(frozen=True)

    b_y: float = Field(ge=0.0)
    b_f: float = Field(ge=0.0)
    num_experts: int = Field(ge=2)
    alpha: Optional[float] = None
    c_mt: Optional[float] = None

    @property
    def c_sh(self) -> Optional[float]:
        """C_sh = 4 B_f (B_Y + B_f) (K-1) C_mt Gamma(alpha + 1)."""
        if self.alpha is None or self.c_mt is None:
            return None
        return (4.0 * self.b_f * (self.b_y + self.b_f) * (self.num_experts - 1)
                * self.c_mt * float(special.gamma(self.alpha + 1.0)))

    def uniform_gap_bound(self, tau: float) -> Optional[float]:
        c_sh = self.c_sh
        return None if c_sh is None else c_sh * tau ** self.alpha


class RiskSplit(BaseModel):
    """Excess risk split by the ambiguity indicator (unnormalized restrictions)."""
    model_config = ConfigDict(frozen=True)

    interior: float
    boundary: float
    total: float
    epsilon: float
    tau: float
    ambiguity_fraction: float = Field(ge=0.0, le=1.0)
    boundary_bound: float

    @property
    def additivity_error(self) -> float:
        return abs(self.interior + self.boundary - self.total) / max(abs(self.total), 1e-300)


class GapSweepRow(BaseModel):
    model_config = ConfigDict(frozen=True)

    tau: float
    max_gap: float
    argmax: int


class GapSweep(BaseModel):
    """Max over a parameter grid of the paired soft-hard gap, per temperature."""
    model_config = ConfigDict(frozen=True)

    rows: List[GapSweepRow]
    slope: Optional[float] = None

    @property
    def taus(self) -> np.ndarray:
        return np.array([row.tau for row in self.rows])

    @property
    def max_gaps(self) -> np.ndarray:
        return np.array([row.max_gap for row in self.rows])


class ShapeDerivativeCheck(BaseModel):
    """Central finite difference of the hard risk in the router bias vs the interface integral."""
    model_config = ConfigDict(frozen=True)

    fd_derivative: McEstimate
    surface_formula: McEstimate
    db: float
    step_too_large: bool = False

    @property
    def abs_diff(self) -> float:
        return abs(self.fd_derivative.value - self.surface_formula.value)

    @property
    def combined_std_error(self) -> float:
        return math.sqrt(self.fd_derivative.std_error ** 2 + self.surface_formula.std_error ** 2)

    def agrees(self, floor: float = 1e-3, n_se: float = 3.0) -> bool:
        return self.abs_diff <= max(floor, n_se * self.combined_std_error)
