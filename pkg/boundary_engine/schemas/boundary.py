"""
Pydantic models for slab widths, boundary-mass estimates, Gaussian linear scores and tail fits.
"""
import math
from typing import List, Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from boundary_engine.schemas.arrays import Vector
from boundary_engine.schemas.sampling import GaussianLaw, McEstimate


class SlabSpec(BaseModel):
    """Top-two and K-way widths kappa_eps*tau and kappa_{eps,K}*tau."""
    model_config = ConfigDict(frozen=True)

    epsilon: float = Field(gt=0.0, lt=0.5)
    tau: float = Field(gt=0.0)
    num_experts: int = Field(ge=2)

    @property
    def kappa(self) -> float:
        return math.log((1.0 - self.epsilon) / self.epsilon)

    @property
    def kappa_k(self) -> float:
        return math.log((self.num_experts - 1) * (1.0 - self.epsilon) / self.epsilon)

    @property
    def width_top(self) -> float:
        return self.kappa * self.tau

    @property
    def width_k(self) -> float:
        return self.kappa_k * self.tau


class BoundaryMassEstimate(BaseModel):
    """One of BM^top(w), BM^pair(w) or BM^amb_eps(tau)."""
    model_config = ConfigDict(frozen=True)

    kind: Literal["top", "pair", "amb"]
    estimate: McEstimate
    width_or_tau: float
    epsilon: Optional[float] = None

    @field_validator("estimate")
    @classmethod
    def _probability(cls, estimate: McEstimate) -> McEstimate:
        if not 0.0 <= estimate.value <= 1.0:
            raise ValueError(f"boundary mass must lie in [0, 1], got {estimate.value}")
        return estimate

    @property
    def value(self) -> float:
        return self.estimate.value


class LinearScore(BaseModel):
    """
    Score S(x) = <nu, x> + offset under a Gaussian law. `b` is the mean of S under
    that law and `sigma_nu` its standard deviation sqrt(nu^T Sigma nu).
    """
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    nu: Vector
    b: float
    sigma_nu: float = Field(gt=0.0)

    @model_validator(mode="after")
    def _nonzero(self) -> "LinearScore":
        if not np.any(self.nu != 0.0):
            raise ValueError("score direction nu must be nonzero")
        return self

    @classmethod
    def from_law(cls, nu, offset: float, law: GaussianLaw) -> "LinearScore":
        nu = np.asarray(nu, dtype=np.float64)
        return cls(nu=nu, b=float(offset + nu @ law.mean), sigma_nu=law.score_std(nu))


class MarginTailFit(BaseModel):
    """P(Delta_min <= delta) over a grid and the OLS log-log slope."""
    model_config = ConfigDict(frozen=True)

    deltas: List[float]
    estimates: List[McEstimate]
    slope: Optional[float] = None
    log_intercept: Optional[float] = None
    excluded: List[float] = Field(default_factory=list)
    informative: bool = True

    @property
    def constant(self) -> Optional[float]:
        """C_mt in P(Delta_min <= t) ~ C_mt t^alpha."""
        return None if self.log_intercept is None else math.exp(self.log_intercept)


class TaxonomyNesting(BaseModel):
    """Shared-batch fractions of the four nested boundary events."""
    model_config = ConfigDict(frozen=True)

    top_at_kappa: float
    ambiguity: float
    top_at_kappa_k: float
    pair_at_kappa_k: float
    pointwise_violations: int

    @property
    def nested(self) -> bool:
        return self.pointwise_violations == 0
