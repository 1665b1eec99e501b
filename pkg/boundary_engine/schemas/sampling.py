"""
Pydantic models for the input law, sample batches and Monte Carlo estimates.
"""
import math

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, PrivateAttr, model_validator

from boundary_engine.schemas.arrays import Matrix, Vector

SYMMETRY_TOL = 1e-12
PIVOT_TOL = 1e-12


class GaussianLaw(BaseModel):
    """Input law N(mean, covariance) with a cached lower Cholesky factor."""
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    mean: Vector
    covariance: Matrix
    _chol: np.ndarray = PrivateAttr()

    @model_validator(mode="after")
    def _factorize(self) -> "GaussianLaw":
        d = self.mean.shape[0]
        cov = self.covariance
        if d < 1 or cov.shape != (d, d):
            raise ValueError(f"covariance must be {d}x{d}, got shape {cov.shape}")
        scale = max(1.0, float(np.max(np.abs(cov))))
        if np.max(np.abs(cov - cov.T)) > SYMMETRY_TOL * scale:
            raise ValueError("covariance is not symmetric")
        try:
            chol = np.linalg.cholesky(cov)
        except np.linalg.LinAlgError as e:
            raise ValueError(f"covariance is not positive definite: {e}") from e
        pivots = np.diag(chol) ** 2
        if np.min(pivots) < PIVOT_TOL * float(np.max(np.diag(cov))):
            raise ValueError("covariance is numerically singular (Cholesky pivot below tolerance)")
        chol.flags.writeable = False
        self._chol = chol
        return self

    @classmethod
    def standard(cls, d: int) -> "GaussianLaw":
        return cls(mean=np.zeros(d), covariance=np.eye(d))

    @classmethod
    def diagonal(cls, variances) -> "GaussianLaw":
        variances = np.asarray(variances, dtype=np.float64)
        return cls(mean=np.zeros(variances.shape[0]), covariance=np.diag(variances))

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    @property
    def chol(self) -> np.ndarray:
        return self._chol

    def score_std(self, nu: np.ndarray) -> float:
        """sqrt(nu^T Sigma nu), the standard deviation of <nu, X>."""
        nu = np.asarray(nu, dtype=np.float64)
        return float(np.sqrt(nu @ self.covariance @ nu))


class SampleBatch(BaseModel):
    """n draws from a GaussianLaw, tagged with the seed that produced them."""
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    points: Matrix
    seed: int

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]


class McEstimate(BaseModel):
    """Monte Carlo mean with standard error = sample sd / sqrt(n)."""
    model_config = ConfigDict(frozen=True)

    value: float
    std_error: float = Field(ge=0.0)
    n: int = Field(ge=1)

    def within(self, target: float, n_se: float = 3.0, floor: float = 0.0) -> bool:
        return abs(self.value - target) <= max(floor, n_se * self.std_error)

    def __float__(self) -> float:
        return self.value


def combined_std_error(*estimates: McEstimate) -> float:
    return math.sqrt(sum(e.std_error ** 2 for e in estimates))
