"""
Pydantic models for the reduced two-expert symmetry-breaking model: teacher
geometry, the response function g, the effective operator M and training traces.
"""
from typing import Callable, Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, PrivateAttr, field_validator, model_validator

from boundary_engine.schemas.arrays import Matrix, Vector
from boundary_engine.schemas.sampling import GaussianLaw, McEstimate

UNIT_TOL = 1e-12


class SymmetrySpec(BaseModel):
    """
    Teacher partition {v.x >= 0} / {v.x < 0} with experts m(x) +- d_star.x / 2
    under X ~ N(0, covariance); m is the affine baseline (zero by default).
    """
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    v: Vector
    d_star: Vector
    covariance: Matrix
    baseline_weight: Optional[Vector] = None
    baseline_bias: float = 0.0

    @model_validator(mode="after")
    def _check(self) -> "SymmetrySpec":
        d = self.v.shape[0]
        if abs(float(np.linalg.norm(self.v)) - 1.0) > UNIT_TOL:
            raise ValueError(f"teacher separator v must be a unit vector, got norm {np.linalg.norm(self.v)}")
        if self.d_star.shape != (d,) or self.covariance.shape != (d, d):
            raise ValueError("v, d_star and covariance dimensions disagree")
        if self.baseline_weight is not None and self.baseline_weight.shape != (d,):
            raise ValueError("baseline weight has the wrong dimension")
        return self

    @property
    def dim(self) -> int:
        return self.v.shape[0]

    @property
    def law(self) -> GaussianLaw:
        return GaussianLaw(mean=np.zeros(self.dim), covariance=self.covariance)

    def baseline(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64)
        if self.baseline_weight is None:
            return np.full(points.shape[:-1], self.baseline_bias)
        return points @ self.baseline_weight + self.baseline_bias

    def targets(self, points: np.ndarray) -> np.ndarray:
        """Noiseless teacher response; the interface v.x = 0 belongs to expert 1."""
        points = np.asarray(points, dtype=np.float64)
        side = np.where(points @ self.v >= 0.0, 1.0, -1.0)
        return self.baseline(points) + 0.5 * side * (points @ self.d_star)


class ResponseFn(BaseModel):
    """
    Odd response g. Built-in kinds: sign, tanh(gamma z), linear (g(z) = z);
    `custom` wraps a callable, and only supports kappa_g when `quadrature` is set.
    """
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    kind: Literal["sign", "tanh", "linear", "custom"]
    gamma: float = Field(default=1.0, gt=0.0)
    fn: Optional[Callable[[np.ndarray], np.ndarray]] = Field(default=None, exclude=True)
    quadrature: bool = False

    @model_validator(mode="after")
    def _check_custom(self) -> "ResponseFn":
        if self.kind == "custom" and self.fn is None:
            raise ValueError("custom response needs a callable `fn`")
        return self

    @classmethod
    def sign(cls) -> "ResponseFn":
        return cls(kind="sign")

    @classmethod
    def tanh(cls, gamma: float) -> "ResponseFn":
        return cls(kind="tanh", gamma=gamma)

    @classmethod
    def linear(cls) -> "ResponseFn":
        return cls(kind="linear")

    def evaluate(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=np.float64)
        if self.kind == "sign":
            return np.sign(z)
        if self.kind == "tanh":
            return np.tanh(self.gamma * z)
        if self.kind == "linear":
            return z.copy()
        return np.asarray(self.fn(z), dtype=np.float64)

    def is_odd(self, z, atol: float = 1e-12) -> bool:
        return bool(np.allclose(self.evaluate(-np.asarray(z)), -self.evaluate(z), rtol=0.0, atol=atol))

    def has_sign_condition(self, z) -> bool:
        z = np.asarray(z, dtype=np.float64)
        return bool(np.all(self.evaluate(z) * z >= 0.0))


class EffectiveOperator(BaseModel):
    """Symmetric d x d operator with its eigenpairs, eigenvalues in descending order."""
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    matrix: Matrix
    rayleigh: Optional[McEstimate] = None

    _eigenvalues: np.ndarray = PrivateAttr()
    _eigenvectors: np.ndarray = PrivateAttr()

    @field_validator("matrix")
    @classmethod
    def _symmetrize(cls, matrix: np.ndarray) -> np.ndarray:
        if matrix.shape[0] != matrix.shape[1] or matrix.shape[0] < 1:
            raise ValueError(f"operator must be square, got shape {matrix.shape}")
        sym = 0.5 * (matrix + matrix.T)
        sym.flags.writeable = False
        return sym

    @model_validator(mode="after")
    def _decompose(self) -> "EffectiveOperator":
        values, vectors = np.linalg.eigh(self.matrix)
        order = np.argsort(values)[::-1]
        values, vectors = values[order], vectors[:, order]
        values.flags.writeable = False
        vectors.flags.writeable = False
        self._eigenvalues = values
        self._eigenvectors = vectors
        return self

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def eigenvalues(self) -> np.ndarray:
        return self._eigenvalues

    @property
    def eigenvectors(self) -> np.ndarray:
        """Columns are the orthonormal eigenvectors w_1..w_d."""
        return self._eigenvectors

    def reconstruction_error(self) -> float:
        w, lam = self._eigenvectors, self._eigenvalues
        rebuilt = (w * lam) @ w.T
        scale = max(float(np.linalg.norm(self.matrix)), 1e-300)
        return float(np.linalg.norm(rebuilt - self.matrix)) / scale


class TraceStep(BaseModel):
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    step: int = Field(ge=0)
    u: Vector
    alignment: float = Field(ge=0.0, le=1.0)
    risk: float = Field(ge=0.0)
    entropy: float = Field(ge=0.0)
    boundary_mass: float = Field(ge=0.0, le=1.0)
    unorm: float = Field(ge=0.0)


class RouterTrace(BaseModel):
    """
    Router-only gradient descent on the reduced soft risk. Entry t of every array
    belongs to the iterate after t updates; `final` is the last one as a TraceStep.
    """
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    us: Matrix
    alignments: Vector
    risks: Vector
    entropies: Vector
    boundary_masses: Vector
    final: TraceStep
    eta: float = Field(gt=0.0)
    tau: float = Field(gt=0.0)
    seed: int
    n: int
    initial_alignment: float = Field(ge=0.0, le=1.0)
    diverged: bool = False

    @model_validator(mode="after")
    def _check_lengths(self) -> "RouterTrace":
        if not ({len(self.us), len(self.alignments), len(self.risks), len(self.entropies),
                len(self.boundary_masses)} == {self.final.step + 1}):
            raise ValueError("trace arrays must hold one entry per recorded step")
        return self

    @property
    def num_steps(self) -> int:
        return self.final.step
