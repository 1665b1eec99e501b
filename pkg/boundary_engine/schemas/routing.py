"""
Pydantic models for the routed predictor: linear router, linear experts and the MoE model.
"""
from typing import Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from boundary_engine.schemas.arrays import Matrix, Vector

ArrayLike = Union[np.ndarray, list, tuple]


class LinearRouter(BaseModel):
    """Router logits a_k(x) = <weight[k], x> + bias[k]"""
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    weight: Matrix
    bias: Vector

    @model_validator(mode="after")
    def _check_shapes(self) -> "LinearRouter":
        k, d = self.weight.shape
        if k < 2:
            raise ValueError(f"router needs K >= 2 rows, got {k}")
        if d < 1:
            raise ValueError("router needs input dimension d >= 1")
        if self.bias.shape != (k,):
            raise ValueError(f"bias must have length K={k}, got shape {self.bias.shape}")
        return self

    @property
    def num_experts(self) -> int:
        return self.weight.shape[0]

    @property
    def dim(self) -> int:
        return self.weight.shape[1]

    def logits(self, x: ArrayLike) -> np.ndarray:
        """Logits for one point (d,) -> (K,) or a batch (n, d) -> (n, K)."""
        return np.asarray(x, dtype=np.float64) @ self.weight.T + self.bias

    def scaled(self, factor: float) -> "LinearRouter":
        return LinearRouter(weight=self.weight * factor, bias=self.bias * factor)


class LinearExpertSet(BaseModel):
    """Affine experts f_k(x) = <weights[k], x> + biases[k]"""
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    weights: Matrix
    biases: Vector

    @model_validator(mode="after")
    def _check_shapes(self) -> "LinearExpertSet":
        k, _ = self.weights.shape
        if k < 1:
            raise ValueError("expert set is empty")
        if self.biases.shape != (k,):
            raise ValueError(f"biases must have length K={k}, got shape {self.biases.shape}")
        return self

    @property
    def num_experts(self) -> int:
        return self.weights.shape[0]

    @property
    def dim(self) -> int:
        return self.weights.shape[1]

    def outputs(self, x: ArrayLike) -> np.ndarray:
        """Expert values for one point (d,) -> (K,) or a batch (n, d) -> (n, K)."""
        return np.asarray(x, dtype=np.float64) @ self.weights.T + self.biases


class MoEModel(BaseModel):
    """Soft MoE predictor; temperature 0 is the hard-routing sentinel."""
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    router: LinearRouter
    experts: LinearExpertSet
    temperature: float = Field(default=1.0, ge=0.0)

    @model_validator(mode="after")
    def _check_compatible(self) -> "MoEModel":
        if self.router.num_experts != self.experts.num_experts:
            raise ValueError(
                f"router has K={self.router.num_experts} rows but there are {self.experts.num_experts} experts"
            )
        if self.router.dim != self.experts.dim:
            raise ValueError(f"router dimension {self.router.dim} != expert dimension {self.experts.dim}")
        return self

    @property
    def num_experts(self) -> int:
        return self.router.num_experts

    @property
    def dim(self) -> int:
        return self.router.dim

    @property
    def is_hard(self) -> bool:
        return self.temperature == 0.0

    def with_temperature(self, tau: float) -> "MoEModel":
        return MoEModel(router=self.router, experts=self.experts, temperature=tau)

    def with_router(self, router: LinearRouter) -> "MoEModel":
        return MoEModel(router=router, experts=self.experts, temperature=self.temperature)
