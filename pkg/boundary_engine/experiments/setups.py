"""
Model families shared by the experiments and the verification suite.
"""
import numpy as np

from boundary_engine.errors import InvalidArgumentError
from boundary_engine.schemas.risk import TeacherSpec
from boundary_engine.schemas.routing import LinearExpertSet, LinearRouter


def two_expert_teacher(dim: int, contrast_norm: float, offset: float = 0.0) -> TeacherSpec:
    """
    Router score S(x) = x_1 + offset (logits (S, 0)), so Delta = |S| and the gate is
    expit(S / tau). Expert slopes differ by contrast_norm * e_2, tangent to every
    translated interface, and share the component 0.5 e_3.
    """
    if dim < 3:
        raise InvalidArgumentError(f"the two-expert Gaussian setup needs dim >= 3, got {dim}")
    weight = np.zeros((2, dim))
    weight[0, 0] = 1.0
    slopes = np.zeros((2, dim))
    slopes[0, 1], slopes[1, 1] = 0.5 * contrast_norm, -0.5 * contrast_norm
    slopes[:, 2] = 0.5
    return TeacherSpec(
        router=LinearRouter(weight=weight, bias=np.array([float(offset), 0.0])),
        experts=LinearExpertSet(weights=slopes, biases=np.zeros(2)),
    )
