"""
Exact routing mathematics: logits, softmax weights, margins, hard winner,
soft and hard predictors, and the pointwise softmax tail bound.

Every function accepts one logit vector (K,) or a batch (n, K) and works
along the last axis. Expert indices are 0-based.
"""
from typing import Optional, Tuple, Union

import numpy as np

from boundary_engine.errors import InvalidArgumentError
from boundary_engine.schemas.routing import ArrayLike, MoEModel

Scalar = Union[float, np.ndarray]


def validate_logits(z: ArrayLike) -> np.ndarray:
    """Return z as a float array of logit vectors (K >= 2, all finite)."""
    z = np.asarray(z, dtype=np.float64)
    if z.ndim == 0 or z.shape[-1] < 2:
        raise InvalidArgumentError(f"need at least K=2 logits, got shape {z.shape}")
    if not np.all(np.isfinite(z)):
        raise InvalidArgumentError("logits must be finite")
    return z


def _validate_tau(tau: float) -> float:
    tau = float(tau)
    if not np.isfinite(tau) or tau <= 0.0:
        raise InvalidArgumentError(f"temperature must be positive and finite, got {tau}")
    return tau


def softmax_weights(z: ArrayLike, tau: float) -> np.ndarray:
    z = validate_logits(z)
    tau = _validate_tau(tau)
    shifted = (z - np.max(z, axis=-1, keepdims=True)) / tau
    e = np.exp(shifted)
    return e / np.sum(e, axis=-1, keepdims=True)


def top_two_margin(z: ArrayLike) -> Scalar:
    """Largest logit minus the second largest; 0 exactly at ties."""
    z = np.sort(validate_logits(z), axis=-1)
    return z[..., -1] - z[..., -2]


def pairwise_min_margin(z: ArrayLike) -> Scalar:
    """min_{k != l} |z_k - z_l|, i.e. the smallest gap between sorted neighbours."""
    z = np.sort(validate_logits(z), axis=-1)
    return np.min(np.diff(z, axis=-1), axis=-1)


def hard_winner(z: ArrayLike) -> Union[int, np.ndarray]:
    """Index of the largest logit; ties go to the smallest index (bit-equal maxima only)."""
    return np.argmax(validate_logits(z), axis=-1)


def routing_logits(model: MoEModel, x: ArrayLike) -> np.ndarray:
    return model.router.logits(_validate_inputs(model, x))


def _validate_inputs(model: MoEModel, x: ArrayLike) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim not in (1, 2) or x.shape[-1] != model.dim:
        raise InvalidArgumentError(f"expected inputs of dimension {model.dim}, got shape {x.shape}")
    return x


def soft_predict(model: MoEModel, x: ArrayLike, tau: Optional[float] = None) -> Scalar:
    """sum_k p_k^(tau)(x) f_k(x); tau defaults to the model temperature."""
    tau = model.temperature if tau is None else tau
    if tau == 0.0:
        raise InvalidArgumentError("soft prediction needs tau > 0; use hard_predict or predict for tau = 0")
    x = _validate_inputs(model, x)
    weights = softmax_weights(model.router.logits(x), tau)
    return np.sum(weights * model.experts.outputs(x), axis=-1)


def hard_predict(model: MoEModel, x: ArrayLike) -> Scalar:
    x = _validate_inputs(model, x)
    winner = hard_winner(model.router.logits(x))
    outputs = model.experts.outputs(x)
    return np.take_along_axis(outputs, np.expand_dims(winner, -1), axis=-1)[..., 0]


def predict(model: MoEModel, x: ArrayLike) -> Scalar:
    """Temperature 0 selects the hard predictor, never a division by zero."""
    if model.is_hard:
        return hard_predict(model, x)
    return soft_predict(model, x)


def offwinner_mass_and_bound(z: ArrayLike, tau: float) -> Tuple[Scalar, Scalar]:
    """
    Softmax tail, pointwise: actual = 1 - max_k p_k and bound = (K-1) exp(-Delta/tau).

    The off-winner mass is summed directly from the shifted exponentials so that
    tiny tails are not lost to cancellation in 1 - p_max.
    """
    z = validate_logits(z)
    tau = _validate_tau(tau)
    num_experts = z.shape[-1]
    winner = np.argmax(z, axis=-1)
    e = np.exp((z - np.max(z, axis=-1, keepdims=True)) / tau)
    is_winner = np.arange(num_experts) == np.expand_dims(winner, -1)
    others = np.sum(np.where(is_winner, 0.0, e), axis=-1)
    actual = others / (1.0 + others)
    bound = (num_experts - 1) * np.exp(-top_two_margin(z) / tau)
    return actual, bound


def max_weight(z: ArrayLike, tau: float) -> Scalar:
    return np.max(softmax_weights(z, tau), axis=-1)
