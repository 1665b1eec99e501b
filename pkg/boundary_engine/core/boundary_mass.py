"""
Boundary-mass estimation: top-two, pairwise and K-way ambiguity profiles, the kappa
width constants, the Gaussian closed forms for linear scores, and margin-tail fits.

Slabs are closed: a point with margin exactly equal to the width is inside.
"""
import logging
import math
from itertools import combinations
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy import special, stats

from boundary_engine.core.moe_core import max_weight, pairwise_min_margin, top_two_margin
from boundary_engine.core.sampling import gaussian_sample, mc_mean
from boundary_engine.errors import InvalidArgumentError
from boundary_engine.schemas.boundary import (
    BoundaryMassEstimate,
    LinearScore,
    MarginTailFit,
    SlabSpec,
    TaxonomyNesting,
)
from boundary_engine.schemas.routing import MoEModel
from boundary_engine.schemas.sampling import GaussianLaw, SampleBatch

logger = logging.getLogger(__name__)

# margin-tail grids stay below this fraction of the router score std
DELTA_MAX_FRACTION = 0.2


def _check_epsilon(epsilon: float) -> float:
    epsilon = float(epsilon)
    if not 0.0 < epsilon < 0.5:
        raise InvalidArgumentError(f"epsilon must lie in (0, 1/2), got {epsilon}")
    return epsilon


def _check_positive(name: str, value: float) -> float:
    value = float(value)
    if not value > 0.0 or not math.isfinite(value):
        raise InvalidArgumentError(f"{name} must be positive and finite, got {value}")
    return value


def kappa_eps(epsilon: float) -> float:
    epsilon = _check_epsilon(epsilon)
    return math.log((1.0 - epsilon) / epsilon)


def kappa_eps_K(epsilon: float, num_experts: int) -> float:
    epsilon = _check_epsilon(epsilon)
    if num_experts < 2:
        raise InvalidArgumentError(f"K must be >= 2, got {num_experts}")
    return math.log((num_experts - 1) * (1.0 - epsilon) / epsilon)


def slab_spec(epsilon: float, tau: float, num_experts: int) -> SlabSpec:
    return SlabSpec(epsilon=_check_epsilon(epsilon), tau=_check_positive("tau", tau), num_experts=num_experts)


def _check_batch(model: MoEModel, batch: SampleBatch) -> np.ndarray:
    if batch.dim != model.dim:
        raise InvalidArgumentError(f"batch dimension {batch.dim} != model dimension {model.dim}")
    return model.router.logits(batch.points)


def bm_top_on_batch(model: MoEModel, batch: SampleBatch, w: float) -> BoundaryMassEstimate:
    w = _check_positive("width", w)
    margins = top_two_margin(_check_batch(model, batch))
    return BoundaryMassEstimate(kind="top", estimate=mc_mean(margins <= w), width_or_tau=w)


def bm_pair_on_batch(model: MoEModel, batch: SampleBatch, w: float) -> BoundaryMassEstimate:
    w = _check_positive("width", w)
    margins = pairwise_min_margin(_check_batch(model, batch))
    return BoundaryMassEstimate(kind="pair", estimate=mc_mean(margins <= w), width_or_tau=w)


def ambiguity_indicator(model: MoEModel, points: np.ndarray, epsilon: float, tau: float) -> np.ndarray:
    """1{x in U_eps(tau)}: no expert carries weight above 1 - eps."""
    return max_weight(model.router.logits(points), tau) <= 1.0 - epsilon


def bm_amb_on_batch(model: MoEModel, batch: SampleBatch, epsilon: float, tau: float) -> BoundaryMassEstimate:
    epsilon = _check_epsilon(epsilon)
    tau = _check_positive("tau", tau)
    _check_batch(model, batch)
    inside = ambiguity_indicator(model, batch.points, epsilon, tau)
    return BoundaryMassEstimate(kind="amb", estimate=mc_mean(inside), width_or_tau=tau, epsilon=epsilon)


def estimate_bm_top(model: MoEModel, law: GaussianLaw, w: float, n: int, seed: int) -> BoundaryMassEstimate:
    return bm_top_on_batch(model, gaussian_sample(law, n, seed), w)


def estimate_bm_pair(model: MoEModel, law: GaussianLaw, w: float, n: int, seed: int) -> BoundaryMassEstimate:
    return bm_pair_on_batch(model, gaussian_sample(law, n, seed), w)


def estimate_bm_amb(
    model: MoEModel,
    law: GaussianLaw,
    epsilon: float,
    tau: float,
    n: int,
    seed: int,
) -> BoundaryMassEstimate:
    return bm_amb_on_batch(model, gaussian_sample(law, n, seed), epsilon, tau)


def taxonomy_nesting(model: MoEModel, batch: SampleBatch, epsilon: float, tau: float) -> TaxonomyNesting:
    """
    Indicator-level check of
    1{Delta <= k_eps tau} <= 1{x in U_eps} <= 1{Delta <= k_eps,K tau} <= 1{Delta_min <= k_eps,K tau}.
    """
    spec = slab_spec(epsilon, tau, model.num_experts)
    logits = _check_batch(model, batch)
    margin = top_two_margin(logits)
    top_inner = margin <= spec.width_top
    ambiguous = max_weight(logits, tau) <= 1.0 - epsilon
    top_outer = margin <= spec.width_k
    pair_outer = pairwise_min_margin(logits) <= spec.width_k

    ordered = (top_inner <= ambiguous) & (ambiguous <= top_outer) & (top_outer <= pair_outer)
    violations = int(np.count_nonzero(~ordered))
    if violations:
        logger.warning("boundary-mass taxonomy nesting violated at %d of %d points", violations, batch.n)
    return TaxonomyNesting(
        top_at_kappa=float(np.mean(top_inner)),
        ambiguity=float(np.mean(ambiguous)),
        top_at_kappa_k=float(np.mean(top_outer)),
        pair_at_kappa_k=float(np.mean(pair_outer)),
        pointwise_violations=violations,
    )


def pairwise_union_check(model: MoEModel, batch: SampleBatch, w: float) -> int:
    """Number of points where 1{Delta_min <= w} exceeds sum_{k<l} 1{|S_kl| <= w} (expected 0)."""
    w = _check_positive("width", w)
    logits = _check_batch(model, batch)
    slab_count = np.zeros(batch.n, dtype=np.int64)
    for k, ell in combinations(range(model.num_experts), 2):
        slab_count += np.abs(logits[:, k] - logits[:, ell]) <= w
    near_tie = pairwise_min_margin(logits) <= w
    return int(np.count_nonzero(near_tie.astype(np.int64) > slab_count))


def analytic_slab_prob(score: LinearScore, r: float) -> float:
    """P(|S| <= r) for S ~ N(b, sigma_nu^2)."""
    if r == math.inf:
        return 1.0
    r = _check_positive("slab half-width", r)
    upper = special.ndtr((r - score.b) / score.sigma_nu)
    lower = special.ndtr((-r - score.b) / score.sigma_nu)
    return float(min(1.0, max(0.0, upper - lower)))


def coarea_coeff_gaussian(score: LinearScore, epsilon: float) -> float:
    """C_eps = 2 kappa_eps phi(b / sigma_nu) / sigma_nu: slab mass per unit temperature."""
    return 2.0 * kappa_eps(epsilon) * float(stats.norm.pdf(score.b / score.sigma_nu)) / score.sigma_nu


def coarea_linear_prediction(score: LinearScore, epsilon: float, tau: float) -> float:
    return coarea_coeff_gaussian(score, epsilon) * _check_positive("tau", tau)


def fit_loglog_slope(x: Sequence[float], y: Sequence[float]) -> Tuple[float, float]:
    """Unweighted least-squares fit of log y = slope * log x + intercept."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.shape[0] < 2:
        raise InvalidArgumentError("need at least two (x, y) pairs for a log-log fit")
    if np.any(x <= 0) or np.any(y <= 0):
        raise InvalidArgumentError("log-log fit needs positive values")
    slope, intercept = np.polyfit(np.log(x), np.log(y), 1)
    return float(slope), float(intercept)


def _check_grid(delta_grid: Sequence[float], delta_max: Optional[float]) -> np.ndarray:
    grid = np.asarray(delta_grid, dtype=np.float64)
    if grid.ndim != 1 or grid.shape[0] == 0:
        raise InvalidArgumentError("delta grid must be a nonempty list")
    if np.any(grid <= 0) or np.any(np.diff(grid) <= 0):
        raise InvalidArgumentError("delta grid must be positive and strictly increasing")
    if delta_max is not None and grid[-1] > delta_max:
        raise InvalidArgumentError(f"delta grid exceeds delta_0={delta_max}")
    return grid


def margin_tail_on_batch(
    model: MoEModel,
    batch: SampleBatch,
    delta_grid: Sequence[float],
    delta_max: Optional[float] = None,
) -> MarginTailFit:
    grid = _check_grid(delta_grid, delta_max)
    margins = pairwise_min_margin(_check_batch(model, batch))
    estimates = [mc_mean(margins <= delta) for delta in grid]

    values = np.array([e.value for e in estimates])
    usable = values > 0.0
    excluded = [float(delta) for delta in grid[~usable]]
    if excluded:
        logger.warning("margin tail fit: empty slab at deltas %s excluded", excluded)

    slope = intercept = None
    informative = False
    if np.count_nonzero(usable) >= 2:
        slope, intercept = fit_loglog_slope(grid[usable], values[usable])
        informative = bool(np.ptp(values[usable]) > 0.0 and np.all(values[usable] < 1.0))
    if not informative:
        logger.warning("margin tail fit is non-informative (degenerate or saturated estimates)")
    return MarginTailFit(
        deltas=[float(delta) for delta in grid],
        estimates=estimates,
        slope=slope,
        log_intercept=intercept,
        excluded=excluded,
        informative=informative,
    )


def default_delta_max(model: MoEModel, law: GaussianLaw) -> Optional[float]:
    """
    delta_0 = 0.2 sigma_nu, with sigma_nu the smallest score std over router row
    pairs with distinct weights; None when every pair shares its weights.
    """
    weight = model.router.weight
    stds = [law.score_std(weight[k] - weight[l]) for k, l in combinations(range(model.num_experts), 2)]
    stds = [s for s in stds if s > 0.0]
    if not stds:
        return None
    return DELTA_MAX_FRACTION * min(stds)


def margin_tail_slope(
    model: MoEModel,
    law: GaussianLaw,
    delta_grid: Sequence[float],
    n: int,
    seed: int,
    delta_max: Optional[float] = None,
) -> MarginTailFit:
    """margin_tail_on_batch on a fresh batch; delta_max defaults to default_delta_max."""
    if delta_max is None:
        delta_max = default_delta_max(model, law)
    return margin_tail_on_batch(model, gaussian_sample(law, n, seed), delta_grid, delta_max)
