"""
Soft and hard population risks against a hard-routed teacher, the soft-hard gap
and its bound chain, the interior/boundary risk split, uniform gap sweeps, and
the finite-difference check of the hard-risk shape derivative.

Soft/hard comparisons are always paired: both risks are evaluated on one shared
batch. Bound checks use empirical sups (B_Y, B_f) taken on that same batch.
"""
import logging
import math
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import stats

from boundary_engine.core.boundary_mass import (
    _check_epsilon,
    ambiguity_indicator,
    fit_loglog_slope,
    margin_tail_on_batch,
)
from boundary_engine.core.moe_core import (
    hard_predict,
    hard_winner,
    predict,
    soft_predict,
    softmax_weights,
    top_two_margin,
)
from boundary_engine.core.sampling import (
    DEFAULT_CHUNK_SIZE,
    McAccumulator,
    gaussian_sample,
    iter_gaussian_chunks,
    mc_mean,
)
from boundary_engine.errors import InvalidArgumentError
from boundary_engine.schemas.risk import (
    BoundConstants,
    GapSweep,
    GapSweepRow,
    RiskEstimate,
    RiskSplit,
    ShapeDerivativeCheck,
    TeacherSpec,
)
from boundary_engine.schemas.routing import LinearRouter, MoEModel
from boundary_engine.schemas.sampling import GaussianLaw, McEstimate, SampleBatch

logger = logging.getLogger(__name__)

# finite-difference steps above this fraction of sigma_nu are flagged
FD_STEP_LIMIT = 1e-3


def teacher_response(teacher: TeacherSpec, points: np.ndarray) -> np.ndarray:
    return hard_predict(teacher.model, points)


def _check_pair(student: MoEModel, teacher: TeacherSpec, batch: SampleBatch) -> None:
    if batch.n < 2:
        raise InvalidArgumentError(f"need a batch of at least 2 points, got {batch.n}")
    if student.dim != teacher.dim or batch.dim != student.dim:
        raise InvalidArgumentError(
            f"dimension mismatch: student {student.dim}, teacher {teacher.dim}, batch {batch.dim}"
        )


def _positive_tau(student: MoEModel, tau: Optional[float] = None) -> float:
    tau = student.temperature if tau is None else float(tau)
    if not tau > 0.0 or not math.isfinite(tau):
        raise InvalidArgumentError(f"this check needs a positive temperature, got {tau}")
    return tau


def _expert_sup(model: MoEModel, points: np.ndarray) -> float:
    return float(np.max(np.abs(model.experts.outputs(points))))


def estimate_risks(student: MoEModel, teacher: TeacherSpec, batch: SampleBatch) -> RiskEstimate:
    """Paired estimates of L_tau (at the student's temperature) and L_0."""
    _check_pair(student, teacher, batch)
    x = batch.points
    y = teacher_response(teacher, x)
    soft = mc_mean((y - predict(student, x)) ** 2)
    hard = mc_mean((y - hard_predict(student, x)) ** 2)
    return RiskEstimate(soft=soft, hard=hard, gap=abs(soft.value - hard.value), tau=student.temperature)


def pointwise_gap_bound_check(student: MoEModel, teacher: TeacherSpec, batch: SampleBatch) -> float:
    """
    max_x of |h_tau - h_0| - 2 B_f (K-1) exp(-Delta/tau); <= 0 when the bound holds.

    |h_tau - h_0| is summed over the off-winner experts from max-shifted
    exponentials, so it carries no cancellation error from h_tau - h_0.
    """
    _check_pair(student, teacher, batch)
    tau = _positive_tau(student)
    x = batch.points
    z = student.router.logits(x)
    f = student.experts.outputs(x)
    winner = np.expand_dims(hard_winner(z), -1)
    e = np.exp((z - np.take_along_axis(z, winner, axis=-1)) / tau)
    is_winner = np.arange(student.num_experts) == winner
    off = np.where(is_winner, 0.0, e)
    lhs = np.abs(np.sum(off * (f - np.take_along_axis(f, winner, axis=-1)), axis=-1)) / (1.0 + np.sum(off, axis=-1))
    rhs = 2.0 * _expert_sup(student, x) * (student.num_experts - 1) * np.exp(-top_two_margin(z) / tau)
    return float(np.max(lhs - rhs))


def gap_bound_chain(
    student: MoEModel,
    teacher: TeacherSpec,
    batch: SampleBatch,
    tau: float,
) -> Tuple[float, float]:
    """(paired gap, 4 B_f (B_Y + B_f) (K-1) mean exp(-Delta/tau)) on the batch."""
    _check_pair(student, teacher, batch)
    tau = _positive_tau(student, tau)
    x = batch.points
    y = teacher_response(teacher, x)
    soft_risk = float(np.mean((y - soft_predict(student, x, tau)) ** 2))
    hard_risk = float(np.mean((y - hard_predict(student, x)) ** 2))

    b_y = float(np.max(np.abs(y)))
    b_f = _expert_sup(student, x)
    margin = top_two_margin(student.router.logits(x))
    tail = float(np.mean(np.exp(-margin / tau)))
    chain = 4.0 * b_f * (b_y + b_f) * (student.num_experts - 1) * tail
    return abs(soft_risk - hard_risk), chain


def risk_decomposition(
    student: MoEModel,
    teacher: TeacherSpec,
    batch: SampleBatch,
    epsilon: float,
) -> RiskSplit:
    """Split the excess soft risk by 1{x in U_eps(tau)} in one pass over the batch."""
    _check_pair(student, teacher, batch)
    epsilon = _check_epsilon(epsilon)
    tau = _positive_tau(student)
    x = batch.points
    y = teacher_response(teacher, x)
    h = soft_predict(student, x)
    loss = (h - y) ** 2
    ambiguous = ambiguity_indicator(student, x, epsilon, tau)

    boundary = float(np.mean(np.where(ambiguous, loss, 0.0)))
    interior = float(np.mean(np.where(ambiguous, 0.0, loss)))
    total = float(np.mean(loss))
    fraction = float(np.mean(ambiguous))
    sup_target = float(np.max(np.abs(y)))
    sup_student = float(np.max(np.abs(h)))
    return RiskSplit(
        interior=interior,
        boundary=boundary,
        total=total,
        epsilon=epsilon,
        tau=tau,
        ambiguity_fraction=fraction,
        boundary_bound=(2.0 * sup_target ** 2 + 2.0 * sup_student ** 2) * fraction,
    )


def _perpendicular(nu: np.ndarray, avoid: np.ndarray) -> np.ndarray:
    """Unit vector orthogonal to nu, and to `avoid` when the dimension allows it."""
    d = nu.shape[0]
    for basis in (np.stack([nu, avoid], axis=1), nu[:, None]):
        q, _ = np.linalg.qr(basis)
        residual = np.eye(d) - q @ q.T
        norms = np.linalg.norm(residual, axis=0)
        best = int(np.argmax(norms))
        if norms[best] > 1e-8:
            return residual[:, best] / norms[best]
    raise InvalidArgumentError("router rotation needs input dimension d >= 2")


def exp1_neighbourhood_grid(
    teacher: TeacherSpec,
    angles: Sequence[float],
    offsets: Sequence[float],
) -> List[MoEModel]:
    """
    Students sharing the teacher's experts, with the router score S = <nu, x> + b
    rotated by each angle (radians) and its bias shifted by each offset.
    Grid order is angle-major.
    """
    if len(angles) == 0 or len(offsets) == 0:
        raise InvalidArgumentError("neighbourhood grid needs nonempty angle and offset lists")
    if teacher.router.num_experts != 2:
        raise InvalidArgumentError("the neighbourhood grid is defined for K = 2 routers")
    weight, bias = teacher.router.weight, teacher.router.bias
    nu = weight[0] - weight[1]
    b = float(bias[0] - bias[1])
    contrast = teacher.experts.weights[0] - teacher.experts.weights[1]

    needs_rotation = any(float(angle) != 0.0 for angle in angles)
    perp = _perpendicular(nu, contrast) * np.linalg.norm(nu) if needs_rotation else np.zeros_like(nu)
    grid = []
    for angle in angles:
        rotated = math.cos(angle) * nu + math.sin(angle) * perp
        for offset in offsets:
            router = LinearRouter(
                weight=np.stack([rotated, np.zeros_like(nu)]),
                bias=np.array([b + float(offset), 0.0]),
            )
            grid.append(MoEModel(router=router, experts=teacher.experts, temperature=1.0))
    return grid


def uniform_gap_sweep(
    teacher: TeacherSpec,
    param_grid: Sequence[MoEModel],
    tau_grid: Sequence[float],
    law: GaussianLaw,
    n: int,
    seed: int,
) -> GapSweep:
    """For each tau, the largest paired gap over the parameter grid (one shared batch)."""
    if len(param_grid) == 0 or len(tau_grid) == 0:
        raise InvalidArgumentError("uniform gap sweep needs nonempty parameter and temperature grids")
    taus = [float(tau) for tau in tau_grid]
    if any(not tau > 0.0 for tau in taus):
        raise InvalidArgumentError("temperatures must be positive")

    batch = gaussian_sample(law, n, seed)
    x = batch.points
    y = teacher_response(teacher, x)
    gaps = np.zeros((len(taus), len(param_grid)))
    for j, model in enumerate(param_grid):
        _check_pair(model, teacher, batch)
        z = model.router.logits(x)
        f = model.experts.outputs(x)
        hard = np.take_along_axis(f, np.expand_dims(hard_winner(z), -1), axis=-1)[:, 0]
        hard_risk = float(np.mean((y - hard) ** 2))
        for i, tau in enumerate(taus):
            soft = np.sum(softmax_weights(z, tau) * f, axis=-1)
            gaps[i, j] = abs(float(np.mean((y - soft) ** 2)) - hard_risk)

    rows = [
        GapSweepRow(tau=tau, max_gap=float(gaps[i].max()), argmax=int(gaps[i].argmax()))
        for i, tau in enumerate(taus)
    ]
    max_gaps = gaps.max(axis=1)
    slope = None
    if len(taus) >= 2 and np.all(max_gaps > 0.0):
        slope, _ = fit_loglog_slope(taus, max_gaps)
    logger.debug("uniform gap sweep over %d models x %d temperatures, slope=%s", len(param_grid), len(taus), slope)
    return GapSweep(rows=rows, slope=slope)


def flip_rate(model: MoEModel, batch: SampleBatch, bias_shift: float) -> McEstimate:
    """Fraction of points whose hard winner changes when bias[0] moves by bias_shift."""
    logits = model.router.logits(batch.points)
    shifted = logits.copy()
    shifted[:, 0] += float(bias_shift)
    return mc_mean(hard_winner(logits) != hard_winner(shifted))


def estimate_bound_constants(
    student: MoEModel,
    teacher: TeacherSpec,
    batch: SampleBatch,
    delta_grid: Sequence[float],
) -> BoundConstants:
    """Empirical B_Y, B_f and the fitted margin tail P(Delta_min <= t) ~ C_mt t^alpha."""
    _check_pair(student, teacher, batch)
    y = teacher_response(teacher, batch.points)
    fit = margin_tail_on_batch(student, batch, delta_grid)
    alpha = c_mt = None
    if fit.informative:
        alpha, c_mt = fit.slope, fit.constant
    return BoundConstants(
        b_y=float(np.max(np.abs(y))),
        b_f=_expert_sup(student, batch.points),
        num_experts=student.num_experts,
        alpha=alpha,
        c_mt=c_mt,
    )


def conditional_hyperplane_sample(
    law: GaussianLaw,
    nu: Sequence[float],
    level: float,
    n: int,
    seed: int,
) -> SampleBatch:
    """
    Exact draws of X ~ law conditioned on <nu, X> = level, using
    X = Y + (Sigma nu / nu^T Sigma nu) (level - <nu, Y>) with Y ~ law.
    """
    nu = np.asarray(nu, dtype=np.float64)
    if nu.shape != (law.dim,) or not np.any(nu != 0.0):
        raise InvalidArgumentError("hyperplane normal must be a nonzero vector of the law's dimension")
    y = gaussian_sample(law, n, seed).points
    gain = law.covariance @ nu / (nu @ law.covariance @ nu)
    points = y + np.outer(float(level) - y @ nu, gain)
    return SampleBatch(points=points, seed=int(seed))


def _shifted_bias(model: MoEModel, shift: float) -> MoEModel:
    bias = np.array(model.router.bias)
    bias[0] += shift
    return model.with_router(LinearRouter(weight=model.router.weight, bias=bias))


def hard_risk_bias_derivative_check(
    model: MoEModel,
    teacher: TeacherSpec,
    law: GaussianLaw,
    db: float,
    n: int,
    seed: int,
    formula_samples: Optional[int] = None,
    chunk_size: int = DEFAULT_CHUNK_SIZE,
) -> ShapeDerivativeCheck:
    """
    d L_0 / d b for a K = 2 router with score S = <nu, x> + b (nu = w_0 - w_1,
    b = bias_0 - bias_1). Expert 0 owns {S >= 0}, so raising b grows its cell and

        d L_0 / d b = E[D_01(X) | S(X) = 0] * p_S(0),  D_01 = (f_0 - y)^2 - (f_1 - y)^2.

    The finite difference shifts bias_0 by +-db on a shared streamed sample; the
    surface term samples the exact conditional law on the interface.
    """
    if model.num_experts != 2:
        raise InvalidArgumentError("the bias shape-derivative check needs K = 2")
    if model.dim != teacher.dim or law.dim != model.dim:
        raise InvalidArgumentError("model, teacher and law dimensions must agree")
    db = float(db)
    if not db > 0.0:
        raise InvalidArgumentError(f"finite-difference step must be positive, got {db}")

    nu = model.router.weight[0] - model.router.weight[1]
    b = float(model.router.bias[0] - model.router.bias[1])
    sigma_nu = law.score_std(nu)
    if sigma_nu == 0.0:
        raise InvalidArgumentError("router score is constant under the input law")
    step_too_large = db > FD_STEP_LIMIT * sigma_nu
    if step_too_large:
        logger.warning("bias step db=%g exceeds %g * sigma_nu=%g; curvature biases the check",
                       db, FD_STEP_LIMIT, sigma_nu)

    plus, minus = _shifted_bias(model, db), _shifted_bias(model, -db)
    accumulator = McAccumulator()
    for chunk in iter_gaussian_chunks(law, n, seed, chunk_size):
        y = teacher_response(teacher, chunk)
        diff = (y - hard_predict(plus, chunk)) ** 2 - (y - hard_predict(minus, chunk)) ** 2
        accumulator.add(diff / (2.0 * db))
    fd = accumulator.result()

    m = formula_samples if formula_samples is not None else min(n, 1_000_000)
    surface = conditional_hyperplane_sample(law, nu, -b, m, (seed + 1) % 2 ** 64)
    y = teacher_response(teacher, surface.points)
    outputs = model.experts.outputs(surface.points)
    contrast = (outputs[:, 0] - y) ** 2 - (outputs[:, 1] - y) ** 2
    density = float(stats.norm.pdf((-b - nu @ law.mean) / sigma_nu)) / sigma_nu
    formula = mc_mean(contrast * density)

    logger.debug("shape derivative: fd=%.6g (se %.2g), surface=%.6g (se %.2g)",
                 fd.value, fd.std_error, formula.value, formula.std_error)
    return ShapeDerivativeCheck(
        fd_derivative=fd,
        surface_formula=formula,
        db=db,
        step_too_large=step_too_large,
    )
