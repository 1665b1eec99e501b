"""
Reduced two-expert Gaussian symmetry-breaking model.

The router is antisymmetric (a_1 = <u, x>, a_2 = -<u, x>) so the gate is
p_1 = expit(2 <u, x> / tau). Near u = 0 the router update is governed by
M = E[g(v.x) (d_star.x) x x^T], whose Rayleigh quotient along v has the closed
form kappa_g (d_star^T Sigma v) sqrt(v^T Sigma v).
"""
import logging
import math
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy import integrate, special, stats

from boundary_engine.core.sampling import gaussian_sample, mc_mean
from boundary_engine.errors import InvalidArgumentError, NumericalFailureError
from boundary_engine.schemas.routing import LinearExpertSet
from boundary_engine.schemas.sampling import SampleBatch
from boundary_engine.schemas.symmetry import (
    EffectiveOperator,
    ResponseFn,
    RouterTrace,
    SymmetrySpec,
    TraceStep,
)

logger = logging.getLogger(__name__)

SIGN_KAPPA = 2.0 * math.sqrt(2.0 / math.pi)
QUAD_HALF_WIDTH = 8.0
QUAD_TOL = 1e-10
DIVERGENCE_NORM = 1e6


def build_M_mc(g: ResponseFn, spec: SymmetrySpec, n: int, seed: int) -> EffectiveOperator:
    """Sample mean of g(v.x) (d_star.x) x x^T, symmetrized, with the Rayleigh quotient along v."""
    x = gaussian_sample(spec.law, n, seed).points
    along_v = x @ spec.v
    weights = g.evaluate(along_v) * (x @ spec.d_star)
    matrix = (x.T * weights) @ x / x.shape[0]
    return EffectiveOperator(matrix=matrix, rayleigh=mc_mean(weights * along_v ** 2))


def _quadrature_kappa(g: ResponseFn, s: float) -> float:
    """E[g(s Z) Z^3] for Z ~ N(0, 1), by adaptive Gauss-Kronrod on (-8, 8)."""
    def integrand(z: float) -> float:
        return float(g.evaluate(s * z)) * z ** 3 * stats.norm.pdf(z)

    value, abserr = integrate.quad(
        integrand, -QUAD_HALF_WIDTH, QUAD_HALF_WIDTH, points=[0.0], limit=200, epsabs=QUAD_TOL, epsrel=QUAD_TOL
    )
    if not math.isfinite(value) or abserr > 1e-8 * max(1.0, abs(value)):
        raise NumericalFailureError(f"kappa_g quadrature did not converge (value={value}, abserr={abserr})")
    return value


def kappa_g(g: ResponseFn, s: float) -> float:
    """kappa_g = E[g(G) G^3] / s^3 with G ~ N(0, s^2)."""
    s = float(s)
    if not s > 0.0 or not math.isfinite(s):
        raise InvalidArgumentError(f"scale s must be positive, got {s}")
    if g.kind == "sign":
        return SIGN_KAPPA
    if g.kind == "linear":
        return 3.0 * s
    if g.kind == "custom" and not g.quadrature:
        raise InvalidArgumentError("custom response has no closed form; construct it with quadrature=True")
    return _quadrature_kappa(g, s)


def rayleigh_analytic(g: ResponseFn, spec: SymmetrySpec) -> float:
    """v^T M v = kappa_g (d_star^T Sigma v) sqrt(v^T Sigma v)."""
    sigma_v = spec.covariance @ spec.v
    s = math.sqrt(float(spec.v @ sigma_v))
    return kappa_g(g, s) * float(spec.d_star @ sigma_v) * s


def _check_step(eta: float, tau: float) -> Tuple[float, float]:
    eta, tau = float(eta), float(tau)
    if not eta > 0.0 or not tau > 0.0:
        raise InvalidArgumentError(f"eta and tau must be positive, got eta={eta}, tau={tau}")
    return eta, tau


def linearized_iterate(
    u0: Sequence[float],
    op: EffectiveOperator,
    eta: float,
    tau: float,
    steps: int,
) -> np.ndarray:
    """Rows u_0..u_T of u_{t+1} = (I + (eta / tau) M) u_t."""
    eta, tau = _check_step(eta, tau)
    u = np.asarray(u0, dtype=np.float64)
    if u.shape != (op.dim,):
        raise InvalidArgumentError(f"u0 must have dimension {op.dim}")
    if steps < 0:
        raise InvalidArgumentError("step count must be >= 0")
    update = np.eye(op.dim) + (eta / tau) * op.matrix
    path = np.empty((steps + 1, op.dim))
    path[0] = u
    for t in range(steps):
        path[t + 1] = update @ path[t]
    return path


def linearized_spectral_components(
    u0: Sequence[float],
    op: EffectiveOperator,
    eta: float,
    tau: float,
    steps: int,
) -> np.ndarray:
    """Closed form alpha_i(t) = (1 + eta lambda_i / tau)^t alpha_i(0) in the eigenbasis of M."""
    eta, tau = _check_step(eta, tau)
    alpha0 = op.eigenvectors.T @ np.asarray(u0, dtype=np.float64)
    factors = 1.0 + eta * op.eigenvalues / tau
    t = np.arange(steps + 1)[:, None]
    return factors[None, :] ** t * alpha0[None, :]


def alignment_rate(lambda1: float, lambda2: float, eta: float, tau: float) -> float:
    """rho(tau) = |1 + eta lambda_2 / tau| / |1 + eta lambda_1 / tau|."""
    eta, tau = _check_step(eta, tau)
    denominator = 1.0 + eta * lambda1 / tau
    if denominator == 0.0:
        raise InvalidArgumentError("1 + eta * lambda1 / tau vanishes; the alignment rate is undefined")
    return abs((1.0 + eta * lambda2 / tau) / denominator)


def alignment_rate_small_step(lambda1: float, lambda2: float, eta: float, tau: float) -> float:
    """First-order expansion 1 - (eta / tau)(lambda_1 - lambda_2), valid for eta / tau << 1."""
    eta, tau = _check_step(eta, tau)
    return 1.0 - eta / tau * (lambda1 - lambda2)


def alignment_time(lambda1: float, lambda2: float, eta: float, tau: float) -> float:
    """Steps to align, tau / (eta (lambda_1 - lambda_2)); infinite without a spectral gap."""
    eta, tau = _check_step(eta, tau)
    gap = lambda1 - lambda2
    return math.inf if gap <= 0.0 else tau / (eta * gap)


def alignment_rate_limit(lambda1: float, lambda2: float) -> float:
    """Zero-temperature limit of rho on the positive spectrum: lambda_2 / lambda_1."""
    if not (lambda1 > 0.0 and lambda2 > 0.0):
        raise InvalidArgumentError("the tau -> 0 limit lambda2/lambda1 needs both eigenvalues positive")
    return lambda2 / lambda1


def positive_eigenspace_projection(op: EffectiveOperator, v: Sequence[float]) -> float:
    """Norm of the projection of v onto the span of eigenvectors with positive eigenvalue."""
    positive = op.eigenvectors[:, op.eigenvalues > 0.0]
    if positive.shape[1] == 0:
        return 0.0
    return float(np.linalg.norm(positive.T @ np.asarray(v, dtype=np.float64)))


def _gate(u: np.ndarray, x: np.ndarray, tau: float) -> Tuple[np.ndarray, np.ndarray]:
    score = x @ u
    return score, special.expit(2.0 * score / tau)


def _check_reduced(u: np.ndarray, experts: LinearExpertSet, batch: SampleBatch, targets: np.ndarray, tau: float) -> None:
    if not float(tau) > 0.0:
        raise InvalidArgumentError(f"temperature must be positive, got {tau}")
    if experts.num_experts != 2:
        raise InvalidArgumentError("the reduced router model has exactly two experts")
    if u.shape != (batch.dim,) or experts.dim != batch.dim:
        raise InvalidArgumentError("router, experts and batch dimensions disagree")
    if targets.shape != (batch.n,):
        raise InvalidArgumentError(f"expected {batch.n} targets, got shape {targets.shape}")


def reduced_risk(
    u: Sequence[float],
    experts: LinearExpertSet,
    targets: np.ndarray,
    batch: SampleBatch,
    tau: float,
) -> float:
    u = np.asarray(u, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    _check_reduced(u, experts, batch, targets, tau)
    _, p1 = _gate(u, batch.points, tau)
    f = experts.outputs(batch.points)
    h = p1 * f[:, 0] + (1.0 - p1) * f[:, 1]
    return float(np.mean((targets - h) ** 2))


def reduced_gradient(
    u: Sequence[float],
    experts: LinearExpertSet,
    targets: np.ndarray,
    batch: SampleBatch,
    tau: float,
) -> np.ndarray:
    """-(4 / tau) mean[(y - h) p_1 p_2 (f_1 - f_2) x], the exact gradient of reduced_risk in u."""
    u = np.asarray(u, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    _check_reduced(u, experts, batch, targets, tau)
    x = batch.points
    _, p1 = _gate(u, x, tau)
    f = experts.outputs(x)
    h = p1 * f[:, 0] + (1.0 - p1) * f[:, 1]
    coeff = (targets - h) * p1 * (1.0 - p1) * (f[:, 0] - f[:, 1])
    return -(4.0 / tau) * (x.T @ coeff) / batch.n


def reduced_gradient_fd(
    u: Sequence[float],
    experts: LinearExpertSet,
    targets: np.ndarray,
    batch: SampleBatch,
    tau: float,
) -> np.ndarray:
    """Central differences of reduced_risk with step 1e-6 (1 + ||u||)."""
    u = np.asarray(u, dtype=np.float64)
    step = 1e-6 * (1.0 + float(np.linalg.norm(u)))
    grad = np.empty_like(u)
    for i in range(u.shape[0]):
        shift = np.zeros_like(u)
        shift[i] = step
        grad[i] = (reduced_risk(u + shift, experts, targets, batch, tau)
                   - reduced_risk(u - shift, experts, targets, batch, tau)) / (2.0 * step)
    return grad


def best_shared_linear_predictor(
    batch: SampleBatch, targets: np.ndarray, fit_intercept: bool = True
) -> Tuple[np.ndarray, float]:
    """
    Least-squares fit of the targets on the batch: (weight, bias). With
    fit_intercept=False the fit goes through the origin and bias is 0.
    """
    targets = np.asarray(targets, dtype=np.float64)
    if not fit_intercept:
        coef, *_ = np.linalg.lstsq(batch.points, targets, rcond=None)
        return coef, 0.0
    design = np.hstack([batch.points, np.ones((batch.n, 1))])
    coef, *_ = np.linalg.lstsq(design, targets, rcond=None)
    return coef[:-1], float(coef[-1])


def symmetric_student_experts(weight: Sequence[float], bias: float, contrast: Sequence[float]) -> LinearExpertSet:
    """Experts baseline +- contrast.x / 2 around a shared affine baseline."""
    weight = np.asarray(weight, dtype=np.float64)
    half = 0.5 * np.asarray(contrast, dtype=np.float64)
    return LinearExpertSet(weights=np.stack([weight + half, weight - half]), biases=np.array([bias, bias]))


def reduced_router_train(
    spec: SymmetrySpec,
    experts: LinearExpertSet,
    eta: float,
    tau: float,
    steps: int,
    n: int,
    seed: int,
    u0: Sequence[float],
    targets: Optional[np.ndarray] = None,
    batch: Optional[SampleBatch] = None,
) -> RouterTrace:
    """
    Full-batch gradient descent on the router direction u only, experts frozen.
    Every step records u, the alignment |cos(u, v)|, the soft risk, the mean gate
    entropy (nats) and the slab mass P(|2 u.x| <= 2 tau). Stops early and flags the run if ||u|| exceeds 1e6.
    Passing `batch` reuses a sample drawn by the caller.
    """
    eta, tau = _check_step(eta, tau)
    if steps < 0:
        raise InvalidArgumentError("step count must be >= 0")
    if batch is None:
        batch = gaussian_sample(spec.law, n, seed)
    elif batch.dim != spec.dim:
        raise InvalidArgumentError("training batch dimension does not match the teacher")
    x = batch.points
    y = spec.targets(x) if targets is None else np.asarray(targets, dtype=np.float64)
    u = np.array(u0, dtype=np.float64)
    _check_reduced(u, experts, batch, y, tau)

    f = experts.outputs(x)
    contrast = f[:, 0] - f[:, 1]
    us, risks, entropies, masses = [], [], [], []
    diverged = False
    for t in range(steps + 1):
        score, p1 = _gate(u, x, tau)
        residual = y - (f[:, 1] + p1 * contrast)
        us.append(u)
        risks.append(float(np.mean(residual ** 2)))
        entropies.append(float(np.mean(special.entr(p1) + special.entr(1.0 - p1))))
        masses.append(float(np.mean(np.abs(score) <= tau)))
        if t == steps:
            break
        grad = -(4.0 / tau) * (x.T @ (residual * p1 * (1.0 - p1) * contrast)) / batch.n
        u = u - eta * grad
        if not np.all(np.isfinite(u)) or np.linalg.norm(u) > DIVERGENCE_NORM:
            diverged = True
            logger.warning("router training diverged at step %d (tau=%g, eta=%g)", t + 1, tau, eta)
            break

    us = np.array(us)
    norms = np.linalg.norm(us, axis=1)
    safe = np.where(norms > 0.0, norms, 1.0)
    alignments = np.where(norms > 0.0, np.minimum(1.0, np.abs(us @ spec.v) / safe), 0.0)
    final = TraceStep(
        step=len(risks) - 1,
        u=us[-1],
        alignment=float(alignments[-1]),
        risk=risks[-1],
        entropy=entropies[-1],
        boundary_mass=masses[-1],
        unorm=float(norms[-1]),
    )
    return RouterTrace(
        us=us,
        alignments=alignments,
        risks=np.array(risks),
        entropies=np.array(entropies),
        boundary_masses=np.array(masses),
        final=final,
        eta=eta,
        tau=tau,
        seed=int(seed),
        n=batch.n,
        initial_alignment=float(alignments[0]),
        diverged=diverged,
    )
