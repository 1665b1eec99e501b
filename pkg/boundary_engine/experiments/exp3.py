"""
Reduced symmetry breaking: router-only gradient descent on the soft risk from a
nearly balanced, weakly aligned start. The same batch and initial direction are
used at every temperature.
"""
import logging
import math

import numpy as np

from boundary_engine.assembler.writers import format_table
from boundary_engine.core.sampling import gaussian_sample
from boundary_engine.core.symmetry_lab import (
    alignment_rate,
    best_shared_linear_predictor,
    build_M_mc,
    positive_eigenspace_projection,
    rayleigh_analytic,
    reduced_router_train,
    symmetric_student_experts,
)
from boundary_engine.errors import InvalidArgumentError
from boundary_engine.schemas.experiment import DataTable, Exp3Record, ExperimentConfig, ExperimentResult
from boundary_engine.schemas.symmetry import ResponseFn, SymmetrySpec

logger = logging.getLogger(__name__)

COLUMNS = ["tau", "risk", "align", "unorm", "bm", "entropy"]
INITIAL_NORM = 1e-2
OPERATOR_SAMPLES = 200_000


def initial_direction(dim: int, alignment: float, seed: int) -> np.ndarray:
    """u0 with ||u0|| = 1e-2 and |cos(u0, e_1)| = alignment; the orthogonal part is seeded."""
    if dim < 2:
        raise InvalidArgumentError("a misaligned start needs dim >= 2")
    rng = np.random.default_rng(seed)
    perp = rng.standard_normal(dim)
    perp[0] = 0.0
    perp /= np.linalg.norm(perp)
    direction = alignment * np.eye(dim)[0] + math.sqrt(1.0 - alignment ** 2) * perp
    return INITIAL_NORM * direction


def _strictly_increasing(values) -> bool:
    return bool(np.all(np.diff(values) > 0.0))


def trace_name(tau: float) -> str:
    return f"exp3_trace_tau{tau:g}"


def run_exp3(config: ExperimentConfig) -> ExperimentResult:
    d = config.dim
    v = np.eye(d)[0]
    spec = SymmetrySpec(v=v, d_star=config.contrast_norm * v, covariance=np.eye(d))
    batch = gaussian_sample(spec.law, config.samples, config.seed, workers=config.workers)
    targets = spec.targets(batch.points)
    # linear baseline, matching the teacher m = 0
    weight, bias = best_shared_linear_predictor(batch, targets, fit_intercept=False)
    experts = symmetric_student_experts(weight, bias, config.student_contrast * spec.d_star)
    u0 = initial_direction(d, config.initial_alignment, config.seed)

    operator = build_M_mc(ResponseFn.sign(), spec, min(config.samples, OPERATOR_SAMPLES), config.seed)
    lam = operator.eigenvalues

    records, traces, plots, rates = [], {}, {}, []
    for tau in config.tau_grid:
        trace = reduced_router_train(
            spec, experts, config.eta, tau, config.steps, batch.n, config.seed, u0,
            targets=targets, batch=batch,
        )
        final = trace.final
        records.append(Exp3Record(
            tau=tau,
            risk=final.risk,
            align=final.alignment,
            unorm=final.unorm,
            bm=final.boundary_mass,
            entropy=final.entropy,
            diverged=trace.diverged,
            seed=config.seed,
            n=batch.n,
        ))
        steps = range(trace.num_steps + 1)
        deficits = 1.0 - trace.alignments
        traces[trace_name(tau)] = DataTable(
            columns=["step", "alignment_deficit", "loss"],
            rows=[[t, d_t, r] for t, d_t, r in zip(steps, deficits.tolist(), trace.risks.tolist())],
        )
        plots[f"exp3_alignment_tau{tau:g}"] = DataTable(
            columns=["step", "alignment_deficit"], rows=[[t, d_t] for t, d_t in zip(steps, deficits.tolist())]
        )
        plots[f"exp3_loss_tau{tau:g}"] = DataTable(
            columns=["step", "loss"], rows=[[t, r] for t, r in zip(steps, trace.risks.tolist())]
        )
        if d >= 2:
            rates.append(alignment_rate(float(lam[0]), float(lam[1]), config.eta, tau))
        logger.info("exp3 tau=%g align=%.6g entropy=%.6g diverged=%s", tau, final.alignment, final.entropy, trace.diverged)

    metrics = {
        "eta": config.eta,
        "steps": config.steps,
        "initial_alignment": float(abs(u0 @ v) / np.linalg.norm(u0)),
        "entropy_units": "nats",
        "diverged": [r.diverged for r in records],
        "min_final_alignment": min(r.align for r in records),
        "entropy_strictly_increasing": _strictly_increasing([r.entropy for r in records]),
        "bm_strictly_increasing": _strictly_increasing([r.bm for r in records]),
        "unorm_increasing": _strictly_increasing([r.unorm for r in records]),
        "operator": {
            "eigenvalues": lam.tolist(),
            "rayleigh_mc": operator.rayleigh.value,
            "rayleigh_std_error": operator.rayleigh.std_error,
            "rayleigh_analytic": rayleigh_analytic(ResponseFn.sign(), spec),
            "positive_projection_of_v": positive_eigenspace_projection(operator, v),
            "alignment_rate": rates,
        },
    }

    return ExperimentResult(
        experiment="exp3",
        columns=COLUMNS,
        records=[r.model_dump() for r in records],
        metrics=metrics,
        assumptions=[
            f"Input law N(0, I) in d={d}; teacher separator v = e_1, contrast d_* = {config.contrast_norm} v",
            f"Student experts: least-squares linear baseline (no intercept) +- {config.student_contrast} d_*.x / 2, frozen",
            f"Initial direction norm {INITIAL_NORM} with alignment {config.initial_alignment}",
            "Gate entropy in nats; boundary mass is P(|2 u.x| <= 2 tau)",
        ],
        limitations=["Final risk levels depend on unreported optimizer settings and are not anchored"],
        traces=traces,
        plots=plots,
        table=format_table(
            ["$\\tau$", "Risk", "Align", "$\\|u\\|$", "BM", "Entropy"],
            [[r.tau, r.risk, r.align, r.unorm, r.bm, r.entropy] for r in records],
        ),
    )
