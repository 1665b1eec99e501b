import math

import numpy as np
import pytest
from pydantic import ValidationError

from boundary_engine.core.moe_core import softmax_weights
from boundary_engine.core.symmetry_lab import linearized_iterate
from boundary_engine.errors import InvalidArgumentError, InvariantFailureError
from boundary_engine.experiments import exp1, exp2, exp3, verify
from boundary_engine.experiments.registry import OUTPUT_DIR_ENV, build_config, get_all_experiments
from boundary_engine.experiments.setups import two_expert_teacher
from boundary_engine.experiments.verify import (
    check_boundary_taxonomy,
    check_cholesky_reconstruction,
    check_csv_reproducibility,
    check_exp1_family,
    check_linearized_dynamics,
    check_margin_nesting,
    check_permutation_symmetry,
    check_reduced_gradient,
    check_sampling_contract,
    check_slab_linearity,
    check_softmax_gauge,
    check_softmax_overflow,
    check_softmax_tail,
    check_zero_temperature,
    run_verify_report,
)
from boundary_engine.schemas.experiment import CheckResult, VerifyReport


def naive_softmax(z, tau):
    e = np.exp(np.asarray(z) / tau)
    return e / e.sum(axis=-1, keepdims=True)


class TestBuildConfig:
    def test_registry_lists_every_runner(self):
        assert get_all_experiments() == ["exp1", "exp2", "exp3", "verify"]

    def test_defaults_come_from_registry(self, monkeypatch):
        monkeypatch.delenv(OUTPUT_DIR_ENV, raising=False)
        config = build_config("exp3")
        assert config.dim == 8
        assert config.contrast_norm == 0.5
        assert config.output_dir == "outputs"

    def test_precedence_flags_over_file_over_env(self, monkeypatch):
        monkeypatch.setenv(OUTPUT_DIR_ENV, "/tmp/from-env")
        assert build_config("exp1").output_dir == "/tmp/from-env"
        from_file = build_config("exp1", {"output_dir": "from-file", "seed": 7})
        assert from_file.output_dir == "from-file"
        assert from_file.seed == 7
        flagged = build_config("exp1", {"output_dir": "from-file", "seed": 7}, {"output_dir": "flag", "seed": None})
        assert flagged.output_dir == "flag"
        assert flagged.seed == 7

    def test_unknown_key_rejected(self):
        with pytest.raises(ValidationError):
            build_config("exp1", {"temperature": 0.1})

    @pytest.mark.parametrize("grid", [[0.1, 0.05], [], [0.0, 0.1]])
    def test_bad_tau_grid_rejected(self, grid):
        with pytest.raises(ValidationError):
            build_config("exp1", {"tau_grid": grid})

    def test_config_for_another_experiment_rejected(self):
        with pytest.raises(ValueError):
            build_config("exp1", {"experiment": "exp2"})

    def test_unknown_experiment_rejected(self):
        with pytest.raises(ValueError):
            build_config("exp9")


class TestSetups:
    def test_teacher_geometry(self):
        teacher = two_expert_teacher(4, 2.0, offset=0.5)
        np.testing.assert_array_equal(teacher.router.weight[0] - teacher.router.weight[1], [1.0, 0.0, 0.0, 0.0])
        np.testing.assert_array_equal(teacher.router.bias, [0.5, 0.0])
        contrast = teacher.experts.weights[0] - teacher.experts.weights[1]
        assert np.linalg.norm(contrast) == pytest.approx(2.0)
        assert contrast[0] == 0.0

    def test_needs_three_dimensions(self):
        with pytest.raises(InvalidArgumentError):
            two_expert_teacher(2, 2.0)


@pytest.fixture(scope="module")
def exp1_result():
    config = build_config("exp1", {
        "samples": 200_000, "tau_grid": [0.05, 0.1, 0.2], "sweep_angles": [0.0, 0.01],
        "sweep_offsets": [0.0, 0.01], "sweep_samples": 20_000,
    })
    return exp1.run_exp1(config)


@pytest.fixture(scope="module")
def exp1_default_result():
    return exp1.run_exp1(build_config("exp1"))


@pytest.fixture(scope="module")
def exp2_result():
    return exp2.run_exp2(build_config("exp2", {"samples": 100_000, "offset_grid": [0.0, 1.0, 2.0]}))


@pytest.fixture(scope="module")
def exp3_result():
    config = build_config("exp3", {"samples": 5_000, "dim": 4, "tau_grid": [0.1, 0.4], "steps": 40})
    return exp3.run_exp3(config)


@pytest.fixture(scope="module")
def exp3_default_result():
    return exp3.run_exp3(build_config("exp3"))


@pytest.fixture(scope="module")
def verify_config():
    return build_config("verify", {"samples": 20_000})


@pytest.fixture(scope="module")
def verify_default_report():
    return run_verify_report(build_config("verify"))


class TestExp1:
    def test_rows_follow_tau_grid(self, exp1_result):
        assert exp1_result.columns == exp1.COLUMNS
        assert [r["tau"] for r in exp1_result.records] == [0.05, 0.1, 0.2]

    def test_mass_and_gap_grow_with_tau(self, exp1_result):
        assert np.all(np.diff([r["bm_mc"] for r in exp1_result.records]) > 0.0)
        assert np.all(np.diff([r["gap"] for r in exp1_result.records]) > 0.0)

    def test_gap_stays_under_chain_bound(self, exp1_result):
        assert all(exp1_result.metrics["gap_within_chain_bound"])

    def test_gap_over_tau_near_boundary_layer_constant(self, exp1_result):
        for record in exp1_result.records:
            assert record["gap_over_tau"] == pytest.approx(0.6, rel=0.2)

    def test_sweep_and_plots_reported(self, exp1_result):
        sweep = exp1_result.metrics["uniform_sweep"]
        assert sweep["grid_size"] == 4
        assert sweep["taus"] == [0.05, 0.1, 0.2]
        assert set(exp1_result.plots) == {"exp1_scaling_bm", "exp1_scaling_gap", "exp1_gap_vs_mass"}
        assert exp1_result.table.count("\\\\") == 4


class TestExp1Acceptance:
    def test_mass_matches_closed_form(self, exp1_default_result):
        assert all(exp1_default_result.metrics["bm_analytic_agreement"])

    def test_linear_scaling(self, exp1_default_result):
        metrics = exp1_default_result.metrics
        assert 0.95 <= metrics["slope_bm"] <= 1.05
        assert 0.95 <= metrics["slope_gap"] <= 1.07
        assert metrics["corr_bm_gap"] >= 0.99

    def test_uniform_sweep_slope(self, exp1_default_result):
        sweep = exp1_default_result.metrics["uniform_sweep"]
        assert sweep["grid_size"] == 25
        assert 0.9 <= sweep["slope"] <= 1.1


class TestExp2:
    def test_everything_falls_as_interface_moves_out(self, exp2_result):
        assert [r["offset"] for r in exp2_result.records] == [0.0, 1.0, 2.0]
        assert np.all(np.diff([r["bm"] for r in exp2_result.records]) < 0.0)
        assert exp2_result.metrics["gap_strictly_decreasing"]
        assert exp2_result.metrics["flip_strictly_decreasing"]
        assert exp2_result.metrics["corr_gap_bm"] > 0.9

    def test_flip_rate_matches_shifted_interface(self, exp2_result):
        expected = 0.5 - 0.5 * math.erfc(0.063 / math.sqrt(2.0))
        assert exp2_result.records[0]["flip"] == pytest.approx(expected, abs=0.004)


class TestExp3:
    def test_one_trace_per_temperature(self, exp3_result):
        assert exp3_result.columns == exp3.COLUMNS
        assert set(exp3_result.traces) == {exp3.trace_name(0.1), exp3.trace_name(0.4)}
        for table in exp3_result.traces.values():
            assert table.columns == ["step", "alignment_deficit", "loss"]
            assert len(table.rows) == 41
            assert [row[0] for row in table.rows] == list(range(41))

    def test_shared_start(self, exp3_result):
        assert exp3_result.metrics["initial_alignment"] == pytest.approx(0.05)
        for table in exp3_result.traces.values():
            assert table.rows[0][1] == pytest.approx(0.95)
        assert not any(exp3_result.metrics["diverged"])

    def test_initial_direction(self):
        u0 = exp3.initial_direction(6, 0.05, seed=42)
        assert np.linalg.norm(u0) == pytest.approx(1e-2)
        assert abs(u0[0]) / np.linalg.norm(u0) == pytest.approx(0.05)
        np.testing.assert_array_equal(u0, exp3.initial_direction(6, 0.05, seed=42))

    def test_initial_direction_needs_two_dimensions(self):
        with pytest.raises(InvalidArgumentError):
            exp3.initial_direction(1, 0.05, seed=1)

    def test_trace_name(self):
        assert exp3.trace_name(0.05) == "exp3_trace_tau0.05"


class TestExp3Acceptance:
    def test_router_aligns_at_every_temperature(self, exp3_default_result):
        metrics = exp3_default_result.metrics
        assert not any(metrics["diverged"])
        assert metrics["min_final_alignment"] >= 0.999

    def test_gate_softens_with_temperature(self, exp3_default_result):
        assert exp3_default_result.metrics["entropy_strictly_increasing"]
        assert exp3_default_result.metrics["bm_strictly_increasing"]


def perturbed_iterate(u0, op, eta, tau, steps):
    path = linearized_iterate(u0, op, eta, tau, steps)
    path[1:] *= 1.0 + 1e-6 * np.arange(1, steps + 1)[:, None] * np.linspace(0.0, 1.0, op.dim)[None, :]
    return path


class TestVerifyChecks:
    def test_library_softmax_survives_large_logits(self):
        assert check_softmax_overflow(softmax_weights).passed

    def test_unshifted_softmax_is_caught(self):
        assert not check_softmax_overflow(naive_softmax).passed

    def test_unshifted_softmax_fails_gauge_check(self, verify_config):
        assert check_softmax_gauge(verify_config, softmax_weights).passed
        assert not check_softmax_gauge(verify_config, naive_softmax).passed

    def test_softmax_tail_covers_expert_counts(self, verify_config):
        checks = check_softmax_tail(verify_config, softmax_weights)
        assert len(checks) == 7 * 5
        assert {c.name.split(",")[0] for c in checks} == {f"softmax_tail[K={k}" for k in range(2, 9)}

    def test_exact_checks_pass(self, verify_config):
        checks = (check_softmax_tail(verify_config, softmax_weights) + check_boundary_taxonomy(verify_config)
                  + check_linearized_dynamics(verify_config) + check_sampling_contract(verify_config)
                  + check_permutation_symmetry(verify_config) + check_slab_linearity(verify_config))
        checks += [check_reduced_gradient(verify_config), check_margin_nesting(verify_config),
                   check_zero_temperature(verify_config), check_cholesky_reconstruction(verify_config),
                   check_csv_reproducibility(verify_config)]
        failed = [check.name for check in checks if not check.passed]
        assert failed == []

    def test_exp1_family_has_no_pointwise_excess(self, verify_config):
        checks = {check.name: check for check in check_exp1_family(verify_config)}
        pointwise = [c for name, c in checks.items() if name.startswith("pointwise_gap_bound")]
        assert pointwise and all(c.observed <= 0.0 for c in pointwise)
        assert checks["exp1_mass_gap_correlation"].observed >= 0.99

    def test_linearized_check_catches_a_perturbed_path(self, verify_config, monkeypatch):
        monkeypatch.setattr(verify, "linearized_iterate", perturbed_iterate)
        checks = {check.name: check for check in check_linearized_dynamics(verify_config)}
        assert not checks["linearized_components"].passed
        assert not checks["alignment_ratio_decay"].passed

    def test_report_raises_on_failure(self):
        report = VerifyReport(checks=[CheckResult(name="ok", passed=True), CheckResult(name="bad", passed=False)])
        assert not report.passed
        assert [check.name for check in report.failures] == ["bad"]
        with pytest.raises(InvariantFailureError, match="bad"):
            report.require_passed()


class TestVerifyAcceptance:
    def test_default_suite_passes(self, verify_default_report):
        assert [check.name for check in verify_default_report.failures] == []

    def test_statistical_checks_ran(self, verify_default_report):
        names = [check.name for check in verify_default_report.checks]
        assert "shape_derivative" in names
        assert "rayleigh_sign_identity" in names
        assert sum(name.startswith("rayleigh[") for name in names) == 20
        assert {"softmax_gauge", "margin_nesting", "zero_temperature_consistency", "cholesky_reconstruction",
                "csv_reproducibility", "exp1_mass_gap_correlation"} <= set(names)
