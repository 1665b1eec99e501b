import math

import numpy as np
import pytest
from scipy import stats

from boundary_engine.core.moe_core import hard_predict, soft_predict, top_two_margin
from boundary_engine.core.risk_lab import (
    conditional_hyperplane_sample,
    estimate_bound_constants,
    estimate_risks,
    exp1_neighbourhood_grid,
    flip_rate,
    gap_bound_chain,
    hard_risk_bias_derivative_check,
    pointwise_gap_bound_check,
    risk_decomposition,
    teacher_response,
    uniform_gap_sweep,
)
from boundary_engine.core.sampling import gaussian_sample
from boundary_engine.errors import InvalidArgumentError
from boundary_engine.experiments.registry import build_config
from boundary_engine.schemas.risk import BoundConstants, TeacherSpec
from boundary_engine.schemas.routing import LinearExpertSet
from boundary_engine.schemas.sampling import GaussianLaw
from conftest import make_model, random_model


def identical_expert_student(teacher, tau):
    experts = LinearExpertSet(weights=np.tile([[0.3, -0.2, 0.1, 0.0]], (2, 1)), biases=[0.5, 0.5])
    return make_model(teacher.router.weight, teacher.router.bias, experts.weights, experts.biases, tau)


class TestEstimateRisks:
    def test_realizable_teacher_has_zero_hard_risk(self, exp1_teacher, batch4):
        risks = estimate_risks(exp1_teacher.model.with_temperature(0.1), exp1_teacher, batch4)
        assert risks.hard.value == 0.0
        assert risks.gap == pytest.approx(risks.soft.value)
        assert risks.signed_gap == pytest.approx(risks.gap)
        assert risks.tau == 0.1

    def test_identical_experts_have_no_gap(self, exp1_teacher, batch4):
        for tau in (0.02, 0.2, 1.0):
            risks = estimate_risks(identical_expert_student(exp1_teacher, tau), exp1_teacher, batch4)
            assert risks.gap == pytest.approx(0.0, abs=1e-12)

    def test_gap_over_tau_is_stable_across_seeds(self, exp1_teacher, law4):
        ratios = [
            estimate_risks(exp1_teacher.model.with_temperature(0.1), exp1_teacher,
                           gaussian_sample(law4, 1_000_000, seed)).gap / 0.1
            for seed in range(5)
        ]
        # 4 * E[(1{S>=0} - expit(S/tau))^2] / tau ~ 0.616 at small tau
        assert np.ptp(ratios) / np.mean(ratios) < 0.05
        assert np.mean(ratios) == pytest.approx(0.60, rel=0.05)

    def test_teacher_response_is_hard_prediction(self, exp1_teacher, batch4):
        x = batch4.points[:10]
        y = teacher_response(exp1_teacher, x)
        side = x[:, 0] >= 0.0
        expected = np.where(side, x @ exp1_teacher.experts.weights[0], x @ exp1_teacher.experts.weights[1])
        np.testing.assert_allclose(y, expected, rtol=1e-14)

    def test_dimension_mismatch(self, exp1_teacher):
        batch = gaussian_sample(GaussianLaw.standard(3), 100, 1)
        with pytest.raises(InvalidArgumentError):
            estimate_risks(exp1_teacher.model.with_temperature(0.1), exp1_teacher, batch)


class TestGapBounds:
    @pytest.mark.parametrize("tau", [0.02, 0.05, 0.1, 0.2])
    def test_pointwise_bound(self, exp1_teacher, batch4, tau):
        assert pointwise_gap_bound_check(exp1_teacher.model.with_temperature(tau), exp1_teacher, batch4) <= 0.0

    @pytest.mark.parametrize("seed", [2, 3, 5])
    @pytest.mark.parametrize("tau", [0.02, 0.05])
    def test_pointwise_bound_has_no_rounding_excess(self, exp1_teacher, law4, seed, tau):
        batch = gaussian_sample(law4, 100_000, seed=seed)
        assert pointwise_gap_bound_check(exp1_teacher.model.with_temperature(tau), exp1_teacher, batch) <= 0.0

    def test_pointwise_bound_matches_direct_difference(self, rng, law4):
        student = random_model(rng, 3, 4, tau=0.5)
        teacher = TeacherSpec(router=student.router, experts=student.experts)
        batch = gaussian_sample(law4, 5_000, seed=4)
        x = batch.points
        direct = np.abs(soft_predict(student, x) - hard_predict(student, x))
        rhs = 2.0 * np.max(np.abs(student.experts.outputs(x))) * 2 * np.exp(-top_two_margin(student.router.logits(x)) / 0.5)
        assert pointwise_gap_bound_check(student, teacher, batch) == pytest.approx(np.max(direct - rhs), abs=1e-12)

    def test_pointwise_bound_identical_experts(self, exp1_teacher, batch4):
        student = identical_expert_student(exp1_teacher, 0.1)
        assert pointwise_gap_bound_check(student, exp1_teacher, batch4) <= 0.0

    def test_pointwise_bound_needs_positive_tau(self, exp1_teacher, batch4):
        with pytest.raises(InvalidArgumentError):
            pointwise_gap_bound_check(exp1_teacher.model, exp1_teacher, batch4)

    @pytest.mark.parametrize("tau", [0.02, 0.05, 0.1, 0.2])
    def test_chain_bound(self, exp1_teacher, batch4, tau):
        gap, chain = gap_bound_chain(exp1_teacher.model, exp1_teacher, batch4, tau)
        assert gap <= chain

    def test_chain_bound_is_linear_in_tau(self, exp1_teacher, batch4):
        ratios = [gap_bound_chain(exp1_teacher.model, exp1_teacher, batch4, tau)[1] / tau for tau in (0.02, 0.01)]
        assert ratios[1] == pytest.approx(ratios[0], rel=0.1)

    def test_misaligned_student(self, exp1_teacher, batch4):
        student = exp1_neighbourhood_grid(exp1_teacher, [0.2], [0.1])[0]
        gap, chain = gap_bound_chain(student, exp1_teacher, batch4, 0.1)
        assert gap <= chain


class TestRiskDecomposition:
    def test_additivity_and_bound(self, exp1_teacher, batch4):
        student = exp1_neighbourhood_grid(exp1_teacher, [0.1], [0.1])[0].with_temperature(0.1)
        split = risk_decomposition(student, exp1_teacher, batch4, 0.25)
        assert split.additivity_error <= 1e-12
        assert split.boundary <= split.boundary_bound
        assert 0.0 < split.ambiguity_fraction < 1.0

    def test_no_ambiguity(self, exp1_teacher, batch4):
        # eps just below 1/2 leaves only exact ties ambiguous
        split = risk_decomposition(exp1_teacher.model.with_temperature(1e-3), exp1_teacher, batch4, 0.5 - 1e-9)
        assert split.boundary == 0.0
        assert split.interior == split.total

    def test_all_ambiguous(self, exp1_teacher, batch4):
        flat = make_model(np.zeros((2, 4)), [0.0, 0.0], exp1_teacher.experts.weights, exp1_teacher.experts.biases, 0.1)
        split = risk_decomposition(flat, exp1_teacher, batch4, 0.25)
        assert split.interior == 0.0
        assert split.boundary == split.total
        assert split.ambiguity_fraction == 1.0


class TestUniformSweep:
    def test_identical_experts_grid(self, exp1_teacher, law4):
        grid = [identical_expert_student(exp1_teacher, 1.0)]
        sweep = uniform_gap_sweep(exp1_teacher, grid, [0.05, 0.1], law4, 10_000, 3)
        assert all(row.max_gap == pytest.approx(0.0, abs=1e-12) for row in sweep.rows)

    def test_singleton_grid_matches_estimate_risks(self, exp1_teacher, law4):
        sweep = uniform_gap_sweep(exp1_teacher, [exp1_teacher.model], [0.1], law4, 20_000, 3)
        batch = gaussian_sample(law4, 20_000, 3)
        expected = estimate_risks(exp1_teacher.model.with_temperature(0.1), exp1_teacher, batch).gap
        assert sweep.rows[0].max_gap == pytest.approx(expected, rel=1e-12)

    def test_neighbourhood_slope(self, exp1_teacher, law4):
        config = build_config("exp1")
        grid = exp1_neighbourhood_grid(exp1_teacher, config.sweep_angles, config.sweep_offsets)
        assert len(grid) == 25
        sweep = uniform_gap_sweep(exp1_teacher, grid, [0.02, 0.05, 0.1, 0.2], law4, 200_000, 11)
        assert np.all(np.diff(sweep.max_gaps) > 0.0)
        assert 0.9 <= sweep.slope <= 1.1
        # the unperturbed router sits at the grid centre and carries the largest gap
        assert [row.argmax for row in sweep.rows[1:]] == [12, 12, 12]
        np.testing.assert_allclose(sweep.max_gaps / sweep.taus, 0.616, rtol=0.1)

    def test_wide_neighbourhood_saturates(self, exp1_teacher, law4):
        grid = exp1_neighbourhood_grid(exp1_teacher, [0.0], [-0.2, 0.0, 0.2])
        sweep = uniform_gap_sweep(exp1_teacher, grid, [0.02, 0.2], law4, 100_000, 11)
        assert sweep.slope < 0.9

    def test_grid_rotation_keeps_norm(self, exp1_teacher):
        grid = exp1_neighbourhood_grid(exp1_teacher, [0.3], [0.0])
        nu = grid[0].router.weight[0] - grid[0].router.weight[1]
        assert np.linalg.norm(nu) == pytest.approx(1.0)
        assert nu[0] == pytest.approx(math.cos(0.3))
        # rotation stays orthogonal to the expert contrast
        assert nu[1] == pytest.approx(0.0, abs=1e-12)

    def test_rejects_empty_grid(self, exp1_teacher, law4):
        with pytest.raises(InvalidArgumentError):
            uniform_gap_sweep(exp1_teacher, [], [0.1], law4, 100, 1)


class TestFlipRateAndConstants:
    def test_flip_rate_tracks_density(self, exp1_teacher, batch4):
        estimate = flip_rate(exp1_teacher.model, batch4, 0.063)
        expected = stats.norm.cdf(0.0) - stats.norm.cdf(-0.063)
        assert estimate.within(expected, n_se=4.0)

    def test_zero_shift_never_flips(self, exp1_teacher, batch4):
        assert flip_rate(exp1_teacher.model, batch4, 0.0).value == 0.0

    def test_bound_constants(self, exp1_teacher, batch4):
        constants = estimate_bound_constants(exp1_teacher.model, exp1_teacher, batch4, [0.01, 0.02, 0.05, 0.1])
        assert constants.alpha == pytest.approx(1.0, abs=0.1)
        assert constants.c_mt == pytest.approx(math.sqrt(2.0 / math.pi), rel=0.2)
        expected = (4.0 * constants.b_f * (constants.b_y + constants.b_f) * constants.c_mt
                    * math.gamma(constants.alpha + 1.0))
        assert constants.c_sh == pytest.approx(expected)
        assert constants.uniform_gap_bound(0.1) == pytest.approx(constants.c_sh * 0.1 ** constants.alpha)

    def test_c_sh_needs_a_fit(self):
        assert BoundConstants(b_y=1.0, b_f=1.0, num_experts=2).c_sh is None


class TestShapeDerivative:
    def one_dimensional(self, b):
        model = make_model([[1.0], [0.0]], [b, 0.0], [[0.0], [0.0]], [1.0, 0.0], tau=0.0)
        teacher = TeacherSpec(router=model.router, experts=LinearExpertSet(weights=[[0.0], [0.0]], biases=[0.0, 0.0]))
        return model, teacher

    def test_conditional_sample_lies_on_plane(self, rng):
        law = GaussianLaw(mean=[0.5, -1.0, 2.0], covariance=np.diag([1.0, 2.0, 0.5]))
        nu = rng.standard_normal(3)
        batch = conditional_hyperplane_sample(law, nu, -0.7, 1000, 4)
        np.testing.assert_allclose(batch.points @ nu, -0.7, atol=1e-12)

    def test_one_dimensional_closed_form(self):
        model, teacher = self.one_dimensional(0.0)
        check = hard_risk_bias_derivative_check(model, teacher, GaussianLaw.standard(1), 1e-3, 2_000_000, 5)
        # L_0(b) = Phi(b), so dL_0/db = phi(b)
        assert check.surface_formula.value == pytest.approx(0.39894, abs=1e-5)
        assert check.fd_derivative.within(0.39894, n_se=4.0)
        assert check.agrees(n_se=4.0)
        assert not check.step_too_large

    def test_sign_follows_the_growing_cell(self):
        model, teacher = self.one_dimensional(0.5)
        check = hard_risk_bias_derivative_check(model, teacher, GaussianLaw.standard(1), 1e-3, 1_000_000, 6)
        assert check.surface_formula.value == pytest.approx(stats.norm.pdf(0.5), rel=1e-12)
        assert check.fd_derivative.value > 0.0

    def test_agreeing_experts_give_zero(self, exp1_teacher, law4):
        model = make_model([[0.0, 1.0, 0.0, 0.0], [0.0, 0.0, 0.0, 0.0]], [0.2, 0.0],
                           np.tile(exp1_teacher.experts.weights[0], (2, 1)), [0.0, 0.0], tau=0.0)
        check = hard_risk_bias_derivative_check(model, exp1_teacher, law4, 1e-3, 500_000, 7)
        assert check.surface_formula.value == 0.0
        assert check.fd_derivative.value == 0.0

    def test_gaussian_configuration(self, exp1_teacher, law4, rng):
        nu = rng.standard_normal(4)
        nu /= np.linalg.norm(nu)
        model = make_model(np.stack([nu, np.zeros(4)]), [0.5, 0.0], rng.standard_normal((2, 4)),
                           rng.standard_normal(2), tau=0.0)
        check = hard_risk_bias_derivative_check(model, exp1_teacher, law4, 1e-3, 2_000_000, 8)
        assert check.abs_diff <= max(1e-3, 4.0 * check.combined_std_error)

    def test_large_step_is_flagged(self):
        model, teacher = self.one_dimensional(0.0)
        check = hard_risk_bias_derivative_check(model, teacher, GaussianLaw.standard(1), 0.1, 10_000, 5)
        assert check.step_too_large

    def test_needs_two_experts(self, rng):
        model = random_model(rng, 3, 2, tau=0.0)
        teacher = TeacherSpec(router=model.router, experts=model.experts)
        with pytest.raises(InvalidArgumentError):
            hard_risk_bias_derivative_check(model, teacher, GaussianLaw.standard(2), 1e-3, 1000, 1)
