import math

import numpy as np
import pytest
from pydantic import ValidationError

from boundary_engine.core.sampling import McAccumulator, gaussian_sample, iter_gaussian_chunks, mc_mean
from boundary_engine.errors import InvalidArgumentError
from boundary_engine.schemas.sampling import GaussianLaw, McEstimate, combined_std_error


class TestGaussianLaw:
    def test_rejects_non_positive_definite(self):
        with pytest.raises(ValidationError):
            GaussianLaw(mean=np.zeros(2), covariance=[[1.0, 2.0], [2.0, 1.0]])

    def test_rejects_asymmetric(self):
        with pytest.raises(ValidationError):
            GaussianLaw(mean=np.zeros(2), covariance=[[1.0, 0.5], [0.0, 1.0]])

    def test_rejects_shape_mismatch(self):
        with pytest.raises(ValidationError):
            GaussianLaw(mean=np.zeros(3), covariance=np.eye(2))

    def test_cholesky_reconstructs(self):
        cov = np.array([[2.0, 0.3], [0.3, 0.5]])
        law = GaussianLaw(mean=[1.0, -1.0], covariance=cov)
        np.testing.assert_allclose(law.chol @ law.chol.T, cov, rtol=1e-14)

    def test_arrays_are_read_only(self):
        law = GaussianLaw.standard(2)
        with pytest.raises(ValueError):
            law.mean[0] = 1.0

    def test_score_std(self):
        law = GaussianLaw.diagonal([4.0, 9.0])
        assert law.score_std([1.0, 1.0]) == pytest.approx(math.sqrt(13.0))


class TestGaussianSample:
    def test_deterministic(self):
        law = GaussianLaw.standard(3)
        a = gaussian_sample(law, 5000, seed=11)
        b = gaussian_sample(law, 5000, seed=11)
        np.testing.assert_array_equal(a.points, b.points)
        assert a.seed == 11

    def test_threads_match_serial(self):
        law = GaussianLaw.standard(2)
        serial = gaussian_sample(law, 10_007, seed=3, chunk_size=1000)
        threaded = gaussian_sample(law, 10_007, seed=3, chunk_size=1000, workers=4)
        np.testing.assert_array_equal(serial.points, threaded.points)

    def test_chunks_concatenate_to_sample(self):
        law = GaussianLaw(mean=[1.0, 2.0], covariance=[[1.0, 0.2], [0.2, 2.0]])
        streamed = np.concatenate(list(iter_gaussian_chunks(law, 2500, seed=5, chunk_size=1000)))
        np.testing.assert_array_equal(streamed, gaussian_sample(law, 2500, seed=5, chunk_size=1000).points)

    def test_prefix_stability(self):
        law = GaussianLaw.standard(2)
        short = gaussian_sample(law, 1500, seed=9, chunk_size=1000)
        long = gaussian_sample(law, 4000, seed=9, chunk_size=1000)
        np.testing.assert_array_equal(short.points, long.points[:1500])

    def test_moments(self):
        cov = np.array([[1.0, 0.5], [0.5, 2.0]])
        law = GaussianLaw(mean=[3.0, -1.0], covariance=cov)
        x = gaussian_sample(law, 400_000, seed=1).points
        np.testing.assert_allclose(x.mean(axis=0), [3.0, -1.0], atol=0.01)
        np.testing.assert_allclose(np.cov(x.T), cov, atol=0.02)

    @pytest.mark.parametrize("n,seed", [(0, 1), (10, -1), (10, 2 ** 64)])
    def test_rejects_bad_requests(self, n, seed):
        with pytest.raises(InvalidArgumentError):
            gaussian_sample(GaussianLaw.standard(1), n, seed)


class TestMcMean:
    def test_constant(self):
        estimate = mc_mean([1.0, 1.0, 1.0, 1.0])
        assert estimate.value == 1.0
        assert estimate.std_error == 0.0

    def test_two_points(self):
        estimate = mc_mean([0.0, 2.0])
        assert estimate.value == pytest.approx(1.0)
        assert estimate.std_error == pytest.approx(1.0)

    def test_indicator(self):
        assert mc_mean([True, False, False, True, True]).value == pytest.approx(0.6)

    def test_rejects_short_input(self):
        with pytest.raises(InvalidArgumentError):
            mc_mean([1.0])

    def test_within(self):
        estimate = McEstimate(value=1.0, std_error=0.1, n=100)
        assert estimate.within(1.25)
        assert not estimate.within(1.4)
        assert estimate.within(1.4, floor=0.5)
        assert combined_std_error(estimate, estimate) == pytest.approx(0.1 * math.sqrt(2.0))


class TestMcAccumulator:
    def test_matches_mc_mean(self, rng):
        values = rng.standard_normal(10_001) * 3.0 + 2.0
        accumulator = McAccumulator()
        for chunk in np.array_split(values, 7):
            accumulator.add(chunk)
        streamed, direct = accumulator.result(), mc_mean(values)
        assert streamed.n == direct.n
        assert streamed.value == pytest.approx(direct.value, rel=1e-12)
        assert streamed.std_error == pytest.approx(direct.std_error, rel=1e-10)

    def test_merge(self, rng):
        values = rng.standard_normal(500)
        left, right = McAccumulator().add(values[:200]), McAccumulator().add(values[200:])
        merged = left.merge(right).result()
        assert merged.value == pytest.approx(np.mean(values), rel=1e-12)

    def test_empty_chunks_are_ignored(self):
        accumulator = McAccumulator().add([]).add([1.0, 3.0])
        assert accumulator.result().value == 2.0
