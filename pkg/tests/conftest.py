import numpy as np
import pytest

from boundary_engine.core.sampling import gaussian_sample
from boundary_engine.experiments.setups import two_expert_teacher
from boundary_engine.schemas.routing import LinearExpertSet, LinearRouter, MoEModel
from boundary_engine.schemas.sampling import GaussianLaw


def make_model(router_weight, router_bias, expert_weights, expert_biases, tau=1.0) -> MoEModel:
    return MoEModel(
        router=LinearRouter(weight=np.asarray(router_weight, dtype=float), bias=np.asarray(router_bias, dtype=float)),
        experts=LinearExpertSet(weights=np.asarray(expert_weights, dtype=float),
                                biases=np.asarray(expert_biases, dtype=float)),
        temperature=tau,
    )


def random_model(rng, num_experts: int, dim: int, tau: float = 0.1) -> MoEModel:
    return make_model(
        rng.standard_normal((num_experts, dim)),
        rng.standard_normal(num_experts),
        rng.standard_normal((num_experts, dim)),
        rng.standard_normal(num_experts),
        tau,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def exp1_teacher():
    return two_expert_teacher(4, 2.0)


@pytest.fixture(scope="session")
def law4():
    return GaussianLaw.standard(4)


@pytest.fixture(scope="session")
def batch4(law4):
    return gaussian_sample(law4, 200_000, seed=7)
