"""
Shared fixtures for the test suite
"""
import json

import numpy as np
import pytest

from rational_jump_laws import erlang_law, exp_law, hyperexp_law
from risk_process_sim import ModelParams


def random_model(rng: np.random.Generator, max_order: int = 3) -> ModelParams:
    """Valid investment model with hyperexponential laws and beta inside (0, 1)"""
    laws = []
    for _ in range(2):
        n = int(rng.integers(1, max_order + 1))
        rates = np.sort(rng.uniform(0.5, 4.0, n))
        laws.append(hyperexp_law(rng.dirichlet(np.ones(n)), rates))
    sigma = float(rng.uniform(0.1, 0.5))
    beta = float(rng.uniform(0.05, 0.95))
    return ModelParams(a=0.5 * sigma ** 2 * (1.0 + beta), sigma=sigma,
                       c=float(rng.choice([-1.0, 1.0]) * rng.uniform(0.2, 2.0)),
                       lambda1=float(rng.uniform(0.2, 2.0)), lambda2=float(rng.uniform(0.2, 2.0)),
                       law1=laws[0], law2=laws[1])


@pytest.fixture
def exp2():
    return exp_law(2.0)


@pytest.fixture
def erlang21():
    return erlang_law(2, 1.0)


@pytest.fixture
def hyperexp2():
    return hyperexp_law([0.3, 0.7], [1.0, 3.0])


@pytest.fixture
def ac3_params():
    return ModelParams(a=0.03, sigma=0.2, c=1.0, lambda1=1.0, lambda2=1.0,
                       law1=exp_law(1.0), law2=exp_law(1.0))


@pytest.fixture
def classical_params():
    return ModelParams(a=0.0, sigma=0.0, c=1.0, lambda1=0.5, lambda2=1e-12,
                       law1=exp_law(1.0), law2=exp_law(1.0))


@pytest.fixture
def identity_params():
    """Claim rates above 1 keep int g(u - y) f1(y) dy finite for g = exp(-u)"""
    return ModelParams(a=0.03, sigma=0.2, c=1.0, lambda1=1.0, lambda2=0.7,
                       law1=exp_law(2.0), law2=exp_law(1.5))


@pytest.fixture
def erlang_params():
    return ModelParams(a=0.035, sigma=0.05 ** 0.5, c=0.8, lambda1=0.9, lambda2=0.6,
                       law1=erlang_law(2, 3.0), law2=erlang_law(2, 1.0))


@pytest.fixture
def random_models():
    rng = np.random.default_rng(7)
    return [random_model(rng) for _ in range(50)]


@pytest.fixture
def write_scenario(tmp_path):
    def _write(document, name="scenario"):
        path = tmp_path / f"{name}.json"
        path.write_text(json.dumps(document), encoding="utf-8")
        return str(path)
    return _write
