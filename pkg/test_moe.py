"""
Pruebas del factor de escala MoE por Monte Carlo
"""

import math

import numpy as np
import pytest

from src.errors import ConfigError
from src.experiments.moe import estimate_moe_factor, moe_scaling_factor, sample_moe_factors


def test_default_factor_is_about_two():
    estimate = estimate_moe_factor(64, 4, 1, trials=10000, seed=0)
    assert estimate.factor == pytest.approx(2.0, abs=0.1)
    assert 0 < estimate.stderr < 0.01
    assert estimate.trials == 10000


def test_single_routed_expert_is_exact():
    factors = sample_moe_factors(16, 1, 3, trials=1000, seed=2)
    assert np.allclose(factors, math.sqrt(3))


def test_factor_scales_with_shared_experts():
    one = moe_scaling_factor(64, 4, 1, trials=20000, seed=1)
    four = moe_scaling_factor(64, 4, 4, trials=20000, seed=1)
    assert four / one == pytest.approx(2.0, rel=0.02)


def test_factor_is_deterministic_given_seed():
    a = estimate_moe_factor(32, 2, 1, trials=2000, seed=5)
    b = estimate_moe_factor(32, 2, 1, trials=2000, seed=5)
    assert a == b
    assert a.to_dict() == {'factor': a.factor, 'stderr': a.stderr, 'trials': 2000}


@pytest.mark.parametrize('args', [
    (64, 0, 1, 10000), (64, 4, 0, 10000), (8, 7, 1, 10000), (64, 4, 1, 999),
])
def test_invalid_arguments(args):
    with pytest.raises(ConfigError):
        estimate_moe_factor(*args)
