import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy.stats import special_ortho_group

from scorecal.score import (
    ScoreConfig,
    energy_score_oracle,
    energy_score_perm,
    energy_score_unbiased,
)


def perm_cfg(*perm, beta=1.0):
    return ScoreConfig(beta, np.array(perm))


def all_perm_average(samples, theta, beta=1.0):
    n = len(samples)
    vals = [energy_score_perm(samples, theta, ScoreConfig(beta, np.array(p))) for p in itertools.permutations(range(n))]
    return float(np.mean(vals))


def test_point_mass_at_theta_scores_zero():
    samples = np.tile([1.5, -2.0], (5, 1))
    for beta in (0.5, 1.0, 1.7):
        assert energy_score_perm(samples, [1.5, -2.0], ScoreConfig.random(5, np.random.default_rng(0), beta)) == 0.0


def test_two_point_swap_example():
    assert energy_score_perm([0.0, 2.0], 1.0, perm_cfg(1, 0)) == 0.0


def test_point_mass_away_from_theta():
    for perm in itertools.permutations(range(3)):
        assert energy_score_perm([0.0, 0.0, 0.0], 2.5, perm_cfg(*perm)) == -2.5


def test_hand_enumerated_three_samples():
    # u = (0, 1, 3), theta = 1; pairs for k = (1, 2, 0): |0-1|, |1-3|, |3-0|
    got = energy_score_perm([0.0, 1.0, 3.0], 1.0, perm_cfg(1, 2, 0))
    expected = ((0.5 * 1 - 1) + (0.5 * 2 - 0) + (0.5 * 3 - 2)) / 3
    assert got == expected
    # identity permutation: every pair term vanishes
    assert energy_score_perm([0.0, 1.0, 3.0], 1.0, perm_cfg(0, 1, 2)) == -1.0


def test_oracle_example():
    assert energy_score_oracle([0.0, 2.0], 1.0) == -0.5
    assert energy_score_oracle(np.zeros((4, 2)), [0.0, 0.0]) == 0.0


def test_permutation_average_equals_double_sum():
    rng = np.random.default_rng(3)
    for n in (2, 3, 5):
        samples = rng.normal(size=(n, 2))
        theta = rng.normal(size=2)
        avg = all_perm_average(samples, theta)
        assert abs(avg - energy_score_oracle(samples, theta)) < 1e-12
        # off-diagonal estimator after restoring the zero diagonal pairs
        miss = np.mean(np.linalg.norm(samples - theta, axis=1))
        pair_u = energy_score_unbiased(samples, theta) + miss
        assert abs(avg - ((n - 1) / n * pair_u - miss)) < 1e-12


def test_random_permutations_match_corrected_off_diagonal_oracle():
    rng = np.random.default_rng(11)
    n = 20
    samples = rng.normal(size=(n, 3))
    theta = np.array([0.3, -0.1, 0.5])
    vals = np.array([energy_score_perm(samples, theta, ScoreConfig.random(n, rng)) for _ in range(1000)])
    miss = np.mean(np.linalg.norm(samples - theta, axis=1))
    target = (n - 1) / n * (energy_score_unbiased(samples, theta) + miss) - miss
    se = vals.std(ddof=1) / math.sqrt(vals.size)
    assert abs(vals.mean() - target) < 3 * se


def test_degenerate_distribution_gives_exact_distance():
    u0 = np.array([1.0, 2.0])
    theta = np.array([4.0, 6.0])
    cfg = ScoreConfig.random(10, np.random.default_rng(1))
    assert energy_score_perm(np.tile(u0, (10, 1)), theta, cfg) == pytest.approx(-5.0, abs=1e-15)


def test_larger_spread_is_penalised_for_well_centred_forecast():
    # strict propriety direction: N(0,1) beats N(0,9) at draws of N(0,1)
    rng = np.random.default_rng(0)
    thetas = rng.normal(size=400)
    good = np.mean([energy_score_oracle(rng.normal(size=200), t) for t in thetas])
    wide = np.mean([energy_score_oracle(3 * rng.normal(size=200), t) for t in thetas])
    assert good > wide


finite = st.floats(-50, 50, allow_nan=False)


@settings(max_examples=60, deadline=None)
@given(arrays(float, (6, 2), elements=finite), arrays(float, 2, elements=finite), arrays(float, 2, elements=finite), st.integers(0, 2**31))
def test_translation_equivariance(samples, theta, shift, seed):
    cfg = ScoreConfig.random(6, np.random.default_rng(seed))
    a = energy_score_perm(samples, theta, cfg)
    b = energy_score_perm(samples + shift, theta + shift, cfg)
    assert abs(a - b) <= 1e-12 * max(1.0, abs(a)) * 100
    assert energy_score_oracle(samples + shift, theta + shift) == pytest.approx(energy_score_oracle(samples, theta), abs=1e-10)


@settings(max_examples=60, deadline=None)
@given(arrays(float, (5, 3), elements=finite), arrays(float, 3, elements=finite), st.integers(0, 2**31))
def test_rotation_invariance(samples, theta, seed):
    rng = np.random.default_rng(seed)
    q = special_ortho_group.rvs(3, random_state=rng)
    cfg = ScoreConfig.random(5, rng, beta=1.3)
    a = energy_score_perm(samples, theta, cfg)
    b = energy_score_perm(samples @ q.T, q @ theta, cfg)
    assert abs(a - b) <= 1e-10 * max(1.0, abs(a))


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 30), st.integers(0, 2**31))
def test_random_config_is_a_bijection(n, seed):
    cfg = ScoreConfig.random(n, np.random.default_rng(seed))
    assert sorted(cfg.permutation.tolist()) == list(range(n))


def test_rejects_bad_inputs():
    cfg = perm_cfg(1, 0)
    with pytest.raises(ValueError):
        energy_score_perm([1.0], 0.0, perm_cfg(0))
    with pytest.raises(ValueError):
        energy_score_perm([1.0, np.nan], 0.0, cfg)
    with pytest.raises(ValueError):
        energy_score_perm([1.0, 2.0], np.inf, cfg)
    with pytest.raises(ValueError):
        energy_score_perm([1.0, 2.0, 3.0], 0.0, cfg)
    with pytest.raises(ValueError):
        energy_score_oracle([1.0], 0.0)
    with pytest.raises(ValueError):
        ScoreConfig(2.0, np.array([0, 1]))
    with pytest.raises(ValueError):
        ScoreConfig(1.0, np.array([0, 0]))
