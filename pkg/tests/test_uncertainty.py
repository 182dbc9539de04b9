"""Uncertainty decomposition against hand values and a brute-force reference."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from askgate.policy import init_policy
from askgate.uncertainty import (
    UncertaintyEstimate,
    aleatoric,
    collect_passes,
    epistemic,
    estimate_from_passes,
    mc_estimate,
    predictive_entropy,
)

LN2 = math.log(2.0)
LN4 = math.log(4.0)


def brute_epistemic(dists):
    """Mean KL to the mean, written as explicit loops with 0*log(0) = 0."""
    n, k = len(dists), len(dists[0])
    mean = [sum(d[j] for d in dists) / n for j in range(k)]
    total = 0.0
    for d in dists:
        for j in range(k):
            if d[j] > 0.0:
                total += d[j] * math.log(d[j] / mean[j])
    return total / n


def brute_aleatoric(dists):
    n = len(dists)
    total = 0.0
    for d in dists:
        for p in d:
            if p > 0.0:
                total -= p * math.log(p)
    return total / n


def brute_mean_entropy(dists):
    n, k = len(dists), len(dists[0])
    mean = [sum(d[j] for d in dists) / n for j in range(k)]
    return -sum(p * math.log(p) for p in mean if p > 0.0)


def random_distributions(rng, n_passes):
    """Random simplex points, some with hard zeros, as plain lists."""
    raw = rng.random((n_passes, 4))
    zero_mask = rng.random((n_passes, 4)) < 0.25
    zero_mask[np.arange(n_passes), rng.integers(0, 4, n_passes)] = False
    raw[zero_mask] = 0.0
    return (raw / raw.sum(axis=1, keepdims=True)).tolist()


# ---------------------------------------------------------------------------
# Hand-derived values


def test_identical_passes_have_zero_epistemic():
    dists = [[0.7, 0.1, 0.1, 0.1]] * 5
    assert epistemic(dists) == 0.0


def test_two_disjoint_one_hots_split_ln2():
    dists = [[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0]]
    assert abs(epistemic(dists) - LN2) < 1e-12
    assert aleatoric(dists) == 0.0
    assert abs(predictive_entropy(dists) - LN2) < 1e-12


def test_one_hots_have_zero_aleatoric():
    dists = [[1.0, 0.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0], [0.0, 1.0, 0.0, 0.0]]
    assert aleatoric(dists) == 0.0


def test_uniform_passes_hit_the_entropy_bound():
    dists = [[0.25, 0.25, 0.25, 0.25]] * 7
    assert aleatoric(dists) == LN4
    assert epistemic(dists) == 0.0
    assert predictive_entropy(dists) == LN4


def test_one_hot_plus_uniform_averages_entropies():
    dists = [[1.0, 0.0, 0.0, 0.0], [0.25, 0.25, 0.25, 0.25]]
    assert abs(aleatoric(dists) - LN4 / 2.0) < 1e-12


def test_single_pass_has_zero_epistemic():
    dist = [0.4, 0.3, 0.2, 0.1]
    assert epistemic([dist]) == 0.0
    assert abs(aleatoric([dist]) - brute_aleatoric([dist])) < 1e-15
    est = estimate_from_passes([dist])
    assert est.pass_count == 1 and est.epistemic == 0.0


def test_estimate_bundles_the_decomposition():
    rng = np.random.default_rng(0)
    dists = random_distributions(rng, 6)
    est = estimate_from_passes(dists)
    assert isinstance(est, UncertaintyEstimate)
    assert est.pass_count == 6
    assert est.total == est.epistemic + est.aleatoric
    assert abs(est.epistemic - brute_epistemic(dists)) < 1e-12
    assert abs(est.aleatoric - brute_aleatoric(dists)) < 1e-12


def test_empty_input_rejected():
    with pytest.raises(ValueError):
        epistemic(np.zeros((0, 4)))


# ---------------------------------------------------------------------------
# Brute-force equivalence over random inputs


def test_matches_brute_force_on_random_sets():
    rng = np.random.default_rng(123)
    for _ in range(300):
        dists = random_distributions(rng, int(rng.integers(1, 11)))
        e, a = epistemic(dists), aleatoric(dists)
        assert abs(e - brute_epistemic(dists)) < 1e-9
        assert abs(a - brute_aleatoric(dists)) < 1e-9
        assert abs((e + a) - brute_mean_entropy(dists)) < 1e-9


@settings(max_examples=200, deadline=None)
@given(st.lists(
    st.lists(st.floats(min_value=1e-6, max_value=1.0), min_size=4, max_size=4),
    min_size=1, max_size=10,
))
def test_decomposition_properties_hold_everywhere(raw):
    dists = [[p / sum(row) for p in row] for row in raw]
    e, a = epistemic(dists), aleatoric(dists)
    assert e >= -1e-12                      # KL is non-negative
    assert -1e-12 <= a <= LN4 + 1e-12       # entropy of a 4-way distribution
    assert abs((e + a) - predictive_entropy(dists)) < 1e-9


# ---------------------------------------------------------------------------
# MC sampling plumbing


def test_mc_estimate_recounts_from_logged_passes():
    policy = init_policy(seed=0)
    obs = np.zeros(64)
    obs[9] = 1.0
    passes = collect_passes(policy, obs, 100, 0.2, np.random.default_rng(5))
    est = mc_estimate(policy, obs, 100, 0.2, np.random.default_rng(5))
    assert passes.shape == (100, 4)
    assert est.pass_count == 100
    assert abs(est.epistemic - brute_epistemic(passes.tolist())) < 1e-9
    assert abs(est.aleatoric - brute_aleatoric(passes.tolist())) < 1e-9
    assert abs(est.total - brute_mean_entropy(passes.tolist())) < 1e-9


def test_mc_estimate_is_seed_deterministic():
    policy = init_policy(seed=1)
    obs = np.zeros(64)
    obs[3] = 1.0
    a = mc_estimate(policy, obs, 40, 0.2, np.random.default_rng(11))
    b = mc_estimate(policy, obs, 40, 0.2, np.random.default_rng(11))
    c = mc_estimate(policy, obs, 40, 0.2, np.random.default_rng(12))
    assert a == b
    assert a != c


def test_mc_estimate_without_dropout_is_purely_aleatoric():
    # All passes are identical; the float mean of 25 identical rows can drift
    # by an ulp, so the epistemic term is dust rather than a hard zero.
    policy = init_policy(seed=2)
    obs = np.zeros(64)
    obs[0] = 1.0
    est = mc_estimate(policy, obs, 25, 0.0, np.random.default_rng(0))
    assert abs(est.epistemic) < 1e-12
    assert abs(est.total - est.aleatoric) < 1e-12
