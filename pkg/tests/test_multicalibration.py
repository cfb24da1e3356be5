import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from calparity import metrics
from calparity.multicalibration import (EPS, McConfig, UpdateSequence, default_candidates, fit_ridge, mc_apply,
                                        mc_fit, mc_select, miscalibration, partition)
from designs import mc_subgroup


def pearson(a, b):
    return abs(np.corrcoef(a, b)[0, 1])


def test_partition_examples():
    np.testing.assert_array_equal(partition([0.2, 0.5, 0.9], "even", 1), [0, 0, 0])
    np.testing.assert_array_equal(partition([0.05, 0.45, 0.55, 0.95], "even", 2), [0, 0, 1, 1])
    np.testing.assert_array_equal(partition([0.1, 0.2, 0.8, 0.81], "quantile", 2), [0, 0, 1, 1])
    np.testing.assert_array_equal(partition([0.1, 0.2, 0.8, 0.81], "even", 2), [0, 0, 1, 1])
    np.testing.assert_array_equal(partition([0.1, 0.11, 0.12, 0.9], "quantile", 2), [0, 0, 1, 1])
    np.testing.assert_array_equal(partition([0.1, 0.11, 0.12, 0.9], "even", 2), [0, 0, 0, 1])
    with pytest.raises(ValueError):
        partition([0.1, 0.2], "quantile", 3)


@given(st.lists(st.floats(0, 1), min_size=1, max_size=50), st.integers(1, 8), st.sampled_from(["even", "quantile"]))
def test_partition_ids_in_range_and_monotone(s, b, scheme):
    s = np.array(s)
    if scheme == "quantile" and b > s.size:
        return
    ids = partition(s, scheme, b)
    assert ids.min() >= 0 and ids.max() < b
    order = np.argsort(s, kind="stable")
    assert np.all(np.diff(ids[order]) >= 0)


def test_miscalibration_examples():
    a = np.array([0.1, -0.3, 0.7, 0.2])
    assert miscalibration(a, a) == pytest.approx(1.0)
    assert miscalibration(np.full(4, 2.0), a) == 0.0
    assert miscalibration([1, -1, 1], [1, 1, -1]) == pytest.approx(pearson([1, -1, 1], [1, 1, -1]), abs=1e-15)
    assert miscalibration([1, -1, 1], [1, 1, -1]) == pytest.approx(0.5, abs=1e-15)


def test_ridge_recovers_linear_residual():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(2000, 3))
    truth = X @ [0.2, -0.1, 0.05]
    r = truth + rng.normal(0, 0.1, 2000)
    assert pearson(fit_ridge(X, r, 1.0).predict(X), truth) > 0.9


def test_calibrated_input_stops_immediately():
    rng = np.random.default_rng(1)
    X = rng.random((3000, 3))
    s = rng.uniform(0.05, 0.95, 3000)
    y = (rng.random(3000) < s).astype(float)
    seq = mc_fit(s, X, y, McConfig(stop_threshold=0.2))
    assert seq.steps == [] and seq.terminal_reason == "threshold"
    np.testing.assert_array_equal(mc_apply(seq, s, X), np.clip(s, EPS, 1 - EPS))


@pytest.mark.parametrize("cfg", [
    McConfig(),
    McConfig(partition_scheme="quantile", residual_model="tree", update_rule="multiplicative_fixed",
             step_size=0.5, stop_threshold=0.01),
    McConfig(sampling="disjoint", stop_threshold=0.01, max_iterations=8),
    McConfig(sampling="bootstrap", n_partitions=2, stop_threshold=0.01),
])
def test_replay_reproduces_fit_scores(cfg):
    s, X, y, _ = mc_subgroup(2000, 2)
    seq = mc_fit(s, X, y, cfg, seed=3)
    assert seq.steps
    out = mc_apply(seq, s, X)
    assert np.array_equal(out, seq.final_scores)
    assert np.all((out >= EPS) & (out <= 1 - EPS))
    back = UpdateSequence.from_dict(json.loads(json.dumps(seq.to_dict())))
    assert np.array_equal(mc_apply(back, s, X), out)


def test_fit_is_deterministic():
    s, X, y, _ = mc_subgroup(1500, 4)
    cfg = McConfig(sampling="bootstrap", stop_threshold=0.01)
    a, b = mc_fit(s, X, y, cfg, seed=9), mc_fit(s, X, y, cfg, seed=9)
    assert a.to_dict() == b.to_dict()


def test_empty_sequence_is_identity():
    s = np.array([0.2, 0.5, 0.7])
    seq = UpdateSequence(McConfig(), 2)
    np.testing.assert_array_equal(mc_apply(seq, s, np.zeros((3, 2))), s)


def test_witnesses_record_each_iteration():
    s, X, y, _ = mc_subgroup(2000, 5)
    seq = mc_fit(s, X, y, McConfig(stop_threshold=0.05, max_iterations=10))
    assert len(seq.witnesses) in (len(seq.steps), len(seq.steps) + 1)
    assert all(st.max_miscalibration >= 0.05 for st in seq.steps)


def test_select_single_candidate_and_determinism():
    s, X, y, _ = mc_subgroup(1000, 6)
    only = McConfig(n_partitions=2)
    cfg, _ = mc_select(s, X, y, [only])
    assert cfg == only
    a = mc_select(s, X, y, default_candidates(5, seed=1), seed=1)
    b = mc_select(s, X, y, default_candidates(5, seed=1), seed=1)
    assert a[0] == b[0] and a[1].to_dict() == b[1].to_dict()


def test_select_prefers_useful_candidate():
    identity = McConfig(stop_threshold=1.5)
    useful = McConfig(n_partitions=1, stop_threshold=0.05, max_iterations=10)
    wins = 0
    for seed in range(10):
        s, X, y, _ = mc_subgroup(3000, seed)
        wins += mc_select(s, X, y, [identity, useful], seed=seed)[0] == useful
    assert wins >= 9


def test_fit_reduces_subgroup_error():
    s, X, y, sub = mc_subgroup(4000, 7)
    seq = mc_fit(s, X, y, McConfig(n_partitions=1, stop_threshold=0.05))
    out = seq.final_scores
    assert metrics.ecce(out[sub], y[sub]).value < 0.5 * metrics.ecce(s[sub], y[sub]).value


def test_config_validation():
    with pytest.raises(ValueError):
        McConfig(partition_scheme="random")
    with pytest.raises(ValueError):
        McConfig(n_partitions=0)
    assert McConfig.from_dict({"step_size": 0.5}).step_size == 0.5
