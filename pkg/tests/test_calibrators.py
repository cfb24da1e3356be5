import itertools
import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from calparity import calibrators as cal
from calparity import metrics
from calparity.data import sigmoid
from calparity.models import GbtParams, gbt_train


def isotonic_minmax(y):
    """Isotonic least squares via the max-min formula over interval means."""
    n = len(y)
    return np.array([max(min(np.mean(y[j:k + 1]) for k in range(i, n)) for j in range(i + 1)) for i in range(n)])


def calibrated(n, seed):
    rng = np.random.default_rng(seed)
    s = rng.uniform(0.02, 0.98, n)
    return s, (rng.random(n) < s).astype(float)


def opposite_bias(n, seed, shift=1.0):
    rng = np.random.default_rng(seed)
    g = rng.integers(0, 2, n)
    z = rng.normal(size=n)
    p = sigmoid(z + np.where(g == 0, -shift, shift))
    return sigmoid(z), (rng.random(n) < p).astype(float), g


def test_pava_matches_brute_force_on_all_patterns():
    s = np.arange(8) / 8
    for bits in itertools.product((0.0, 1.0), repeat=8):
        y = np.array(bits)
        fitted = cal.pava(s, y).apply(s)
        assert np.array_equal(fitted, isotonic_minmax(y)), bits


def test_pava_examples():
    np.testing.assert_array_equal(cal.pava([1, 2, 3], [1, 0, 1]).apply([1, 2, 3]), [0.5, 0.5, 1.0])
    s = [0.1, 0.1, 0.4, 0.7, 0.7]
    y = [0, 1, 0, 1, 1]
    m = cal.pava(s, y)
    np.testing.assert_array_equal(m.knots, [0.1, 0.4, 0.7])
    np.testing.assert_array_equal(m.values, [1 / 3, 1 / 3, 1.0])
    assert np.all(cal.pava([0.2, 0.5, 0.9], [1, 1, 1]).apply([0, 0.3, 1]) == 1.0)


def test_isotonic_lookup_steps_and_clamps():
    m = cal.pava([0.2, 0.6], [0, 1])
    np.testing.assert_array_equal(m.apply([0.0, 0.2, 0.5, 0.6, 1.0]), [0, 0, 0, 1, 1])


@given(st.lists(st.tuples(st.floats(0, 1), st.integers(0, 1)), min_size=1, max_size=30))
def test_isotonic_is_monotone_and_mean_preserving(pairs):
    s, y = map(np.array, zip(*pairs))
    m = cal.pava(s, y)
    assert np.all(np.diff(m.values) >= -1e-15)
    assert m.apply(s).mean() == pytest.approx(y.mean(), abs=1e-12)


def test_histogram_examples():
    s = np.array([0.2, 0.4, 0.7, 0.9])
    y = np.array([0, 1, 1, 1])
    m = cal.fit_histogram(s, y, 2, "width")
    assert m.apply([0.3])[0] == 0.5 and m.apply([0.8])[0] == 1.0
    one = cal.fit_histogram(s, y, 1)
    assert np.all(one.apply(np.linspace(0, 1, 7)) == y.mean())
    with pytest.raises(cal.CalibrationError):
        cal.fit_histogram(s, y, 5, "mass")


@given(st.integers(1, 12), st.sampled_from(["width", "mass"]), st.integers(0, 10_000))
def test_histogram_has_at_most_m_outputs(m, scheme, seed):
    s, y = calibrated(60, seed)
    out = cal.fit_histogram(s, y, m, scheme).apply(np.linspace(0, 1, 500))
    assert np.unique(out).size <= m


def test_platt_independent_labels():
    rng = np.random.default_rng(0)
    s = rng.random(20000)
    y = (rng.random(20000) < 0.3).astype(float)
    m = cal.fit_platt(s, y)
    assert abs(m.a) < 0.02
    assert np.all(np.abs(m.apply(np.linspace(0.05, 0.95, 19)) - y.mean()) < 0.02)


def test_platt_on_calibrated_scores_is_near_identity():
    # Platt maps logit -> logit, so the oracle probability here is sigmoid(logit z).
    rng = np.random.default_rng(1)
    s = sigmoid(rng.normal(0, 2, 50000))
    y = (rng.random(s.size) < s).astype(float)
    grid = np.linspace(0.1, 0.9, 17)
    assert np.max(np.abs(cal.fit_platt(s, y).apply(grid) - grid)) < 0.02


def test_platt_sign_and_errors():
    m = cal.fit_platt([0.3, 0.7], [0, 1])
    lo, hi = m.apply([0.3, 0.7])
    assert lo < 0.5 < hi
    with pytest.raises(cal.CalibrationError):
        cal.fit_platt([0.3, 0.7], [1, 1])
    smooth = cal.fit_platt([0.3, 0.7], [0, 1], use_target_smoothing=True)
    assert np.isfinite(smooth.a)


def test_beta_calibrated_near_identity():
    s, y = calibrated(50000, 2)
    m = cal.fit_beta(s, y)
    assert m.a == pytest.approx(1, abs=0.1) and m.b == pytest.approx(1, abs=0.1) and m.c == pytest.approx(0, abs=0.1)
    grid = np.linspace(0.1, 0.9, 17)
    assert np.max(np.abs(m.apply(grid) - grid)) < 0.02


def test_beta_stays_nonnegative_on_anti_monotone_data():
    rng = np.random.default_rng(3)
    s = rng.random(2000)
    y = (rng.random(2000) < 1 - s).astype(float)
    m = cal.fit_beta(s, y)
    assert m.a >= 0 and m.b >= 0
    out = m.apply(np.linspace(0.01, 0.99, 50))
    assert np.all((out > 0) & (out < 1))


def test_temperature():
    rng = np.random.default_rng(4)
    s = sigmoid(rng.normal(0, 2, 50000))
    y = (rng.random(s.size) < s).astype(float)
    assert cal.fit_temperature(s, y).temperature == pytest.approx(1, abs=0.05)
    m = cal.fit_temperature([0.9, 0.9], [1, 0])
    assert m.temperature == 100
    assert m.apply([0.9])[0] == pytest.approx(0.5, abs=0.03)
    s2 = np.array([0.1, 0.5, 0.8])
    np.testing.assert_allclose(cal.TemperatureCalibrator(1.0).apply(s2), s2, atol=1e-12)


def test_bbq_singleton_equals_histogram_and_weights():
    s, y = calibrated(400, 5)
    grid = np.linspace(0, 1, 101)
    np.testing.assert_array_equal(cal.fit_bbq(s, y, [7]).apply(grid), cal.fit_histogram(s, y, 7, "mass").apply(grid))
    m = cal.fit_bbq(s, y)
    assert np.all(m.weights > 0) and m.weights.sum() == pytest.approx(1, abs=1e-12)


def test_bbq_no_worse_than_worst_member():
    grid = np.linspace(0.05, 0.95, 91)
    for seed in range(5):
        s, y = calibrated(3000, seed)
        m = cal.fit_bbq(s, y)
        worst = max(np.max(np.abs(mem.apply(grid) - grid)) for mem in m.members)
        assert np.max(np.abs(m.apply(grid) - grid)) <= worst + 1e-12


def test_platt_binner_composition():
    s, y = calibrated(500, 6)
    m = cal.fit_platt_binner(s, y, 10, seed=1)
    grid = np.linspace(0, 1, 301)
    np.testing.assert_array_equal(m.apply(grid), m.binner.apply(m.platt.apply(grid)))
    assert np.unique(m.apply(grid)).size <= 10


def test_platt_binner_beats_histogram_on_sigmoid_distortion():
    # The advantage shows once label-mean bins are noisy (about 10 fit samples per bin).
    wins = 0
    for seed in range(10):
        rng = np.random.default_rng(seed)
        z = rng.normal(0, 1.5, 52000)
        y = (rng.random(z.size) < sigmoid(z)).astype(float)
        s = sigmoid(2.5 * z + 0.5)
        fit, test = slice(0, 2000), slice(2000, None)
        pb = cal.fit_platt_binner(s[fit], y[fit], 200, seed=seed).apply(s[test])
        hist = cal.fit_histogram(s[fit], y[fit], 200, "mass").apply(s[test])
        wins += metrics.ecce(pb, y[test]).value <= metrics.ecce(hist, y[test]).value
    assert wins >= 7


def test_per_group_identical_groups_match_pooled():
    s, y = calibrated(200, 7)
    S, Y = np.r_[s, s], np.r_[y, y]
    g = np.r_[np.zeros(200, int), np.ones(200, int)]
    m = cal.fit_per_group(S, Y, g, "isotonic")
    np.testing.assert_array_equal(m.apply(S, g), cal.pava(S, Y).apply(S))


def test_per_group_routing_errors():
    s, y = calibrated(100, 8)
    g = np.arange(100) % 2
    m = cal.fit_calibrator("per_group", s, y, g, inner_kind="platt")
    with pytest.raises(cal.CalibrationError):
        m.apply(s[:3], [0, 1, 2])
    with pytest.raises(cal.CalibrationError):
        m.apply(s)


def test_per_group_beats_pooled_isotonic():
    wins = 0
    for seed in range(10):
        s, y, g = opposite_bias(6000, seed)
        fit, test = slice(0, 3000), slice(3000, None)
        per = cal.fit_per_group(s[fit], y[fit], g[fit]).apply(s[test], g[test])
        pooled = cal.pava(s[fit], y[fit]).apply(s[test])
        wins += (metrics.worst_group(per, y[test], g[test])[0].value
                 < metrics.worst_group(pooled, y[test], g[test])[0].value)
    assert wins >= 8


def test_group_robust_single_group_is_plain_brier_gbt():
    s, y = calibrated(500, 9)
    robust = cal.fit_group_robust(s, y, np.zeros(500, int))
    params = GbtParams.from_dict({**cal.GROUP_ROBUST_DEFAULTS, "dro_eta": 0.0})
    plain = gbt_train(s[:, None], y, params)
    np.testing.assert_allclose(robust.apply(s), plain.predict(s[:, None]), atol=1e-12)


def test_group_robust_ignores_groups_at_apply():
    s, y, g = opposite_bias(2000, 0)
    m = cal.fit_group_robust(s, y, g)
    np.testing.assert_array_equal(m.apply(s), m.apply(s, groups=np.full(s.size, 99)))


def test_group_robust_improves_on_uncalibrated():
    wins = 0
    for seed in range(10):
        s, y, g = opposite_bias(6000, seed, shift=0.5)
        s = sigmoid(2.0 * np.log(s / (1 - s)))   # overconfident base scores
        fit, test = slice(0, 3000), slice(3000, None)
        out = cal.fit_group_robust(s[fit], y[fit], g[fit]).apply(s[test])
        wins += (metrics.worst_group(out, y[test], g[test])[0].value
                 < metrics.worst_group(s[test], y[test], g[test])[0].value)
    assert wins >= 8


@pytest.mark.parametrize("kind", cal.KINDS)
def test_json_round_trip(kind):
    s, y, g = opposite_bias(400, 1)
    groups = g if kind in ("per_group", "group_robust") else None
    m = cal.fit_calibrator(kind, s, y, groups)
    back = cal.calibrator_from_dict(json.loads(json.dumps(m.to_dict())))
    np.testing.assert_array_equal(back.apply(s, groups), m.apply(s, groups))


def test_unsupported_kinds():
    with pytest.raises(cal.UnsupportedCalibrator):
        cal.fit_calibrator("enir", [0.1, 0.9], [0, 1])
    with pytest.raises(cal.UnsupportedCalibrator):
        cal.fit_calibrator("magic", [0.1, 0.9], [0, 1])
    with pytest.raises(cal.CalibrationError):
        cal.calibrator_from_dict({"kind": "platt", "params": {}, "version": 99})


@pytest.mark.parametrize("kind", ["histogram", "platt", "beta", "temperature", "bbq", "platt_binner"])
def test_outputs_are_probabilities(kind):
    s, y = calibrated(300, 3)
    out = cal.fit_calibrator(kind, s, y).apply(np.linspace(0, 1, 51))
    assert np.all((out >= 0) & (out <= 1))
