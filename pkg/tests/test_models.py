import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from calparity.data import sigmoid
from calparity.models import (GbtModel, GbtParams, MlpParams, gbt_train, group_dro_step, load_model, mlp_train,
                              predict, save_model, tune)
from calparity.models import dro, mlp, objectives
from calparity.models.tuning import SEARCH_SPACES, default_config


def rel_err(a, b, floor=1e-8):
    return np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor))


# ---------------------------------------------------------------- objectives

@pytest.mark.parametrize("name", ["logistic", "brier"])
def test_objective_derivatives_match_finite_differences(name):
    loss, grad_hess = objectives.OBJECTIVES[name]
    z = np.linspace(-4, 4, 41)
    h = 1e-5
    for y in (0.0, 1.0):
        g, hess = grad_hess(z, y)
        g_fd = (loss(z + h, y) - loss(z - h, y)) / (2 * h)
        gp, _ = grad_hess(z + h, y)
        gm, _ = grad_hess(z - h, y)
        h_fd = (gp - gm) / (2 * h)
        assert rel_err(g, g_fd) <= 1e-6
        assert rel_err(hess, h_fd) <= 1e-6


# ---------------------------------------------------------------- DRO

def test_group_dro_step_examples():
    np.testing.assert_allclose(group_dro_step([0.5, 0.5], [1.0, 0.0], np.log(2)), [2 / 3, 1 / 3], rtol=0, atol=1e-15)
    q = np.array([0.2, 0.3, 0.5])
    np.testing.assert_allclose(group_dro_step(q, [0.7, 0.7, 0.7], 3.0), q, atol=1e-15)
    np.testing.assert_array_equal(group_dro_step(q, [5.0, 0.0, 1.0], 0.0), q)
    with pytest.raises(ValueError):
        group_dro_step(q, [1.0, 2.0], 1.0)


def test_group_dro_stays_on_simplex():
    rng = np.random.default_rng(0)
    q = dro.uniform_weights(4)
    for _ in range(10_000):
        q = group_dro_step(q, rng.exponential(size=4) * rng.uniform(0, 50), rng.uniform(0, 5))
        assert np.all(q >= 0) and abs(q.sum() - 1) < 1e-12


def test_sample_weights_uniform_is_one():
    np.testing.assert_array_equal(dro.sample_weights(dro.uniform_weights(2), [0, 1, 1]), [1, 1, 1])


# ---------------------------------------------------------------- GBT

def test_gbt_constant_labels():
    X = np.random.default_rng(0).normal(size=(200, 3))
    for c in (0.0, 1.0):
        p = gbt_train(X, np.full(200, c)).predict(X)
        assert np.all(np.abs(p - c) < 1e-3)


def test_gbt_xor():
    rng = np.random.default_rng(1)
    X = rng.integers(0, 2, (2000, 2)).astype(float)
    y = np.logical_xor(X[:, 0], X[:, 1]).astype(float)
    m = gbt_train(X[:1500], y[:1500], GbtParams(max_depth=2))
    assert np.mean((m.predict(X[1500:]) >= 0.5) == y[1500:]) >= 0.95


def test_gbt_dro_disabled_never_reads_groups():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(300, 2))
    y = (rng.random(300) < sigmoid(X[:, 0])).astype(float)
    base = gbt_train(X, y, GbtParams(boosting_rounds=5))
    for params in (GbtParams(boosting_rounds=5, calibration_loss_weight=1.0, dro_eta=0.0),
                   GbtParams(boosting_rounds=5, calibration_loss_weight=0.0, dro_eta=3.0)):
        m = gbt_train(X, y, params, groups=None)
        assert m.history["q"] == []
    m = gbt_train(X, y, GbtParams(boosting_rounds=5, dro_eta=3.0))
    np.testing.assert_array_equal(m.predict(X), base.predict(X))


def test_gbt_dro_reweights_worse_group():
    rng = np.random.default_rng(3)
    g = np.r_[np.zeros(900, int), np.ones(100, int)]
    X = rng.normal(size=(1000, 1))
    flip = np.where(g == 0, 1.0, -1.0)
    y = (rng.random(1000) < sigmoid(3 * flip * X[:, 0])).astype(float)
    m = gbt_train(X, y, GbtParams(boosting_rounds=10, max_depth=2, calibration_loss_weight=1.0, dro_eta=5.0),
                  groups=g)
    assert m.history["q"][-1][1] > 0.5


def test_gbt_hand_traced_tree():
    tree = {"cover": 4, "value": 0.0, "feature": 0, "threshold": 0.5, "gain": 1.0,
            "left": {"cover": 2, "value": -1.0},
            "right": {"cover": 2, "value": 0.0, "feature": 1, "threshold": 2.0, "gain": 1.0,
                      "left": {"cover": 1, "value": 0.5}, "right": {"cover": 1, "value": 2.0}}}
    m = GbtModel.from_dict({"kind": "gbt", "params": {}, "base_margin": 0.25, "n_features": 2, "trees": [tree]})
    X = np.array([[0.0, 9.0], [1.0, 1.0], [1.0, 3.0]])
    np.testing.assert_allclose(m.predict(X), sigmoid(np.array([-0.75, 0.75, 2.25])), rtol=0, atol=1e-15)


def test_gbt_group_feature_and_predict_contract():
    rng = np.random.default_rng(4)
    X = rng.normal(size=(400, 2))
    g = rng.integers(0, 2, 400)
    y = (rng.random(400) < sigmoid(X[:, 0] + 2 * g - 1)).astype(float)
    plain = gbt_train(X, y, GbtParams(boosting_rounds=5))
    np.testing.assert_array_equal(predict(plain, X, g), predict(plain, X, 1 - g))
    np.testing.assert_array_equal(predict(plain, X), predict(plain, X))
    aware = gbt_train(X, y, GbtParams(boosting_rounds=5), groups=g, group_mode="as_feature")
    assert not np.array_equal(predict(aware, X, g), predict(aware, X, 1 - g))


def test_gbt_growth_limits():
    rng = np.random.default_rng(5)
    X = rng.normal(size=(500, 4))
    y = (rng.random(500) < sigmoid(X @ [1, -1, 0.5, 2])).astype(float)
    for policy in ("depthwise", "lossguide"):
        m = gbt_train(X, y, GbtParams(max_depth=3, grow_policy=policy, boosting_rounds=4, colsample_bytree=0.5,
                                      colsample_bylevel=0.7))
        assert all(t.depth() <= 3 for t in m.trees)
    m = gbt_train(np.ones((50, 2)), np.r_[np.zeros(25), np.ones(25)], GbtParams(boosting_rounds=2))
    assert np.allclose(m.predict(np.ones((3, 2))), 0.5)


@pytest.mark.parametrize("kind", ["gbt", "mlp"])
def test_model_json_round_trip(kind, tmp_path):
    rng = np.random.default_rng(6)
    X = rng.normal(size=(200, 3))
    y = (rng.random(200) < sigmoid(X[:, 0])).astype(float)
    if kind == "gbt":
        m = gbt_train(X, y, GbtParams(boosting_rounds=5))
    else:
        m = mlp_train(X, y, MlpParams(layer1_units=8, layer2_units=4, num_epochs=2, batch_size=50))
    save_model(m, tmp_path / "m.json")
    back = load_model(tmp_path / "m.json")
    np.testing.assert_array_equal(back.predict(X), m.predict(X))
    json.loads((tmp_path / "m.json").read_text())


def test_gbt_param_validation():
    with pytest.raises(ValueError):
        GbtParams(eta=0)
    with pytest.raises(ValueError):
        GbtParams(objective="hinge")
    with pytest.raises(ValueError):
        gbt_train(np.zeros((3, 1)), np.zeros(3), GbtParams(calibration_loss_weight=1, dro_eta=1))


# ---------------------------------------------------------------- MLP

def _fd_check(loss_spec, cfg, seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(5, 3))
    y = np.array([1.0, 0.0, 1.0, 1.0, 0.0])
    groups = np.array([0, 1, 0, 1, 1])
    params = mlp.init_params(3, 6, 4, rng)
    q = np.array([0.3, 0.7])
    sizes = np.array([2, 3])

    def f():
        return mlp.loss_and_grad(params, X, y, groups, loss_spec, cfg, q, sizes)[0]

    _, grads, _, _ = mlp.loss_and_grad(params, X, y, groups, loss_spec, cfg, q, sizes)
    h = 1e-5
    worst = 0.0
    for name, arr in params.items():
        num = np.zeros_like(arr)
        for idx in np.ndindex(arr.shape):
            old = arr[idx]
            arr[idx] = old + h
            up = f()
            arr[idx] = old - h
            down = f()
            arr[idx] = old
            num[idx] = (up - down) / (2 * h)
        worst = max(worst, rel_err(grads[name], num, floor=1e-6))
    return worst


@pytest.mark.parametrize("loss_spec,extra", [
    ("bce", {}),
    ("bce_mmce", {"calibration_loss_weight": 0.5}),
    ("group_dro", {"calibration_loss_weight": 0.5, "dro_regularization": 0.1}),
    ("group_dro", {"calibration_loss_weight": 0.5, "dro_target": "mmce"}),
])
@pytest.mark.parametrize("batch_norm", [True, False])
def test_mlp_gradients_match_finite_differences(loss_spec, extra, batch_norm):
    cfg = MlpParams(batch_norm=batch_norm, l2_regularization=1e-3, **extra)
    assert _fd_check(loss_spec, cfg, seed=0) <= 1e-4


def test_mmce_gradient_matches_finite_differences():
    rng = np.random.default_rng(1)
    s = rng.uniform(0.05, 0.95, 12)
    s = s[np.abs(s - 0.5) > 0.05]
    y = (rng.random(s.size) < 0.5).astype(float)
    _, g = mlp.mmce_and_grad(s, y, 0.4)
    h = 1e-6
    num = np.array([(mlp.mmce_and_grad(s + h * e, y, 0.4)[0] - mlp.mmce_and_grad(s - h * e, y, 0.4)[0]) / (2 * h)
                    for e in np.eye(s.size)])
    assert rel_err(g, num, floor=1e-6) <= 1e-4


def test_mlp_separable():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(2500, 2))
    X = X[np.abs(X[:, 0] + X[:, 1]) > 0.2][:2000]
    y = (X[:, 0] + X[:, 1] > 0).astype(float)
    m = mlp_train(X, y, MlpParams(layer1_units=16, layer2_units=8, learning_rate=1e-2, batch_size=64, num_epochs=20))
    assert np.mean((m.predict(X) >= 0.5) == y) >= 0.99


def test_group_dro_reduces_to_bce_when_frozen():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(300, 3))
    y = (rng.random(300) < sigmoid(X[:, 0])).astype(float)
    g = rng.integers(0, 2, 300)
    cfg = MlpParams(layer1_units=8, layer2_units=4, num_epochs=3, batch_size=64, seed=11)
    a = mlp_train(X, y, cfg, "bce")
    b = mlp_train(X, y, cfg, "group_dro", groups=g)
    for k in a.params:
        assert np.array_equal(a.params[k], b.params[k]), k


def test_mlp_validation_and_determinism():
    X = np.random.default_rng(4).normal(size=(100, 2))
    y = (X[:, 0] > 0).astype(float)
    cfg = MlpParams(layer1_units=4, layer2_units=4, num_epochs=2, batch_size=32)
    np.testing.assert_array_equal(mlp_train(X, y, cfg).predict(X), mlp_train(X, y, cfg).predict(X))
    with pytest.raises(ValueError):
        mlp_train(X, y, cfg, "group_dro")
    with pytest.raises(ValueError):
        mlp_train(X, y, cfg, "hinge")
    with pytest.raises(ValueError):
        MlpParams(dro_target="other")


# ---------------------------------------------------------------- tuning

def _tune_data(seed=0, n=600):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, 3))
    y = (rng.random(n) < sigmoid(X @ [1.5, -1, 0.5])).astype(float)
    return X[: n // 2], y[: n // 2], X[n // 2:], y[n // 2:]


@pytest.mark.parametrize("space", ["gbt", "mlp_group_robust"])
def test_single_trial_returns_defaults(space):
    Xt, yt, Xv, yv = _tune_data()
    kind = space.split("_")[0]
    fixed = {"num_epochs": 1} if kind == "mlp" else {"boosting_rounds": 2}
    groups = np.arange(Xt.shape[0]) % 2
    res = tune(Xt, yt, Xv, yv, kind, space, n_trials=1, seed=3, fixed=fixed,
               loss_spec="group_dro" if kind == "mlp" else "bce", train_groups=groups)
    expected = {**default_config(SEARCH_SPACES[space]), **fixed}
    assert {k: res.best_params[k] for k in expected} == expected


def test_tune_oracle_objective_and_determinism():
    Xt, yt, Xv, yv = _tune_data()
    prefer_depth = lambda params, s, y, g: -params["max_depth"]
    a = tune(Xt, yt, Xv, yv, "gbt", n_trials=8, seed=5, objective=prefer_depth, fixed={"boosting_rounds": 2})
    depths = [t["params"]["max_depth"] for t in a.trials]
    assert 8 in depths and a.best_params["max_depth"] == 8
    b = tune(Xt, yt, Xv, yv, "gbt", n_trials=8, seed=5, objective=prefer_depth, fixed={"boosting_rounds": 2})
    assert a.trials == b.trials and a.best_trial == b.best_trial


@given(st.integers(0, 10_000), st.integers(1, 10))
def test_sampled_configs_stay_in_space(seed, n):
    from calparity.models.tuning import sample_configs

    space = SEARCH_SPACES["mlp_group_robust"]
    for cfg in sample_configs(space, n, seed):
        for k, dim in space.items():
            if dim.loguniform:
                assert min(dim.values) - 1e-12 <= cfg[k] <= max(dim.values) + 1e-12
            else:
                assert cfg[k] in dim.values
