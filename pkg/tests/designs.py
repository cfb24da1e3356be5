"""Synthetic designs shared by the module tests and the acceptance suite."""
import numpy as np

from calparity.data import Dataset, SynthConfig, sigmoid, synth_generate
from calparity.models import GbtParams, gbt_train

PLANTED_CANDIDATES = ["c_n0", "c_planted", "c_n1", "c_n2"]


def planted_feature(seed, n=6000):
    """A hidden feature, shifted by group, drives the outcome but not the base scores.

    Returns ``(base_scores, labels, groups, dataset)``; the dataset holds the
    three base columns, the planted column and three noise columns.
    """
    rng = np.random.default_rng(seed)
    g = (rng.random(n) < 0.5).astype(int)
    base = rng.normal(size=(n, 3))
    planted = rng.normal(size=n) + 1.0 * g
    noise = rng.normal(size=(n, 3))
    y = (rng.random(n) < sigmoid(base @ [1, -1, 0.5] + 1.5 * planted - 0.75)).astype(float)
    scores = gbt_train(base, y, GbtParams(max_depth=3, boosting_rounds=25)).predict(base)
    ds = Dataset(np.column_stack([base, planted, noise]), y.astype(int), g,
                 ["b0", "b1", "b2", "c_planted", "c_n0", "c_n1", "c_n2"], ["A", "B"])
    return scores, y, g, ds


def opposite_bias_config(n, seed, bias=1.0):
    """Two equal groups sharing feature weights with intercepts of opposite sign."""
    w = [1.0, -1.0, 0.5, 0.0, 0.0]
    return SynthConfig(n=n, p=5, n_groups=2, group_weights=[w, w], group_bias=[-bias, bias],
                       group_proportions=[0.5, 0.5], seed=seed)


def opposite_bias(n, seed, bias=1.0):
    return synth_generate(opposite_bias_config(n, seed, bias))[0]


def mc_subgroup(n, seed, shift=1.5):
    """Scores are calibrated except where x0 > 0.5, which is pushed down by ``shift`` logits."""
    rng = np.random.default_rng(seed)
    X = rng.random((n, 3))
    z = 3 * (X[:, 1] - 0.5)
    y = (rng.random(n) < sigmoid(z)).astype(float)
    sub = X[:, 0] > 0.5
    return sigmoid(z - shift * sub), X, y, sub


def shifted_minority(n, seed, minority=0.25, shift=1.0, minority_bias=2.0):
    """A small group with its own intercept and a shifted fourth feature the outcome ignores."""
    w = [1.0, -1.0, 0.5, 0.0, 0.0]
    mean_shift = np.zeros((2, 5))
    mean_shift[1, 3] = shift
    cfg = SynthConfig(n=n, p=5, n_groups=2, group_weights=[w, w], group_bias=[-0.5, minority_bias],
                      group_proportions=[1 - minority, minority], seed=seed, group_mean_shift=mean_shift)
    return synth_generate(cfg)[0]
