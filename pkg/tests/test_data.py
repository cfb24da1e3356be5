import numpy as np
import pytest

from calparity.data import DataError, Dataset, SynthConfig, load_csv, split, synth_generate, write_csv


def _write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


def test_load_csv_one_hot_and_groups(tmp_path):
    p = _write(tmp_path / "d.csv", "age,job,y,sex\n30,a,1,M\n40,b,0,F\n50,c,1,M\n60,a,0,F\n")
    ds = load_csv(p, "y", "sex", ["job"])
    assert ds.feature_names == ("age", "job=a", "job=b", "job=c")
    assert ds.features.shape == (4, 4)
    np.testing.assert_array_equal(ds.groups, [0, 1, 0, 1])
    assert ds.group_names == ("M", "F")
    np.testing.assert_array_equal(ds.features[1], [40, 0, 1, 0])


def test_load_csv_non_binary_label(tmp_path):
    p = _write(tmp_path / "d.csv", "x,y,g\n1,0,a\n2,2,b\n")
    with pytest.raises(DataError, match="non-binary label"):
        load_csv(p, "y", "g")


def test_load_csv_errors(tmp_path):
    with pytest.raises(DataError):
        load_csv(_write(tmp_path / "e.csv", ""), "y", "g")
    with pytest.raises(DataError, match="missing|column"):
        load_csv(_write(tmp_path / "m.csv", "x,y\n1,0\n"), "y", "g")
    with pytest.raises(DataError, match="row|column"):
        load_csv(_write(tmp_path / "b.csv", "x,y,g\n1,0,a\nabc,1,b\n"), "y", "g")


def test_csv_round_trip(tmp_path):
    ds, p = synth_generate(SynthConfig(50, 3, 2, np.ones((2, 3)), [0, 1], [0.5, 0.5], seed=1))
    write_csv(ds, tmp_path / "r.csv", true_p=p)
    back = load_csv(tmp_path / "r.csv", "y", "group", group_order=ds.group_names)
    np.testing.assert_array_equal(back.features, ds.features)
    np.testing.assert_array_equal(back.labels, ds.labels)
    np.testing.assert_array_equal(back.groups, ds.groups)


def test_split_sizes_and_determinism():
    a = split(10, (0.6, 0.2, 0.2), seed=7)
    assert (a.train.size, a.val.size, a.test.size) == (6, 2, 2)
    b = split(10, (0.6, 0.2, 0.2), seed=7)
    for u, v in zip((a.train, a.val, a.test), (b.train, b.val, b.test)):
        np.testing.assert_array_equal(u, v)
    allidx = np.sort(np.concatenate([a.train, a.val, a.test]))
    np.testing.assert_array_equal(allidx, np.arange(10))


def test_split_rejects_bad_input():
    with pytest.raises((DataError, ValueError)):
        split(2)
    with pytest.raises((DataError, ValueError)):
        split(10, (0.5, 0.2, 0.2))


def test_split_preserves_group_proportions():
    ds, _ = synth_generate(SynthConfig(100_000, 1, 3, np.zeros((3, 1)), [0, 0, 0], [0.5, 0.3, 0.2], seed=0))
    full = np.bincount(ds.groups, minlength=3) / ds.n
    for seed in range(20):
        tr = split(ds, seed=seed).train
        frac = np.bincount(ds.groups[tr], minlength=3) / tr.size
        assert np.all(np.abs(frac - full) < 0.02)


def test_synth_symmetric_design():
    n = 40_000
    ds, p = synth_generate(SynthConfig(n, 2, 2, np.zeros((2, 2)), [0, 0], [0.5, 0.5], seed=3))
    assert np.all(p == 0.5)
    assert abs(ds.labels.mean() - 0.5) < 3 / np.sqrt(n)


def test_synth_group_bias():
    ds, _ = synth_generate(SynthConfig(40_000, 2, 2, np.zeros((2, 2)), [-2, 2], [0.5, 0.5], seed=4))
    for g, target in ((0, 1 / (1 + np.exp(2))), (1, 1 / (1 + np.exp(-2)))):
        y = ds.labels[ds.groups == g]
        assert abs(y.mean() - target) < 3 * np.sqrt(target * (1 - target) / y.size)


def test_synth_deterministic():
    cfg = SynthConfig(100, 3, 2, np.ones((2, 3)), [0, 1], [0.3, 0.7], seed=9)
    a, pa = synth_generate(cfg)
    b, pb = synth_generate(cfg)
    assert a.features.tobytes() == b.features.tobytes()
    assert a.labels.tobytes() == b.labels.tobytes()
    assert pa.tobytes() == pb.tobytes()


def test_synth_config_validation():
    with pytest.raises(DataError):
        SynthConfig(10, 2, 2, np.zeros((2, 2)), [0, 0], [0.6, 0.6])
    with pytest.raises(DataError):
        SynthConfig(10, 2, 2, np.zeros((3, 2)), [0, 0], [0.5, 0.5])


def test_dataset_take_and_select():
    ds, _ = synth_generate(SynthConfig(20, 3, 2, np.ones((2, 3)), [0, 0], [0.5, 0.5], seed=0))
    sub = ds.take(np.arange(5))
    assert sub.n == 5 and sub.group_names == ds.group_names
    assert ds.select_features(["x2"]).features.shape == (20, 1)
    assert ds.drop_features(["x0"]).feature_names == ("x1", "x2")
    with pytest.raises(DataError):
        Dataset(np.zeros((2, 1)), [0, 2], [0, 0], ("a",), ("g",))
