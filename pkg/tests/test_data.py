import math

import numpy as np
import pytest
from scipy.stats import norm

from ratein import data


def test_noise_free_targets_are_exact_sine():
    ds = data.gen_regression(50, 0.0, seed=1)
    assert np.array_equal(ds.y, np.sin(ds.x))
    assert ds.x.min() >= -3 and ds.x.max() <= 3


def test_noise_std_within_two_percent():
    ds = data.gen_regression(200_000, 0.3, seed=2)
    assert abs(np.std(ds.y - np.sin(ds.x)) / 0.3 - 1) < 0.02


def test_splits_are_independent_and_reproducible():
    a_train, a_test = data.regression_splits(20, 20, 0.1, 5)
    b_train, _ = data.regression_splits(20, 20, 0.1, 5)
    assert np.array_equal(a_train.x, b_train.x)
    assert not np.array_equal(a_train.x, a_test.x)


def test_two_blobs_bayes_accuracy():
    sep = 2.0
    ds = data.gen_blobs(100_000, 2, sep, seed=3)
    pred = (ds.x[:, 0] > 0).astype(int)
    assert abs(np.mean(pred == ds.labels) - norm.cdf(sep / 2)) < 0.01


def test_blob_labels_balanced():
    ds = data.gen_blobs(301, 3, 4.0, seed=0)
    counts = np.bincount(ds.labels)
    assert counts.max() - counts.min() <= 1
    chords = np.linalg.norm(ds.centers - np.roll(ds.centers, 1, axis=0), axis=1)
    assert np.allclose(chords, 4.0)


def test_disk_area_approaches_pi_r2():
    mask = data.disk_mask(401, (200, 200), 150)
    assert abs(mask.sum() / (math.pi * 150**2) - 1) < 0.01


def test_shapes():
    shapes = data.gen_shapes(32, seed=1, count=6)
    for s in shapes:
        assert s.image.shape == s.mask.shape == (32, 32)
        assert s.mask.any() and not s.mask.all()
        assert s.kind in ("disk", "rect")
    with pytest.raises(ValueError):
        data.gen_shapes(8)


def test_regression_csv_round_trip(tmp_path):
    ds = data.gen_regression(10, 0.2, seed=4)
    path = tmp_path / "d.csv"
    data.save_regression_csv(ds, path, "seed=4")
    assert path.read_text().startswith("# seed=4\n")
    back = data.load_regression_csv(path)
    assert np.array_equal(back.x, ds.x) and np.array_equal(back.y, ds.y)


def test_grid_csv_round_trip(tmp_path):
    g = np.random.default_rng(0).random((4, 5))
    data.save_grid_csv(g, tmp_path / "g.csv")
    assert np.array_equal(data.load_grid_csv(tmp_path / "g.csv"), g)
