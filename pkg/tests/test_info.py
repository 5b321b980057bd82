import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from oracles import fixed_bin_codes, mi_counter, ssim_loops
from ratein import info
from ratein.info import InfoLossSpec, MIEstimatorConfig

EQUAL = MIEstimatorConfig(mode="entropy-equal-bins", bins=30)
finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


# -- binning ----------------------------------------------------------------------


def test_equal_mass_edges_distinct_values():
    edges = info.entropy_equal_bins(np.arange(10.0), 5)
    assert edges.tolist() == [0.0, 1.5, 3.5, 5.5, 7.5, 9.0]


def test_equal_mass_edges_merge_ties():
    # cut positions 2, 4, 6; the first falls inside the run of zeros and is dropped
    edges = info.entropy_equal_bins([0, 0, 0, 0, 1, 1, 2, 3], 4)
    assert edges.tolist() == [0.0, 0.5, 1.5, 3.0]


def test_equal_mass_snaps_cuts_to_level_boundaries():
    x = np.repeat(np.arange(8.0), [900, 1100, 1000, 1000, 950, 1050, 1000, 1000])
    edges = info.entropy_equal_bins(x, 30)
    assert edges.tolist() == [0.0, 0.5, 1.5, 2.5, 3.5, 4.5, 5.5, 6.5, 7.0]


def test_equal_mass_needs_enough_samples():
    with pytest.raises(info.InsufficientSamplesError):
        info.entropy_equal_bins(np.arange(5.0), 10)


@given(st.lists(st.integers(-10**6, 10**6), min_size=30, max_size=200, unique=True), st.integers(2, 30))
def test_equal_mass_bins_are_balanced_without_ties(values, bins):
    v = np.array(values, dtype=float)
    codes, _ = info.digitize(v, MIEstimatorConfig("entropy-equal-bins", bins))
    counts = np.bincount(codes, minlength=bins)
    assert counts.min() >= v.size // bins and counts.max() <= -(-v.size // bins)


def test_fixed_bins_match_counter_oracle(rng):
    a = rng.standard_normal(500)
    b = a + rng.standard_normal(500)
    expect = mi_counter(fixed_bin_codes(a.tolist(), 30), fixed_bin_codes(b.tolist(), 30))
    assert info.mi_pairwise_histogram(a, b) == pytest.approx(expect, abs=1e-12)


# -- MI oracles ------------------------------------------------------------------


@pytest.mark.parametrize("rho", [0.3, 0.6, 0.9])
def test_gaussian_mi_close_to_closed_form(rho):
    rng = np.random.default_rng(1)
    cov = [[1, rho], [rho, 1]]
    xy = rng.multivariate_normal([0, 0], cov, size=50_000)
    est = info.mi_pairwise_histogram(xy[:, 0], xy[:, 1], EQUAL)
    assert abs(est - (-0.5 * math.log(1 - rho**2))) < 0.15


def test_self_information_of_eight_levels_is_ln8():
    x = np.random.default_rng(2).integers(0, 8, size=8000).astype(float)
    est = info.mi_pairwise_histogram(x, x, MIEstimatorConfig(mode="fixed-bins", bins=8))
    assert abs(est - math.log(8)) < 0.05


def test_independent_variables_have_small_mi():
    rng = np.random.default_rng(3)
    assert info.mi_pairwise_histogram(rng.random(50_000), rng.random(50_000), EQUAL) < 0.02


@settings(max_examples=50)
@given(arrays(float, st.integers(4, 60), elements=finite), st.data())
def test_mi_is_symmetric_and_nonnegative(a, data):
    b = data.draw(arrays(float, a.size, elements=finite))
    for cfg in (MIEstimatorConfig(), MIEstimatorConfig("fixed-bins", 5)):
        ab = info.mi_pairwise_histogram(a, b, cfg)
        assert ab >= 0
        assert ab == info.mi_pairwise_histogram(b, a, cfg)


@settings(max_examples=50)
@given(arrays(float, st.integers(4, 60), elements=finite))
def test_self_mi_equals_entropy(a):
    cfg = MIEstimatorConfig("fixed-bins", 10)
    assert info.mi_pairwise_histogram(a, a, cfg) == pytest.approx(info.entropy_histogram(a, cfg), abs=1e-12)


def test_constant_has_zero_entropy():
    assert info.entropy_histogram(np.full(20, 3.0)) == 0.0


def test_mi_input_validation():
    with pytest.raises(info.InsufficientSamplesError):
        info.mi_pairwise_histogram([1, 2, 3], [1, 2, 3])
    with pytest.raises(ValueError):
        info.mi_pairwise_histogram([1, 2, 3, 4], [1, 2, 3])
    with pytest.raises(ValueError):
        info.mi_pairwise_histogram([1, 2, 3, np.nan], [1, 2, 3, 4])


def test_mi_per_unit_matches_pairwise(rng):
    x = rng.standard_normal(40)
    h = np.stack([x**2, np.sin(x), rng.standard_normal(40)], axis=1)
    per_unit = info.mi_per_unit(x, h)
    assert per_unit.shape == (1, 3)
    for j in range(3):
        assert per_unit[0, j] == pytest.approx(info.mi_pairwise_histogram(x, h[:, j]), abs=1e-12)


def test_batch_mi_needs_four_rows():
    with pytest.raises(info.InsufficientSamplesError):
        info.mi_input_to_layer(np.zeros(3), np.zeros((3, 5)))


# -- SSIM -----------------------------------------------------------------------


def test_ssim_identity_is_exactly_one(rng):
    a = rng.random((20, 24))
    assert abs(info.ssim(a, a) - 1.0) < 1e-12


def test_ssim_constant_images_closed_form():
    c1 = 0.01**2
    got = info.ssim(np.zeros((16, 16)), np.ones((16, 16)))
    assert abs(got - c1 / (1 + c1)) < 1e-9


def test_ssim_matches_loop_oracle(rng):
    a = rng.random((13, 15))
    b = np.clip(a + 0.2 * rng.standard_normal(a.shape), 0, 1)
    assert info.ssim(a, b, window=7) == pytest.approx(ssim_loops(a, b, 7), abs=1e-12)


def test_ssim_symmetric(rng):
    a, b = rng.random((12, 12)), rng.random((12, 12))
    assert info.ssim(a, b) == info.ssim(b, a)


def test_ssim_decreases_as_more_pixels_are_zeroed():
    means = []
    for frac in (0.05, 0.1, 0.2, 0.4):
        vals = []
        for seed in range(100):
            r = np.random.default_rng(seed)
            a = r.random((24, 24))
            b = np.where(r.random(a.shape) < frac, 0.0, a)
            vals.append(info.ssim(a, b))
        means.append(np.mean(vals))
    assert all(x > y for x, y in zip(means, means[1:]))


def test_ssim_rejects_small_maps():
    with pytest.raises(ValueError):
        info.ssim(np.zeros((5, 5)), np.zeros((5, 5)), window=11)


@pytest.mark.parametrize("n, shape", [(50, (5, 10)), (49, (7, 7)), (13, (1, 13)), (64, (8, 8))])
def test_most_square_shape(n, shape):
    assert info.most_square_shape(n) == shape


def test_ssim_vectors_shrinks_window(rng):
    v = rng.random(50)
    assert info.ssim_vectors(v, v) == pytest.approx(1.0, abs=1e-12)
    assert info.ssim_vectors(v, np.where(rng.random(50) < 0.3, 0.0, v)) < 1.0


# -- loss functional -----------------------------------------------------------------


def test_spec_validation():
    with pytest.raises(ValueError):
        InfoLossSpec(epsilon=1.0)
    with pytest.raises(ValueError):
        InfoLossSpec(delta=0.0)
    with pytest.raises(ValueError):
        InfoLossSpec(estimator="kl")


def test_loss_is_zero_without_dropout(rng):
    x = rng.standard_normal((32, 1))
    pre = np.maximum(x @ rng.standard_normal((1, 10)), 0)
    for spec in (InfoLossSpec(), InfoLossSpec(reference="layer-input"), InfoLossSpec(estimator="ssim")):
        m = info.measure_loss(spec, x, pre, pre)
        assert m.delta_i == pytest.approx(0.0, abs=1e-12)


def test_loss_positive_when_units_are_zeroed(rng):
    x = rng.standard_normal((64, 1))
    pre = x @ rng.standard_normal((1, 20)) + 0.1
    post = pre * (rng.random(pre.shape) > 0.5) * 2
    for spec in (InfoLossSpec(), InfoLossSpec(reference="layer-input"), InfoLossSpec(estimator="ssim")):
        assert info.measure_loss(spec, x, pre, post).delta_i > 0


def test_zero_reference_is_undefined():
    with pytest.raises(info.UndefinedReferenceError):
        info.measure_loss(InfoLossSpec(reference="layer-input"), None, np.zeros(8), np.zeros(8))
