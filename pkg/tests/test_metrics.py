import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import auarc_enumerated, buc_chebyshev, dsc_sets, ece_loops, picp_loops
from ratein import metrics
from ratein.mc import McSummary


def test_mse_and_acc():
    assert metrics.mse([1, 2, 3], [1, 2, 5]) == pytest.approx(4 / 3)
    assert metrics.acc([0, 1, 1, 2], [0, 1, 2, 2]) == 0.75
    with pytest.raises(ValueError):
        metrics.mse([1, 2], [1, 2, 3])


def test_dsc_known_values():
    a = np.array([[1, 1, 0], [0, 0, 0]], bool)
    b = np.array([[1, 0, 0], [0, 0, 1]], bool)
    assert metrics.dsc(a, b) == pytest.approx(0.5)
    assert metrics.dsc(np.zeros((3, 3)), np.zeros((3, 3))) == 1.0
    assert metrics.dsc(a, a) == 1.0


@pytest.mark.parametrize("seed", range(20))
def test_dsc_matches_set_counting(seed):
    r = np.random.default_rng(seed)
    a, b = r.random((6, 7)) < 0.4, r.random((6, 7)) < 0.4
    assert abs(metrics.dsc(a, b) - dsc_sets(a, b)) < 1e-12


@pytest.mark.parametrize("seed", range(20))
def test_ece_matches_loop_binning(seed):
    r = np.random.default_rng(seed)
    u = np.round(r.random(30), 2)  # rounding lands some values exactly on edges
    err = (r.random(30) < u).astype(float)
    assert abs(metrics.ece(u, err, 10) - ece_loops(u.tolist(), err.tolist(), 10)) < 1e-12


def test_ece_perfect_calibration_is_zero():
    assert metrics.ece([0.0, 0.0, 1.0, 1.0], [0, 0, 1, 1]) == 0.0


def test_ece_rejects_out_of_range():
    with pytest.raises(ValueError):
        metrics.ece([1.5], [1])


@pytest.mark.parametrize("seed", range(20))
def test_auarc_matches_tie_enumeration(seed):
    r = np.random.default_rng(seed)
    n = int(r.integers(2, 7))
    correct = (r.random(n) < 0.6).astype(float)
    u = r.integers(0, 3, size=n) / 2  # plenty of ties
    assert abs(metrics.auarc(correct, u) - auarc_enumerated(correct.tolist(), u.tolist())) < 1e-12


def test_auarc_perfect_ranking_beats_reversed():
    correct = np.array([1, 1, 1, 0, 0], float)
    good = np.array([0.1, 0.2, 0.3, 0.8, 0.9])
    assert metrics.auarc(correct, good) > metrics.auarc(correct, -good)
    assert metrics.auarc(np.ones(5), good) == pytest.approx(1.0)


@settings(max_examples=50)
@given(st.lists(st.tuples(st.booleans(), st.integers(0, 4)), min_size=2, max_size=30), st.randoms())
def test_auarc_is_permutation_invariant(pairs, rnd):
    shuffled = list(pairs)
    rnd.shuffle(shuffled)
    c1, u1 = map(np.array, zip(*pairs))
    c2, u2 = map(np.array, zip(*shuffled))
    assert metrics.auarc(c1, u1) == pytest.approx(metrics.auarc(c2, u2), abs=1e-12)


def test_boundary_band_of_square():
    mask = np.zeros((15, 15), bool)
    mask[3:12, 3:12] = True
    band, interior = metrics.boundary_band(mask, 5)
    # edge is the ring at rows/cols 3 and 11; the band reaches 2 pixels either side
    assert band[1, 1] and band[5, 5] and not band[6, 6] and not band[0, 0]
    assert interior.sum() == 3 * 3


@pytest.mark.parametrize("seed", range(20))
def test_buc_matches_chebyshev_oracle(seed):
    r = np.random.default_rng(seed)
    mask = np.zeros((14, 14), bool)
    r0, c0 = r.integers(0, 4, size=2)
    h, w = r.integers(7, 11, size=2)
    mask[r0 : r0 + h, c0 : c0 + w] = True
    u = r.random(mask.shape)
    expect = buc_chebyshev(u, mask, 3)
    assert expect is not None
    assert abs(metrics.buc(u, mask, 3) - expect) < 1e-12


def test_buc_undefined_for_thin_mask():
    mask = np.zeros((10, 10), bool)
    mask[4:6, 2:8] = True
    with pytest.raises(metrics.UndefinedMetricError):
        metrics.buc(np.ones((10, 10)), mask)


def test_picp_closed_interval_and_inf_ier():
    picp, width, ier = metrics.picp_and_width([1.0, 3.0], [0.0, 0.0], [0.5, 0.5], z=2.0)
    assert (picp, width, ier) == (0.5, 2.0, 4.0)
    assert metrics.picp_and_width([9.0], [0.0], [1.0])[2] == math.inf


@pytest.mark.parametrize("seed", range(20))
def test_picp_matches_loops(seed):
    r = np.random.default_rng(seed)
    y, mu, sd = r.normal(size=25), r.normal(size=25), r.random(25)
    got = metrics.picp_and_width(y, mu, sd, 1.96)
    expect = picp_loops(y.tolist(), mu.tolist(), sd.tolist(), 1.96)
    assert all(abs(a - b) < 1e-12 or a == b for a, b in zip(got, expect))


def test_picp_accepts_summary():
    mean = np.array([[0.0], [1.0]])
    std = np.array([[1.0], [1.0]])
    s = McSummary(mean, std, mean - std, mean + std, 1.0)
    assert metrics.picp_and_width([0.5, 5.0], s, z=1.0)[0] == 0.5
