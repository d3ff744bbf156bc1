import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from unimodal_cost import CostVolume, DomainError, softargmin, softmax_neg_cost, wta_argmin

mpmath.mp.dps = 40


def one_pixel(costs):
    return CostVolume(np.asarray(costs, dtype=float)[None, None, :])


def mp_softmax(costs):
    e = [mpmath.exp(-mpmath.mpf(c)) for c in costs]
    s = mpmath.fsum(e)
    return [float(x / s) for x in e]


def test_uniform_costs_give_uniform_probs():
    p = softmax_neg_cost(one_pixel([0.0, 0.0, 0.0])).probs[0, 0]
    np.testing.assert_allclose(p, [1 / 3] * 3, rtol=0, atol=1e-15)


def test_huge_gap_gives_delta():
    p = softmax_neg_cost(one_pixel([0.0, 1e6, 1e6])).probs[0, 0]
    assert p[0] == 1.0 and p[1] == 0.0 and p[2] == 0.0


def test_softmax_matches_extended_precision():
    p = softmax_neg_cost(one_pixel([1.0, 2.0, 3.0])).probs[0, 0]
    np.testing.assert_allclose(p, mp_softmax([1.0, 2.0, 3.0]), rtol=1e-15)


def test_softmax_no_overflow_for_large_costs():
    p = softmax_neg_cost(one_pixel([-800.0, -799.0, 900.0])).probs[0, 0]
    np.testing.assert_allclose(p, mp_softmax([-800.0, -799.0, 900.0]), rtol=1e-14)


def test_non_finite_cost_names_pixel():
    c = np.zeros((2, 3, 4))
    c[1, 2, 3] = np.nan
    with pytest.raises(DomainError, match=r"m=1, n=2"):
        CostVolume(c)


def test_rejects_bad_shapes():
    with pytest.raises(DomainError):
        CostVolume(np.zeros((3, 3)))
    with pytest.raises(DomainError):
        CostVolume(np.zeros((3, 3, 1)))


def test_constructor_does_not_freeze_caller_array():
    c = np.zeros((1, 1, 3))
    CostVolume(c)
    c[0, 0, 0] = 1.0


def test_softargmin_uniform_is_center():
    d = softargmin(CostVolume(np.zeros((2, 3, 5)))).values
    np.testing.assert_allclose(d, 2.0, atol=1e-15)


@pytest.mark.parametrize("k", [0, 3, 7])
def test_softargmin_on_delta_equals_index(k):
    c = np.zeros((1, 1, 8))
    c[0, 0, k] = -1e6
    assert abs(softargmin(CostVolume(c)).values[0, 0] - k) < 1e-9


def test_softargmin_matches_brute_force(rng):
    c = rng.normal(size=(3, 3, 8))
    got = softargmin(CostVolume(c)).values
    for m in range(3):
        for n in range(3):
            e = [np.exp(-c[m, n, i]) for i in range(8)]
            s = sum(e)
            ref = sum(i * e[i] / s for i in range(8))
            assert abs(got[m, n] - ref) < 1e-12


def test_wta_examples():
    assert wta_argmin(one_pixel([3, 1, 2])).values[0, 0] == 1
    assert wta_argmin(one_pixel([5, 5, 5])).values[0, 0] == 0


def test_wta_matches_linear_scan(rng):
    c = rng.integers(0, 4, size=(4, 5, 6)).astype(float)
    got = wta_argmin(CostVolume(c)).values
    for m in range(4):
        for n in range(5):
            best = 0
            for i in range(6):
                if c[m, n, i] < c[m, n, best]:
                    best = i
            assert got[m, n] == best


def test_float32_opt_in():
    c = np.zeros((1, 1, 4), dtype=np.float32)
    assert CostVolume(c, allow_float32=True).costs.dtype == np.float32
    assert CostVolume(c).costs.dtype == np.float64


volumes = arrays(np.float64, st.tuples(st.integers(1, 3), st.integers(1, 3), st.integers(2, 9)),
                 elements=st.floats(-50, 50))


@settings(max_examples=200, deadline=None)
@given(volumes, st.floats(-1e3, 1e3))
def test_shift_invariance(c, k):
    base = CostVolume(c)
    shifted = CostVolume(c + k)
    np.testing.assert_allclose(softmax_neg_cost(shifted).probs, softmax_neg_cost(base).probs,
                               rtol=0, atol=1e-10)
    np.testing.assert_allclose(softargmin(shifted).values, softargmin(base).values, rtol=0, atol=1e-10)


@settings(max_examples=200, deadline=None)
@given(volumes)
def test_range_and_normalisation(c):
    vol = CostVolume(c)
    p = softmax_neg_cost(vol).probs
    d = softargmin(vol).values
    assert np.all(np.abs(p.sum(-1) - 1) <= 1e-12)
    assert np.all(p >= 0)
    assert np.all((d >= 0) & (d <= vol.d_max))


@settings(max_examples=200, deadline=None)
@given(volumes, st.data())
def test_softargmin_agrees_with_wta_on_deltas(c, data):
    c = np.clip(c, -20, 20)
    h, w, nd = c.shape
    ks = data.draw(arrays(np.int64, (h, w), elements=st.integers(0, nd - 1)))
    for m in range(h):
        for n in range(w):
            c[m, n, ks[m, n]] = c[m, n].min() - 50.0
    vol = CostVolume(c)
    assert np.all(np.abs(softargmin(vol).values - wta_argmin(vol).values) < 1e-9)
