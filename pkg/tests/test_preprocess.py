import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra import numpy as hnp

from gprfuse.bscan import BScan
from gprfuse.preprocess import (PreprocessConfig, apply_gain, gain_curve, median_filter,
                                preprocess, remove_background)


def test_background_identical_traces():
    s = BScan(np.tile(np.arange(5.0)[:, None], (1, 7)))
    assert not remove_background(s).data.any()


def test_background_blip_bias():
    data = np.full((3, 10), 2.0)
    data[1, 4] += 5.0
    out = remove_background(BScan(data)).data
    assert out[1, 4] == pytest.approx(5.0 - 5.0 / 10)
    assert out[1, 0] == pytest.approx(-5.0 / 10)
    np.testing.assert_allclose(out.mean(axis=1), 0.0, atol=1e-12)


def test_background_errors_and_zero():
    with pytest.raises(ValueError):
        remove_background(BScan(np.ones((4, 1))))
    assert not remove_background(BScan(np.zeros((3, 3)))).data.any()


@given(hnp.arrays(np.float64, (5, 6), elements=st.floats(-100, 100)))
def test_background_idempotent(data):
    once = remove_background(BScan(data))
    np.testing.assert_allclose(remove_background(once).data, once.data, atol=1e-9)


def test_median_cases():
    patch = np.zeros((3, 3))
    patch[1, 1] = 99.0
    assert median_filter(BScan(patch), 3).data[1, 1] == 0.0
    const = BScan(np.full((4, 5), 3.0))
    assert median_filter(const, 3) == const
    s = BScan(np.arange(20.0).reshape(4, 5))
    assert median_filter(s, 1) == s
    with pytest.raises(ValueError):
        median_filter(s, 2)
    with pytest.raises(ValueError):
        median_filter(s, 5)


@given(hnp.arrays(np.float64, (6, 6), elements=st.floats(-10, 10)))
def test_median_commutes_with_monotone_map(data):
    f = lambda x: x ** 3 + 2 * x  # strictly increasing
    a = median_filter(BScan(f(data)), 3).data
    b = f(median_filter(BScan(data), 3).data)
    np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-12)


def test_median_replicate_padding():
    data = np.zeros((3, 3))
    data[0, 0] = 1.0
    data[0, 1] = 1.0
    data[1, 0] = 1.0
    # replicated corner neighbourhood holds six ones out of nine
    assert median_filter(BScan(data), 3).data[0, 0] == 1.0


def test_gain_values():
    g = gain_curve(101, 1.0, 0.025, 50.0)
    assert g[0] == 1.0
    assert g[100] == pytest.approx(math.exp(2.5))
    assert np.all(np.diff(g) >= 0)
    assert gain_curve(1000, 1.0, 0.025, 50.0).max() == 50.0


def test_gain_row0_and_zero_alpha(rng):
    s = BScan(rng.normal(size=(20, 4)))
    out = apply_gain(s, PreprocessConfig())
    np.testing.assert_array_equal(out.data[0], s.data[0])
    assert apply_gain(s, PreprocessConfig(gain_alpha=0.0)) == s


@given(hnp.arrays(np.float64, (30, 4), elements=st.floats(-5, 5)))
def test_gain_bounded_by_cap(data):
    cfg = PreprocessConfig(gain_alpha=0.5, gain_tmax_clip=3.0)
    out = apply_gain(BScan(data, dt=1.0), cfg).data
    assert np.abs(out).max() <= 3.0 * np.abs(data).max() + 1e-12


def test_config_validation():
    for kw in ({"median_kernel": 2}, {"gain_tmax_clip": 0.5}, {"gain_alpha": -1.0},
               {"background_mode": "other"}):
        with pytest.raises(ValueError):
            PreprocessConfig(**kw)


def test_preprocess_order(rng):
    s = BScan(rng.normal(size=(16, 12)))
    cfg = PreprocessConfig()
    expected = apply_gain(median_filter(remove_background(s), 3), cfg)
    assert preprocess(s, cfg) == expected
