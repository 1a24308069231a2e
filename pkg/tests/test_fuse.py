import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra import numpy as hnp

from gprfuse.bscan import BScan
from gprfuse.fuse import WaveletPyramid, db2_filter, dwt2, fuse, idwt2, merge

from oracles import oracle_dwt2


def test_filter_identities():
    h = db2_filter().lowpass
    g = db2_filter().highpass
    assert abs(h.sum() - math.sqrt(2)) <= 1e-12
    assert abs((h ** 2).sum() - 1) <= 1e-12
    assert abs(h[0] * h[2] + h[1] * h[3]) <= 1e-12
    assert abs(g.sum()) <= 1e-12


@pytest.mark.parametrize("shape", [(64, 64), (9, 13)])
def test_dwt2_matches_oracle(rng, shape):
    img = rng.normal(size=shape)
    p = dwt2(img)
    for got, want in zip(p.bands(), oracle_dwt2(img)):
        np.testing.assert_allclose(got, want, atol=1e-9, rtol=0)


def test_constant_image():
    p = dwt2(np.full((16, 20), 3.0))
    assert max(np.abs(b).max() for b in (p.lh, p.hl, p.hh)) <= 1e-9
    np.testing.assert_allclose(p.ll, 6.0, atol=1e-9)
    only_ll = WaveletPyramid(p.ll, 0 * p.lh, 0 * p.hl, 0 * p.hh, p.shape)
    np.testing.assert_allclose(idwt2(only_ll), 3.0, atol=1e-9)


def test_impulse_gives_tap_products():
    img = np.zeros((12, 12))
    img[6, 6] = 1.0
    f = db2_filter()
    p = dwt2(img)
    # analysis row k touches x[2k+2-t]; the impulse at 6 is hit by (k=2, t=0), (k=3, t=2)...
    for k, t in ((2, 0), (3, 2)):
        for m, s in ((2, 0), (3, 2)):
            assert p.ll[m, k] == pytest.approx(f.lowpass[s] * f.lowpass[t])
            assert p.hh[m, k] == pytest.approx(f.highpass[s] * f.highpass[t])


def test_zero_pyramid():
    p = dwt2(np.zeros((8, 8)))
    assert not idwt2(p).any()


def test_round_trip_many(rng):
    for i in range(100):
        rows = int(rng.integers(8, 257))
        cols = int(rng.integers(8, 513))
        img = rng.normal(size=(rows, cols)) * rng.uniform(0.1, 10)
        assert np.abs(idwt2(dwt2(img)) - img).max() <= 1e-9


def test_round_trip_bscan_segment(rng):
    img = rng.normal(size=(128, 300))
    assert np.abs(idwt2(dwt2(img)) - img).max() <= 1e-9


def test_dwt2_too_small():
    with pytest.raises(ValueError):
        dwt2(np.zeros((3, 10)))


def test_merge_rules():
    pa = WaveletPyramid(np.array([[1.0, 5.0]]), np.zeros((1, 2)), np.zeros((1, 2)),
                        np.array([[-4.0, 1.0]]), (2, 4))
    pb = WaveletPyramid(np.array([[3.0, 2.0]]), np.zeros((1, 2)), np.zeros((1, 2)),
                        np.array([[3.0, -2.0]]), (2, 4))
    m = merge(pa, pb)
    np.testing.assert_array_equal(m.ll, [[1.0, 2.0]])
    np.testing.assert_array_equal(m.hh, [[-4.0, -2.0]])
    assert merge(pa, pb, detail="signed_max").hh[0, 0] == 3.0
    with pytest.raises(ValueError):
        merge(pa, dwt2(np.zeros((8, 8))))


pyramids = st.integers(0, 2**32 - 1).map(
    lambda s: dwt2(np.random.default_rng(s).normal(size=(8, 10))))


@given(pyramids, pyramids)
def test_merge_commutative_idempotent(pa, pb):
    ab, ba = merge(pa, pb), merge(pb, pa)
    for x, y in zip(ab.bands(), ba.bands()):
        np.testing.assert_array_equal(x, y)
    for x, y in zip(merge(pa, pa).bands(), pa.bands()):
        np.testing.assert_array_equal(x, y)


def test_fuse_self_identity(rng):
    a = rng.normal(size=(32, 40))
    assert np.abs(fuse(a, a) - a).max() <= 1e-9
    s = BScan(a, origin_x=3.0)
    out = fuse(s, s)
    assert isinstance(out, BScan) and out.origin_x == 3.0


def test_fuse_with_zero(rng):
    a = rng.normal(size=(4, 4))
    pa = dwt2(a)
    p = dwt2(fuse(a, np.zeros((4, 4))))
    np.testing.assert_allclose(p.ll, np.minimum(pa.ll, 0.0), atol=1e-9)
    for got, want in zip((p.lh, p.hl, p.hh), (pa.lh, pa.hl, pa.hh)):
        np.testing.assert_allclose(got, want, atol=1e-9)


def test_fuse_shows_hyperbola(rng):
    rows, cols = 64, 96
    r, c = np.mgrid[0:rows, 0:cols]
    t0 = 20 + np.sqrt(100 + (c - 48.0) ** 2) * 0.8
    sim = np.exp(-((r - t0) ** 2) / 4.0) * np.cos((r - t0) * 1.2)
    normal = 0.05 * rng.normal(size=(rows, cols)) + 0.3
    fused = fuse(normal, sim)
    box = (slice(20, 60), slice(20, 76))
    x = fused[box] - fused[box].mean()
    y = sim[box] - sim[box].mean()
    assert float((x * y).sum() / np.sqrt((x * x).sum() * (y * y).sum())) > 0.5


def test_fuse_resizes_simulated(rng):
    out = fuse(rng.normal(size=(16, 24)), rng.normal(size=(10, 30)))
    assert out.shape == (16, 24)


@given(hnp.arrays(np.float64, (8, 12), elements=st.floats(-10, 10)),
       hnp.arrays(np.float64, (8, 12), elements=st.floats(-10, 10)))
def test_fuse_energy_bound(a, b):
    out = fuse(a, b)
    assert np.linalg.norm(out) <= np.linalg.norm(a) + np.linalg.norm(b) + 1e-9
