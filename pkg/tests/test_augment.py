import numpy as np
import pytest

from gprfuse.augment import (AugmentConfig, augment_normals, build_corpus, image_mix,
                             noise_inject, place_simulated, read_corpus, sample_segments,
                             scaled_fusion_variants, write_corpus)
from gprfuse.bscan import BScan
from gprfuse.fuse import fuse


def test_noise_inject(rng):
    img = rng.normal(size=(128, 300))
    np.testing.assert_array_equal(noise_inject(img, 0.0), img)
    out = noise_inject(img, 0.3, seed=4)
    assert (out - img).std() == pytest.approx(0.3, rel=0.05)
    np.testing.assert_array_equal(out, noise_inject(img, 0.3, seed=4))
    with pytest.raises(ValueError):
        noise_inject(img, -1.0)


def test_image_mix(rng):
    a, b = rng.normal(size=(4, 5)), rng.normal(size=(4, 5))
    np.testing.assert_array_equal(image_mix(a, b, 1.0), a)
    np.testing.assert_array_equal(image_mix(a, b, 0.0), b)
    np.testing.assert_allclose(image_mix(2 * b, b, 0.5), 1.5 * b)
    with pytest.raises(ValueError):
        image_mix(a, np.zeros((3, 5)), 0.5)
    with pytest.raises(ValueError):
        image_mix(a, b, 1.5)


def _sim(rows=32, cols=40):
    sim = np.zeros((rows, cols))
    sim[10:14, 18:22] = 1.0
    return sim


def test_identity_transform_equals_plain_fuse(rng):
    normal = rng.normal(size=(32, 40))
    cfg = AugmentConfig(scale_range=(1.0, 1.0), placement="center", hflip=False, canvas="zero")
    canvas = place_simulated(_sim(), 32, 40, 1.0, 0)
    np.testing.assert_array_equal(canvas, _sim())
    out = scaled_fusion_variants(normal, _sim(), cfg, count=1)
    assert out[0].offset == 0
    np.testing.assert_allclose(out[0].image, fuse(normal, _sim()), atol=1e-12)


def test_normal_canvas_superposes(rng):
    normal = rng.normal(size=(32, 40))
    cfg = AugmentConfig(scale_range=(1.0, 1.0), placement="center", hflip=False)
    out = scaled_fusion_variants(normal, _sim(), cfg, count=1)
    np.testing.assert_allclose(out[0].image, fuse(normal, normal + _sim()), atol=1e-12)


def test_count_and_tags(rng):
    normals = [rng.normal(size=(32, 40)) for _ in range(5)]
    cfg = AugmentConfig(target_count=30, seed=2)
    out = scaled_fusion_variants(normals, [_sim()], cfg)
    assert len(out) == 30
    for v in out:
        assert v.image.shape == (32, 40) and np.all(np.isfinite(v.image))
        assert 0.6 <= v.scale <= 1.4
        assert set(v.provenance()) == {"scale", "offset", "flipped", "normal_index", "sim_index"}


def test_offsets_shift_signature():
    sim = _sim()
    a = place_simulated(sim, 32, 40, 1.0, 0)
    b = place_simulated(sim, 32, 40, 1.0, 7)
    xc = [float((np.roll(a, k, axis=1) * b).sum()) for k in range(-10, 11)]
    assert int(np.argmax(xc)) - 10 == 7


def test_out_of_frame_skipped():
    assert place_simulated(_sim(), 32, 40, 1.0, 100) is None
    cfg = AugmentConfig(scale_range=(30.0, 30.0), hflip=False)
    out = scaled_fusion_variants(np.zeros((32, 40)), _sim(), cfg, count=3)
    assert len(out) == 0 and out.skipped > 0


def test_time_axis_never_touched(rng):
    normals = [BScan(rng.normal(size=(24, 30)))]
    sims = [rng.normal(size=(40, 50))]
    c = build_corpus(normals, sims, AugmentConfig(target_count=10))
    for img in c.images:
        data = img.data if isinstance(img, BScan) else img
        assert data.shape == (24, 30)


def test_normals_class(rng):
    normals = [rng.normal(size=(8, 10)) for _ in range(3)]
    out = augment_normals(normals, AugmentConfig(target_count=12))
    assert len(out) == 12
    for a, b in zip(out[:3], normals):
        np.testing.assert_array_equal(a, b)


def test_corpus_reproducible_and_io(tmp_path, rng):
    normals = [rng.normal(size=(16, 20)) for _ in range(4)]
    sims = [_sim(16, 20)]
    cfg = AugmentConfig(target_count=6, seed=9)
    c1, c2 = build_corpus(normals, sims, cfg), build_corpus(normals, sims, cfg)
    assert c1.labels == [0] * 6 + [1] * 6
    for a, b in zip(c1.images, c2.images):
        np.testing.assert_array_equal(np.asarray(a), np.asarray(b))
    manifest = write_corpus(c1, tmp_path)
    back = read_corpus(manifest)
    assert back.labels == c1.labels
    assert back.provenance[0]["class"] == "normal"
    assert back.provenance[-1]["class"] == "synthetic_anomaly"


def test_sample_segments(rng):
    scan = BScan(rng.normal(size=(8, 1000)))
    segs = sample_segments(scan, 500, 100, 20, seed=1)
    assert len(segs) == 20
    for s in segs:
        assert s.shape == (8, 100)
    with pytest.raises(ValueError):
        sample_segments(scan, 50, 100, 1)


def test_config_validation():
    for kw in ({"mix_lambda_range": (0.0, 0.5)}, {"scale_range": (-1.0, 1.0)},
               {"placement": "edge"}, {"target_count": 0}, {"canvas": "x"}):
        with pytest.raises(ValueError):
            AugmentConfig(**kw)
