import math

import numpy as np
import pytest
import torch

from gprfuse import featnet

from oracles import grad_check
from gprfuse.featnet import (TrainConfig, bce_loss, decode_checkpoint, encode_checkpoint, extract,
                             forward, history_csv, new_convnet, prepare, softmax, train)


def test_gradients_match_finite_differences():
    assert grad_check(per_tensor=40) <= 1e-4


def test_softmax_sums_to_one(rng):
    logits = torch.from_numpy(rng.normal(scale=30, size=(100, 2)))
    p = softmax(logits)
    assert torch.all(p > 0)
    assert float((p.sum(dim=1) - 1).abs().max()) <= 1e-6


def test_bce_values():
    assert abs(bce_loss([0.5], [1]) - math.log(2)) <= 1e-9
    assert bce_loss([1 - 1e-7], [1]) == pytest.approx(1e-7, rel=1e-3)
    assert bce_loss([0.9, 0.2], [1, 0]) == pytest.approx(-(math.log(0.9) + math.log(0.8)) / 2)
    assert bce_loss([1.0, 0.0], [0, 1]) > 0
    with pytest.raises(ValueError):
        bce_loss([0.5], [2])


def test_forward_contract(rng):
    net = new_convnet(0, (32, 48))
    img = rng.normal(size=(40, 60))
    emb, probs = forward(net, img)
    assert emb.shape == (128,) and np.all(np.isfinite(emb))
    assert abs(probs.sum() - 1) <= 1e-6
    emb2, _ = forward(net, img)
    np.testing.assert_array_equal(emb, emb2)
    emb0, _ = forward(net, np.zeros((40, 60)))
    assert np.all(np.isfinite(emb0))
    with pytest.raises(ValueError):
        forward(net, np.full((40, 60), np.nan))


def test_prepare_standardises(rng):
    x = prepare([rng.normal(3, 5, size=(20, 30))], (20, 30))[0, 0].numpy()
    assert abs(x.mean()) < 1e-5 and abs(x.std() - 1) < 1e-4


def test_extract_shapes_and_duplicates(rng):
    net = new_convnet(1, (16, 32))
    w = rng.normal(size=(16, 32))
    feats = extract(net, [w, rng.normal(size=(16, 32)), w])
    assert feats.shape == (3, 128)
    np.testing.assert_array_equal(feats[0], feats[2])


def _toy(n, rng, size=(16, 16)):
    imgs, labels = [], []
    for i in range(n):
        x = rng.normal(size=size)
        if i % 2:
            x[4:8, 4:12] += 3.0
        imgs.append(x)
        labels.append(i % 2)
    return imgs, labels


def test_lr_zero_keeps_parameters(rng):
    net = new_convnet(0, (16, 16))
    imgs, labels = _toy(8, rng)
    out = train(net, imgs, labels, TrainConfig(learning_rate=0.0, max_epochs=3, input_size=(16, 16)))
    for a, b in zip(net.parameters(), out.net.parameters()):
        assert torch.equal(a, b)


def test_train_deterministic_and_differs(rng):
    imgs, labels = _toy(32, rng)
    cfg = TrainConfig(max_epochs=2, input_size=(16, 16), seed=3)
    net = new_convnet(0, (16, 16))
    a, b = train(net, imgs, labels, cfg), train(net, imgs, labels, cfg)
    assert encode_checkpoint(a.net) == encode_checkpoint(b.net)
    assert a.history == b.history
    assert encode_checkpoint(a.net) != encode_checkpoint(net)


def test_loss_non_increasing_on_two_points():
    imgs = [np.zeros((16, 16)), np.zeros((16, 16))]
    imgs[1][4:8, 4:8] = 1.0
    cfg = TrainConfig(learning_rate=1e-3, batch_size=2, max_epochs=15, input_size=(16, 16))
    hist = train(new_convnet(0, (16, 16)), imgs, [0, 1], cfg).history
    losses = [h["loss"] for h in hist]
    assert all(b <= a + 1e-12 for a, b in zip(losses, losses[1:]))


def test_single_class_rejected(rng):
    imgs, _ = _toy(4, rng)
    with pytest.raises(ValueError):
        train(new_convnet(), imgs, [0] * 4, TrainConfig())


def test_converges_on_1600_images(rng):
    imgs, labels = _toy(1600, rng, size=(32, 32))
    cfg = TrainConfig(max_epochs=5, input_size=(32, 32))
    res = train(new_convnet(0, (32, 32)), imgs, labels, cfg)
    assert max(h["accuracy"] for h in res.history) >= 0.95


def test_checkpoint_round_trip(tmp_path, rng):
    net = new_convnet(5, (16, 24))
    raw = encode_checkpoint(net)
    assert raw[:4] == b"FNET"
    back = decode_checkpoint(raw)
    assert back.input_size == (16, 24)
    assert encode_checkpoint(back) == raw
    x = [rng.normal(size=(16, 24))]
    np.testing.assert_array_equal(extract(net, x), extract(back, x))
    with pytest.raises(ValueError):
        decode_checkpoint(b"XXXX" + raw[4:])
    with pytest.raises(ValueError):
        decode_checkpoint(raw[:-4])


def test_history_csv():
    text = history_csv([{"epoch": 1, "loss": 0.5, "accuracy": 0.75}])
    assert text.splitlines() == ["epoch,loss,accuracy", "1,0.5,0.75"]


def test_parameter_count():
    n = sum(p.numel() for p in new_convnet().parameters())
    assert 20_000 < n < 150_000
