import numpy as np
import pytest

from lungxai.nn import ShapeError
from lungxai.segmentation import (LungSegmenter, UNetConfig, apply_lung_mask, binarize, build_unet,
                                  dice_coefficient, dice_scores)


def brute_dice(a, b):
    tp = fp = fn = 0
    for p, q in zip(np.ravel(a), np.ravel(b)):
        tp += bool(p) and bool(q)
        fp += bool(p) and not q
        fn += (not p) and bool(q)
    return 1.0 if tp + fp + fn == 0 else 2 * tp / (2 * tp + fp + fn)


def test_dice_simple_cases():
    a = np.array([[1, 1], [0, 0]])
    assert dice_coefficient(a, a) == 1.0
    assert dice_coefficient(a, 1 - a) == 0.0
    assert dice_coefficient(np.zeros((3, 3)), np.zeros((3, 3))) == 1.0
    assert dice_coefficient(a, np.array([[1, 0], [0, 0]])) == pytest.approx(2 / 3)


def test_dice_against_counter_on_random_pairs():
    rng = np.random.default_rng(3)
    A = rng.random((200, 8, 8)) < rng.random((200, 1, 1))
    B = rng.random((200, 8, 8)) < rng.random((200, 1, 1))
    batched = dice_scores(A, B)
    for a, b, d in zip(A, B, batched):
        assert dice_coefficient(a, b) == brute_dice(a, b) == d


def test_dice_shape_mismatch():
    with pytest.raises(ValueError):
        dice_coefficient(np.zeros((2, 2)), np.zeros((3, 3)))


def test_unet_config_validation():
    with pytest.raises(ShapeError):
        UNetConfig(depth=1)
    with pytest.raises(ShapeError):
        UNetConfig(depth=3, side=60)


def test_unet_output_shape_and_range():
    net = build_unet(UNetConfig(depth=2, base_channels=4, side=16), seed=1)
    y = net.predict(np.random.default_rng(0).random((3, 1, 16, 16)).astype(np.float32))
    assert y.shape == (3, 1, 16, 16)
    assert np.all((y > 0) & (y < 1))


def test_binarize_and_masking():
    assert binarize(np.array([0.2, 0.5, 0.7])).tolist() == [0, 0, 1]
    img = np.ones((2, 1, 4, 4), dtype=np.float32)
    m = np.zeros((2, 4, 4), dtype=np.uint8)
    m[:, 1:3, 1:3] = 1
    assert apply_lung_mask(img, m).sum() == 8


def _toy_lungs(n, rng, side=16):
    yy, xx = np.mgrid[0:side, 0:side]
    X = np.zeros((n, 1, side, side), np.float32)
    Y = np.zeros((n, side, side), np.uint8)
    for i in range(n):
        cy, cx, r = rng.uniform(5, 11), rng.uniform(5, 11), rng.uniform(2.5, 4.5)
        m = (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
        Y[i] = m
        X[i, 0] = 0.1 + 0.5 * m + rng.normal(0, 0.02, m.shape)
    return np.clip(X, 0, 1), Y


def test_segmenter_learns_toy_disks_and_round_trips(tmp_path):
    rng = np.random.default_rng(0)
    X, Y = _toy_lungs(48, rng)
    seg = LungSegmenter(depth=2, base_channels=4, epochs=15, batch_size=8, learning_rate=3e-3, seed=0)
    seg.fit(X[:40], Y[:40], validation_data=(X[40:], Y[40:]))
    assert len(seg.history_) == 15
    assert {"loss", "train_dice", "val_dice"} <= set(seg.history_[0])
    assert seg.score(X[40:], Y[40:]) > 0.8
    seg.save(tmp_path / "s.ckpt")
    again = LungSegmenter.load(tmp_path / "s.ckpt")
    assert np.array_equal(again.predict_proba(X[40:]), seg.predict_proba(X[40:]))
    assert again.get_params() == seg.get_params()
