"""Smoke tests for the python bindings."""

import math
import os
import tempfile

import numpy as np
import pytest

import bitkit


def test_plan_small_task():
    p = bitkit.plan(1000, 32, 32)
    assert p["size_regime"] == "small"
    assert p["total_steps"] == 500
    assert p["decay_steps"] == [150, 300, 450]
    assert p["resize_to"] == 160
    assert p["crop_to"] == 128
    assert p["mixup_alpha"] is None
    assert p["lr"] == pytest.approx(0.003)
    assert p["batch_size"] == 512


def test_plan_large_task_and_xl():
    p = bitkit.plan(1_280_000, 224, 224)
    assert p["size_regime"] == "large"
    assert p["total_steps"] == 20000
    assert p["resize_to"] == 448
    assert p["mixup_alpha"] == pytest.approx(0.1)

    xl = bitkit.plan(1_280_000, 224, 224, xl=True)
    assert (xl["resize_to"], xl["crop_to"]) == (512, 480)

    # exactly 20k examples reads as medium
    assert bitkit.plan(20000, 224, 224)["size_regime"] == "medium"


def test_conv2d_identity():
    x = np.ones((1, 1, 3, 3), dtype=np.float32)
    w = np.ones((1, 1, 1, 1), dtype=np.float32)
    y = bitkit.conv2d(x, w, 1, 0)
    assert y.shape == (1, 1, 3, 3)
    np.testing.assert_allclose(y, x)


def test_weight_standardize_closed_form():
    w = np.array([1.0, 2.0, 3.0, 4.0], dtype=np.float32).reshape(1, 4, 1, 1)
    ws = bitkit.weight_standardize(w, 0.0).reshape(-1)
    np.testing.assert_allclose(
        ws, [-1.3416408, -0.4472136, 0.4472136, 1.3416408], rtol=1e-5
    )


def test_group_norm_two_channels():
    x = np.array([1.0, 3.0], dtype=np.float32).reshape(1, 2, 1, 1)
    gamma = np.ones(2, dtype=np.float32)
    beta = np.zeros(2, dtype=np.float32)
    y = bitkit.group_norm(x, gamma, beta, 1, 0.0).reshape(-1)
    np.testing.assert_allclose(y, [-1.0, 1.0], atol=1e-6)


def test_effective_lr_upstream_rule():
    # 0.03 * 4096/256 = 0.48 after warmup
    lr = bitkit.effective_lr(0.03, 4096, 5000, True, [], 5000)
    assert lr == pytest.approx(0.48)
    half = bitkit.effective_lr(0.03, 4096, 5000, True, [], 2500)
    assert half == pytest.approx(0.24)


def test_topk_accuracy():
    logits = np.array([[0.1, 0.9], [0.8, 0.2]], dtype=np.float32)
    assert bitkit.topk_accuracy(logits, [0, 0], 1) == pytest.approx(0.5)
    assert bitkit.topk_accuracy(logits, [0, 0], 2) == pytest.approx(1.0)


def test_dhash_brightness_invariance():
    images, labels, n_classes = bitkit.synth_dataset([0, 1], 2, 32, 7, 0.01)
    img = images[0]
    h1 = bitkit.dhash64(img)
    h2 = bitkit.dhash64(np.clip(img + 0.01, 0.0, 1.0).astype(np.float32))
    assert bitkit.hamming_distance(h1, h2) == 0


def test_mixup_apply_mean():
    images = np.stack(
        [np.zeros((1, 2, 2), dtype=np.float32), np.ones((1, 2, 2), dtype=np.float32)]
    )
    labels = np.eye(2, dtype=np.float32)
    mi, ml = bitkit.mixup_apply(images, labels, 0.5, [1, 0])
    np.testing.assert_allclose(mi, 0.5 * np.ones_like(images))
    np.testing.assert_allclose(ml, 0.5 * np.ones_like(labels))


def test_bitd_round_trip():
    images, labels, n_classes = bitkit.synth_dataset([0, 1, 2], 4, 16, 3)
    assert images.shape == (12, 3, 16, 16)
    assert n_classes == 3
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "ds.bitd")
        bitkit.save_bitd(path, images, labels, n_classes)
        loaded, loaded_labels, loaded_classes = bitkit.load_bitd(path)
        assert loaded_classes == n_classes
        assert list(loaded_labels) == list(labels)
        np.testing.assert_array_equal(loaded, images)


def test_errors_surface_as_python_exceptions():
    with pytest.raises(bitkit.BitkitError):
        bitkit.conv2d(
            np.ones((1, 2, 3, 3), dtype=np.float32),
            np.ones((1, 3, 1, 1), dtype=np.float32),
        )
