import math

import numpy as np
import pytest

import bnfk


def test_sign_quantize_round_trip():
    x = np.array([[0.5, -0.25], [0.0, -0.0]])
    s = bnfk.sign_quantize(x)
    assert s.shape == x.shape
    # sign(x >= 0) == +1, including negative zero
    assert s.tolist() == [[1.0, -1.0], [1.0, 1.0]]


def test_feature_channels_shapes_and_ranges():
    rgb = np.random.default_rng(0).random((3, 16, 16))
    for fn in (bnfk.fft_magnitude_channel, bnfk.lbp_channel, bnfk.sobel_channel):
        ch = fn(rgb)
        assert ch.shape == (16, 16)
        assert ch.min() >= 0.0 and ch.max() <= 1.0
    gray = bnfk.to_grayscale(rgb)
    expected = 0.299 * rgb[0] + 0.587 * rgb[1] + 0.114 * rgb[2]
    assert np.allclose(gray, np.clip(expected, 0.0, 1.0))


def test_build_stack_channel_order():
    rgb = np.random.default_rng(1).random((3, 16, 16))
    stack = bnfk.build_stack(rgb, fft=True, lbp=True, sobel=False)
    assert stack.shape == (5, 16, 16)
    assert np.allclose(stack[:3], rgb)
    assert np.allclose(stack[3], bnfk.fft_magnitude_channel(rgb))
    assert np.allclose(stack[4], bnfk.lbp_channel(rgb))
    assert bnfk.build_stack(rgb, fft=False, lbp=False, sobel=False).shape == (3, 16, 16)


def test_metrics():
    assert bnfk.accuracy([1, 0, 1, 1], [1, 0, 0, 1]) == pytest.approx(0.75)
    assert bnfk.auc([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0]) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        bnfk.auc([0.5, 0.5], [1, 1])


def test_synthetic_image_deterministic():
    a = bnfk.synthetic_image(32, fake=True, seed=5)
    b = bnfk.synthetic_image(32, fake=True, seed=5)
    assert a.shape == (3, 32, 32)
    assert np.array_equal(a, b)
    assert a.min() >= 0.0 and a.max() <= 1.0


def test_model_round_trip_and_predict(tmp_path):
    path = str(tmp_path / "m.bnfk")
    bnfk.init_model(in_channels=5, img_size=32, seed=3, path=path)
    img = bnfk.synthetic_image(32, fake=False, seed=9)
    p1 = bnfk.predict(path, img, img_size=32)
    p2 = bnfk.predict(path, img, img_size=32)
    assert p1 == p2
    assert 0.0 <= p1 <= 1.0


def test_model_format_error(tmp_path):
    bad = tmp_path / "bad.bnfk"
    bad.write_bytes(b"XXXX not a model")
    with pytest.raises(bnfk.ModelFormatError):
        bnfk.predict(str(bad), bnfk.synthetic_image(32, fake=True, seed=1), img_size=32)


def test_generate_and_evaluate(tmp_path):
    data = str(tmp_path / "data")
    bnfk.generate_synthetic(n_per_class=10, size=32, seed=11, out_dir=data)
    model = str(tmp_path / "m.bnfk")
    bnfk.init_model(in_channels=5, img_size=32, seed=3, path=model)
    rep = bnfk.evaluate(model, data, img_size=32)
    assert set(rep) >= {"accuracy", "auc", "tp", "tn", "fp", "fn"}
    assert rep["tp"] + rep["tn"] + rep["fp"] + rep["fn"] > 0
    assert 0.0 <= rep["accuracy"] <= 1.0


def test_count_ops_binary_dominated():
    ops = bnfk.count_ops(5, 64)
    assert ops["bops"] > 0
    frac = ops["bops"] / (ops["bops"] + ops["flops"])
    assert frac >= 0.95
    assert ops["effective_flops"] == pytest.approx(ops["flops"] + ops["bops"] / 64.0)
