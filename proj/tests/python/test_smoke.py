# SPDX-License-Identifier: Apache-2.0
import numpy as np
import pytest

import ccpc

SMALL = "N = 16\nM = 32\n"


def image(h, w, seed=0):
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:h, 0:w]
    base = 0.5 + 0.3 * np.sin(0.11 * xx)[..., None] * np.cos(0.07 * yy)[..., None]
    x = base + 0.05 * rng.standard_normal((h, w, 3))
    return np.clip(x, 0, 1).astype(np.float32)


def test_round_trip_matches_encoder_reconstruction():
    model = ccpc.Model(SMALL, seed=3)
    codec = ccpc.Codec(model)
    x = image(50, 70)
    data, stats = codec.compress(x)
    assert isinstance(data, bytes)
    assert stats["bpp"] == pytest.approx(8 * len(data) / (50 * 70))
    assert stats["y"]["payload_bytes"] * 8 >= stats["y"]["table_bits"]
    a = codec.decompress(data)
    b = ccpc.Codec(model).decompress(data)
    assert a.shape == (50, 70, 3)
    assert np.array_equal(a, b)


def test_corrupt_stream_raises():
    codec = ccpc.Codec(ccpc.Model(SMALL))
    data, _ = codec.compress(image(32, 32))
    with pytest.raises(ccpc.CorruptStreamError):
        codec.decompress(b"XX" + data[2:])
    with pytest.raises(ccpc.CorruptStreamError):
        codec.decompress(data[:-1])
    with pytest.raises(ccpc.DimensionError):
        codec.compress(np.zeros((32, 32, 4), np.float32))


def test_checkpoint_and_png(tmp_path):
    model = ccpc.Model(SMALL + "quality_id = 2\n", seed=5)
    path = str(tmp_path / "m.ckpt")
    model.save(path)
    back = ccpc.Model.load(path)
    assert back.config == model.config
    x = image(64, 64, 1)
    assert ccpc.Codec(back).compress(x)[0] == ccpc.Codec(model).compress(x)[0]
    with pytest.raises(ccpc.IoError):
        ccpc.Model.load(str(tmp_path / "missing.ckpt"))

    png = str(tmp_path / "x.png")
    ccpc.write_png(png, x)
    y = ccpc.read_png(png)
    assert np.abs(y - x).max() <= 0.5 / 255 + 1e-6


def test_metrics():
    x = image(64, 64, 2)
    assert ccpc.psnr(x, np.clip(x + 0.1, 0, 1)) < 25
    big = image(160, 160, 3)
    assert ccpc.ms_ssim(big, big) == pytest.approx(1.0)
    base = [(0.1, 28), (0.2, 31), (0.4, 34), (0.8, 37)]
    half = [(b / 2, p) for b, p in base]
    assert ccpc.bd_rate(half, base) == pytest.approx(-50)


def test_range_coder():
    cdf = [0, 100, 40000, 65000, 65536]
    rng = np.random.default_rng(4)
    symbols = [int(s) for s in rng.choice(4, size=500, p=[0.01, 0.6, 0.38, 0.01])]
    data = ccpc.range_encode(symbols, cdf)
    assert ccpc.range_decode(data, cdf, len(symbols)) == symbols


def test_rd_loss_and_short_training(tmp_path):
    model = ccpc.Model(SMALL, seed=7)
    r = model.rd_loss(image(64, 64), 100.0)
    assert r["loss"] == pytest.approx(r["bpp"] + 100 * r["mse"])
    for i in range(2):
        ccpc.write_png(str(tmp_path / f"{i}.png"), image(96, 96, 10 + i))
    log = ccpc.train(model, str(tmp_path), lmbda=100.0, steps=2, batch=1, patch=64)
    assert all(np.isfinite(rec["loss"]) for rec in log)
    with pytest.raises(ccpc.InvalidParamsError):
        ccpc.train(model, str(tmp_path), lmbda=100.0, steps=-1)
