import numpy as np
import pytest

import mscnn


def image(seed, h=64, w=64):
    rng = np.random.default_rng(seed)
    y, x = np.mgrid[0:h, 0:w]
    base = 128 + 60 * np.sin(x / 7.0) * np.cos(y / 11.0)
    return np.clip(base + rng.normal(0, 4, (h, w)), 0, 255).astype(np.uint8)


def test_psnr_and_ssim():
    a = np.full((16, 16), 100, np.uint8)
    assert mscnn.psnr(a, a + 1) == pytest.approx(48.1308, abs=1e-3)
    assert mscnn.psnr(a, a) == float("inf")
    img = image(1)
    assert mscnn.ssim(img, img) == pytest.approx(1.0, abs=1e-9)


def test_codec_proxy_is_idempotent():
    img = image(2)
    once = mscnn.codec_proxy(img, 37)
    assert once.shape == img.shape
    assert np.array_equal(mscnn.codec_proxy(once, 37), once)
    assert mscnn.psnr(img, mscnn.codec_proxy(img, 22)) > mscnn.psnr(img, once)


def test_augment_and_bd():
    variants = mscnn.augment(image(3, 40, 24))
    assert len(variants) == 24
    assert variants[0][:3] == (0, 1.0, False)
    anchor = [(100, 30.0), (200, 33.1), (400, 35.9), (800, 38.2)]
    shifted = [(r * 1.1, q) for r, q in anchor]
    assert mscnn.bd_rate(anchor, shifted) == pytest.approx(10.0, abs=0.01)
    assert mscnn.bd_psnr(anchor, [(r, q + 1) for r, q in anchor]) == pytest.approx(1.0, abs=1e-6)
    with pytest.raises(ValueError):
        mscnn.bd_rate(anchor, anchor[:3])


def test_zero_model_is_identity(tmp_path):
    model = mscnn.Model.zeros()
    img = image(4)
    assert np.array_equal(model.filter(img, img), img)
    path = str(tmp_path / "m.mscn")
    model.save(path)
    assert mscnn.Model.load(path).size == model.size
    assert mscnn.parameter_count() != mscnn.PUBLISHED_PARAMETER_TOTAL
