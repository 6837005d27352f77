import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from skimage.metrics import structural_similarity

from polyct import metrics as M


def test_psnr_example():
    ref = np.zeros((10, 10))
    test = np.full((10, 10), 0.1)
    assert M.psnr(ref, test, data_range=1.0) == pytest.approx(20.0, abs=1e-12)


def test_psnr_identical_is_inf():
    a = np.random.default_rng(0).uniform(size=(8, 8))
    assert M.psnr(a, a) == math.inf
    b = np.random.default_rng(1).uniform(size=(12, 12))
    assert M.report(b, b)["psnr_db"] == "inf"


def test_psnr_errors():
    a = np.ones((4, 4))
    with pytest.raises(ValueError):
        M.psnr(a, np.ones((4, 5)))
    with pytest.raises(ValueError):
        M.psnr(a, a, region=np.zeros((4, 4), bool))
    with pytest.raises(ValueError):
        M.psnr(a, a, data_range=0)


def test_region_psnr_ignores_metal_error():
    ref = np.random.default_rng(1).uniform(size=(16, 16))
    test = ref.copy()
    test[4:6, 4:6] += 5
    test += np.random.default_rng(2).normal(0, 0.01, test.shape)
    region = np.ones((16, 16), bool)
    region[4:6, 4:6] = False
    assert M.psnr(ref, test, 1.0, region) > M.psnr(ref, test, 1.0) + 10


def test_ssim_identical():
    a = np.random.default_rng(3).uniform(size=(32, 32))
    assert abs(M.ssim(a, a) - 1.0) < 1e-9


def test_ssim_zero_image():
    yy, xx = np.mgrid[:32, :32]
    ref = 0.5 + 0.5 * np.sin(xx / 3.0) * np.cos(yy / 4.0)
    assert M.ssim(ref, np.zeros_like(ref)) < 0.2


def test_ssim_too_small():
    with pytest.raises(ValueError):
        M.ssim(np.ones((10, 20)), np.ones((10, 20)))


def test_ssim_matches_skimage():
    rng = np.random.default_rng(4)
    for _ in range(5):
        a = rng.uniform(0, 1, (40, 33))
        b = a + rng.normal(0, 0.1, a.shape)
        expect = structural_similarity(a, b, data_range=1.0, gaussian_weights=True, sigma=1.5,
                                       use_sample_covariance=True)
        assert M.ssim(a, b, 1.0) == pytest.approx(expect, abs=1e-12)


def test_psnr_monotone_in_noise():
    rng = np.random.default_rng(5)
    ref = rng.uniform(size=(32, 32))
    n = rng.normal(size=ref.shape)
    vals = [M.psnr(ref, ref + s * n, 1.0) for s in (0.01, 0.05, 0.2)]
    assert vals[0] > vals[1] > vals[2]


def test_report_labels_region():
    a = np.random.default_rng(6).uniform(size=(16, 16))
    b = a + 0.01
    r = M.report(a, b, region=np.ones((16, 16), bool), region_name="nonmetal")
    assert r["region"] == "nonmetal" and set(r) == {"psnr_db", "ssim", "region"}


images = st.integers(0, 2 ** 32 - 1).map(lambda s: np.random.default_rng(s))


@settings(max_examples=200, deadline=None)
@given(images, st.sampled_from(["lr", "ud", "rot", "transpose"]))
def test_metric_identities(rng, op):
    a = rng.uniform(0.1, 1, (16, 20))
    b = a + rng.normal(0, 0.05, a.shape)
    f = {"lr": np.fliplr, "ud": np.flipud, "rot": lambda x: np.rot90(x, 2),
         "transpose": np.transpose}[op]
    assert M.psnr(f(a), f(b), 1.0) == M.psnr(a, b, 1.0)
    assert abs(M.ssim(f(a), f(b), 1.0) - M.ssim(a, b, 1.0)) < 1e-9
    assert abs(M.ssim(a, b, 1.0) - M.ssim(b, a, 1.0)) < 1e-12
    assert abs(M.ssim(a, a, 1.0) - 1.0) < 1e-9
    assert M.psnr(a, a) == math.inf
    assert -1.0 <= M.ssim(a, b, 1.0) <= 1.0
