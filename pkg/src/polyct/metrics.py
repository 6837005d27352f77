"""PSNR and SSIM with optional region selection."""

from __future__ import annotations

import math
from typing import Optional

import numpy as np
from scipy.ndimage import gaussian_filter

WIN = 11
SIGMA = 1.5
K1, K2 = 0.01, 0.03


def psnr(ref, test, data_range: Optional[float] = None, region=None) -> float:
    """Peak signal-to-noise ratio in dB, ``inf`` for identical inputs.

    ``data_range`` defaults to ``max(ref)``.  ``region`` is a boolean mask
    selecting the pixels that enter the MSE.
    """
    ref = np.asarray(ref, dtype=np.float64)
    test = np.asarray(test, dtype=np.float64)
    if ref.shape != test.shape:
        raise ValueError(f"shape mismatch {ref.shape} vs {test.shape}")
    if data_range is None:
        data_range = float(ref.max())
    if data_range <= 0:
        raise ValueError("data_range must be > 0")
    if region is not None:
        region = np.asarray(region, dtype=bool)
        if region.shape != ref.shape:
            raise ValueError("region mask shape mismatch")
        if not region.any():
            raise ValueError("region selects no pixels")
        ref, test = ref[region], test[region]
    # fsum is correctly rounded, so the MSE does not depend on pixel order
    mse = math.fsum(((ref - test) ** 2).ravel()) / ref.size
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(data_range ** 2 / mse)


def ssim(ref, test, data_range: Optional[float] = None) -> float:
    """Mean SSIM over an 11x11 Gaussian window (sigma 1.5).

    Local statistics use the unbiased (n / (n - 1)) covariance correction and
    the mean excludes a 5-pixel border, matching scikit-image's Gaussian
    variant.
    """
    a = np.asarray(ref, dtype=np.float64)
    b = np.asarray(test, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    if a.ndim != 2 or min(a.shape) < WIN:
        raise ValueError(f"images must be 2D with both sides >= {WIN}")
    if data_range is None:
        data_range = float(a.max())
    if data_range <= 0:
        raise ValueError("data_range must be > 0")

    def filt(x):
        return gaussian_filter(x, sigma=SIGMA, truncate=3.5, mode="reflect")

    n = WIN * WIN
    cov = n / (n - 1.0)
    ma, mb = filt(a), filt(b)
    vaa = cov * (filt(a * a) - ma * ma)
    vbb = cov * (filt(b * b) - mb * mb)
    vab = cov * (filt(a * b) - ma * mb)
    c1 = (K1 * data_range) ** 2
    c2 = (K2 * data_range) ** 2
    num = (2 * ma * mb + c1) * (2 * vab + c2)
    den = (ma * ma + mb * mb + c1) * (vaa + vbb + c2)
    s = num / den
    pad = (WIN - 1) // 2
    return float(s[pad:-pad, pad:-pad].mean())


def report(ref, test, region=None, data_range: Optional[float] = None, region_name: str = "full") -> dict:
    """Metrics dict ``{psnr_db, ssim, region}``; an infinite PSNR becomes ``"inf"``."""
    dr = float(np.asarray(ref).max()) if data_range is None else data_range
    p = psnr(ref, test, dr, region)
    if region is not None:
        # SSIM is a windowed statistic; outside the region both images take the
        # reference values so only in-region differences count.
        test = np.where(np.asarray(region, dtype=bool), test, ref)
    s = ssim(ref, test, dr)
    return {"psnr_db": "inf" if math.isinf(p) else p, "ssim": s, "region": region_name}
