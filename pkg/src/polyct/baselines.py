"""Classical references: equiangular fan-beam FBP and linear-interpolation MAR."""

from __future__ import annotations

import warnings

import numpy as np

from .geometry import EQUIANGULAR, FanBeamGeometry, pixel_centers, point_fan_angles
from .phantom import Sinogram, line_integrals


def _ramp_kernel(n: int, spacing: float) -> np.ndarray:
    """Band-limited Ram-Lak kernel sampled at ``k * spacing`` for |k| < n."""
    k = np.arange(-(n - 1), n)
    h = np.zeros(k.size)
    h[k == 0] = 1.0 / (4.0 * spacing ** 2)
    odd = (k % 2) == 1
    h[odd] = -1.0 / (np.pi * k[odd] * spacing) ** 2
    return k, h


def fan_filter(n_det: int, dgamma: float, window: str = "ramlak") -> np.ndarray:
    """Equiangular fan-beam filter ``0.5 * (g / sin g)**2 * h(g)`` as an
    ``rfft`` transfer function on a zero-padded grid of length >= 2 n_det."""
    k, h = _ramp_kernel(n_det, dgamma)
    g = k * dgamma
    with np.errstate(invalid="ignore", divide="ignore"):
        ratio = np.where(k == 0, 1.0, g / np.sin(g))
    kern = 0.5 * ratio ** 2 * h
    n_fft = int(2 ** np.ceil(np.log2(2 * n_det)))
    buf = np.zeros(n_fft)
    buf[: n_det] = kern[n_det - 1:]  # k >= 0
    buf[n_fft - (n_det - 1):] = kern[: n_det - 1]  # k < 0, wrapped
    H = np.fft.rfft(buf)
    if window == "hann":
        f = np.fft.rfftfreq(n_fft)
        H = H * (0.5 + 0.5 * np.cos(2 * np.pi * f))
    elif window != "ramlak":
        raise ValueError(f"unknown window {window!r}")
    return H


def fbp(sino: Sinogram, geom: FanBeamGeometry = None, window: str = "ramlak") -> np.ndarray:
    """Equiangular fan-beam filtered backprojection onto the geometry's grid.

    Detector samples are cosine weighted, convolved with the fan-beam ramp
    kernel through a zero-padded FFT and backprojected with ``1 / L**2``
    weighting and linear interpolation in the fan angle.  Assumes a full
    360 degree scan (no short-scan weighting).
    """
    geom = sino.geometry if geom is None else geom
    if sino.values.shape != geom.shape:
        raise ValueError("sinogram does not match geometry")
    if geom.detector_arrangement != EQUIANGULAR:
        raise ValueError("fbp supports equiangular detectors only")
    D = geom.source_to_center
    gammas = geom.detector_gammas()
    dgamma = np.deg2rad(geom.angular_spacing)
    K = geom.num_detectors

    q = sino.values * (D * np.cos(gammas))[None, :]
    H = fan_filter(K, dgamma, window)
    n_fft = 2 * (H.size - 1)
    Q = np.fft.irfft(np.fft.rfft(q, n=n_fft, axis=1) * H, n=n_fft, axis=1)[:, :K] * dgamma

    pts = pixel_centers(geom).reshape(-1, 2)
    img = np.zeros(pts.shape[0])
    betas = geom.angles()
    for a, beta in enumerate(betas):
        gam, L = point_fan_angles(geom, pts, np.array([beta]))
        pos = (gam[0] - gammas[0]) / dgamma
        img += np.interp(pos, np.arange(K), Q[a], left=0.0, right=0.0) / L[0] ** 2
    img *= geom.angle_step
    return img.reshape(geom.image_height, geom.image_width)


def metal_trace(mask: np.ndarray, geom: FanBeamGeometry) -> np.ndarray:
    """Sinogram bins whose ray integral through the metal mask is positive."""
    mask = np.asarray(mask)
    if mask.shape != (geom.image_height, geom.image_width):
        raise ValueError("mask does not match the image grid")
    return (line_integrals(mask.astype(np.float64), geom) > 0).astype(np.uint8)


def _fill_row(row: np.ndarray, flagged: np.ndarray) -> np.ndarray:
    good = np.flatnonzero(~flagged)
    bad = np.flatnonzero(flagged)
    out = row.copy()
    # np.interp holds the end values constant, which is the one-sided fill
    out[bad] = np.interp(bad, good, row[good])
    return out


def li_inpaint(sino: Sinogram, trace: np.ndarray) -> Sinogram:
    """Replace flagged bins by linear interpolation along each projection.

    Runs touching a detector edge take the single available neighbour value.
    A projection with every bin flagged is filled with the per-detector mean
    of the projections that do have unflagged values there.
    """
    vals = sino.values
    tr = np.asarray(trace).astype(bool)
    if tr.shape != vals.shape:
        raise ValueError("trace does not match sinogram")
    out = vals.copy()
    full = np.all(tr, axis=1)
    for a in np.flatnonzero(tr.any(axis=1) & ~full):
        out[a] = _fill_row(vals[a], tr[a])
    if full.any():
        warnings.warn(f"{int(full.sum())} projection(s) fully inside the metal trace",
                      RuntimeWarning, stacklevel=2)
        ok = ~tr & ~full[:, None]
        cnt = ok.sum(axis=0)
        mean = np.where(cnt > 0, np.where(ok, out, 0.0).sum(axis=0) / np.maximum(cnt, 1), 0.0)
        out[full] = mean[None, :]
    return Sinogram(out, sino.geometry)
