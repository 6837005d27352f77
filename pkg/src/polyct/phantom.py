"""Polychromatic phantoms and metal-corrupted sinogram synthesis."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.special import logsumexp

from .geometry import FanBeamGeometry, all_ray_indices, pixel_centers, ray_arrays, sample_rays
from .spectrum import Spectrum


class PhantomError(ValueError):
    pass


# --- data types ----------------------------------------------------------

@dataclass(frozen=True)
class MaterialCurve:
    """Tabulated LAC (mm^-1) against energy (keV) for one material."""

    energies: np.ndarray
    lacs: np.ndarray

    def __post_init__(self):
        e = np.asarray(self.energies, dtype=np.float64)
        m = np.asarray(self.lacs, dtype=np.float64)
        if e.ndim != 1 or e.shape != m.shape or e.size < 2:
            raise PhantomError("material table needs at least two (energy, lac) points")
        if np.any(np.diff(e) <= 0):
            raise PhantomError("material energies must be strictly increasing")
        if np.any(m < 0):
            raise PhantomError("LACs must be nonnegative")
        object.__setattr__(self, "energies", e)
        object.__setattr__(self, "lacs", m)

    def at(self, energies) -> np.ndarray:
        e = np.asarray(energies, dtype=np.float64)
        if np.any(e < self.energies[0]) or np.any(e > self.energies[-1]):
            raise PhantomError(
                f"energy outside material table range "
                f"[{self.energies[0]}, {self.energies[-1]}] keV"
            )
        return np.interp(e, self.energies, self.lacs)


MaterialTable = dict  # name -> MaterialCurve


@dataclass
class PolychromaticImage:
    values: np.ndarray  # [N, H, W], mm^-1
    energies: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.energies = np.asarray(self.energies, dtype=np.float64)
        if self.values.ndim != 3 or self.values.shape[0] != self.energies.size:
            raise PhantomError("values must be [N, H, W] with one channel per energy")


@dataclass
class Sinogram:
    values: np.ndarray  # [num_angles, num_detectors]
    geometry: FanBeamGeometry

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != self.geometry.shape:
            raise PhantomError(
                f"sinogram shape {self.values.shape} does not match geometry "
                f"{self.geometry.shape}"
            )


# --- synthetic metal ------------------------------------------------------

def power_law_metal(
    anchor_lo=(20.0, 7.0), anchor_hi=(120.0, 0.08), lo=20.0, hi=120.0, step=1.0
) -> MaterialCurve:
    """Synthetic metal ``mu(E) = a * E**-3 + c`` through two anchor points.

    The default anchors are picked to land in titanium's rough range; the
    curve is a test fixture, not tabulated attenuation data.
    """
    (e1, m1), (e2, m2) = anchor_lo, anchor_hi
    a = (m1 - m2) / (e1 ** -3 - e2 ** -3)
    c = m1 - a * e1 ** -3
    e = np.arange(lo, hi + 0.5 * step, step)
    return MaterialCurve(e, a * e ** -3 + c)


def read_material_csv(path) -> MaterialCurve:
    path = Path(path)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][:2] != ["energy_keV", "lac_per_mm"]:
        raise PhantomError(f"{path}: expected header 'energy_keV,lac_per_mm'")
    data = np.array([[float(a), float(b)] for a, b, *_ in rows[1:] if a.strip()])
    return MaterialCurve(data[:, 0], data[:, 1])


def write_material_csv(path, curve: MaterialCurve) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["energy_keV", "lac_per_mm"])
        for e, m in zip(curve.energies, curve.lacs):
            w.writerow([repr(float(e)), repr(float(m))])


# --- phantoms --------------------------------------------------------------

def make_disk_phantom(height: int, width: int, disks: Sequence, voxel_size=(1.0, 1.0)) -> np.ndarray:
    """Rasterize disks given as ``((x_mm, y_mm), radius_mm, lac)``.

    A pixel belongs to a disk when its centre does; later disks overwrite
    earlier ones and the background is 0.
    """
    vy, vx = voxel_size
    xs = (np.arange(width) + 0.5 - 0.5 * width) * vx
    ys = (0.5 * height - np.arange(height) - 0.5) * vy
    X, Y = np.meshgrid(xs, ys)
    img = np.zeros((height, width))
    for (cx, cy), r, lac in disks:
        img[(X - cx) ** 2 + (Y - cy) ** 2 <= r * r] = lac
    return img


def compose_polychromatic(body_lac, mask, metal: MaterialCurve, energies) -> PolychromaticImage:
    """Per-energy LAC maps: metal curve inside the mask, body everywhere else."""
    body = np.asarray(body_lac, dtype=np.float64)
    m = np.asarray(mask)
    if body.shape != m.shape:
        raise PhantomError(f"body {body.shape} and mask {m.shape} shapes differ")
    energies = np.asarray(energies, dtype=np.float64)
    mu = metal.at(energies)
    sel = m.astype(bool)
    vals = np.repeat(body[None], energies.size, axis=0)
    vals[:, sel] = mu[:, None]
    return PolychromaticImage(vals, energies)


def extract_metal_mask(recon, threshold: float) -> np.ndarray:
    if threshold <= 0:
        raise PhantomError("threshold must be > 0")
    return (np.asarray(recon) > threshold).astype(np.uint8)


# --- projection -------------------------------------------------------------

def bilinear_weights(geom: FanBeamGeometry, normalized: np.ndarray):
    """Pixel indices ``[S, 4]`` and weights ``[S, 4]`` for bilinear lookup.

    Out-of-grid neighbours are clamped to the border pixel.
    """
    H, W = geom.image_height, geom.image_width
    col = normalized[:, 0] * W - 0.5
    row = normalized[:, 1] * H - 0.5
    c0 = np.floor(col)
    r0 = np.floor(row)
    fc = col - c0
    fr = row - r0
    c0 = c0.astype(np.int64)
    r0 = r0.astype(np.int64)
    c1 = np.clip(c0 + 1, 0, W - 1)
    r1 = np.clip(r0 + 1, 0, H - 1)
    c0 = np.clip(c0, 0, W - 1)
    r0 = np.clip(r0, 0, H - 1)
    idx = np.stack([r0 * W + c0, r0 * W + c1, r1 * W + c0, r1 * W + c1], axis=1)
    w = np.stack([(1 - fr) * (1 - fc), (1 - fr) * fc, fr * (1 - fc), fr * fc], axis=1)
    return idx, w


def system_matrix(
    geom: FanBeamGeometry, sub_rays: int = 1, sub_ray: int = 0, angle_chunk: int = 32
) -> sp.csr_matrix:
    """Sparse ``[num_rays, H*W]`` matrix of per-ray line integrals.

    Row ``a * num_detectors + k`` integrates the bilinearly interpolated image
    along ray ``(a, k)`` with midpoint samples of length ``delta_x``.  With
    ``sub_rays > 1`` the ray is shifted to sub-position ``sub_ray`` across
    the detector element.
    """
    return _system_matrix_cached(geom, sub_rays, sub_ray, angle_chunk)


@lru_cache(maxsize=8)
def _system_matrix_cached(geom, sub_rays, sub_ray, angle_chunk):
    a_all, k_all = all_ray_indices(geom)
    blocks = []
    K = geom.num_detectors
    for a_start in range(0, geom.num_angles, angle_chunk):
        a_stop = min(a_start + angle_chunk, geom.num_angles)
        sl = slice(a_start * K, a_stop * K)
        src, d = _sub_ray_arrays(geom, a_all[sl], k_all[sl], sub_rays, sub_ray)
        s = sample_rays(geom, src, d)
        idx, w = bilinear_weights(geom, s.normalized)
        rows = np.repeat(s.ray_index, 4)
        m = sp.csr_matrix(
            (w.ravel() * s.delta_x, (rows, idx.ravel())),
            shape=(a_stop * K - a_start * K, geom.image_height * geom.image_width),
        )
        blocks.append(m)
    return sp.vstack(blocks, format="csr")


def _sub_ray_arrays(geom, a_idx, k_idx, sub_rays, sub_ray):
    src, d = ray_arrays(geom, a_idx, k_idx)
    if sub_rays == 1:
        return src, d
    # spread sub-rays across the detector element aperture
    frac = (sub_ray + 0.5) / sub_rays - 0.5
    g = geom.detector_gammas()
    step = g[1] - g[0] if g.size > 1 else 0.0
    dg = frac * step
    c, s = np.cos(dg), np.sin(dg)
    d = np.stack([c * d[:, 0] - s * d[:, 1], s * d[:, 0] + c * d[:, 1]], axis=-1)
    return src, d


def line_integrals(img: np.ndarray, geom: FanBeamGeometry, sub_rays: int = 1, sub_ray: int = 0) -> np.ndarray:
    """Line integrals of a ``[H, W]`` or ``[N, H, W]`` image.

    Returns ``[angles, detectors]`` or ``[N, angles, detectors]``.
    """
    A = system_matrix(geom, sub_rays, sub_ray)
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        return (A @ img.ravel()).reshape(geom.shape)
    flat = img.reshape(img.shape[0], -1).T
    return (A @ flat).T.reshape((img.shape[0],) + geom.shape)


def mono_sinogram(img: np.ndarray, geom: FanBeamGeometry) -> Sinogram:
    return Sinogram(line_integrals(img, geom), geom)


def disk_line_integrals(geom: FanBeamGeometry, disks: Sequence) -> np.ndarray:
    """Line integrals of continuous disks evaluated at the ray sample points.

    Same disk convention as :func:`make_disk_phantom`, without rasterization,
    so the only error against the analytic chord is the sampling one.
    """
    a, k = all_ray_indices(geom)
    src, d = ray_arrays(geom, a, k)
    s = sample_rays(geom, src, d)
    x, y = s.positions[:, 0], s.positions[:, 1]
    vals = np.zeros(len(x))
    for (cx, cy), r, lac in disks:
        vals[(x - cx) ** 2 + (y - cy) ** 2 <= r * r] = lac
    sums = np.bincount(s.ray_index, weights=vals, minlength=geom.num_rays)
    return (sums * s.delta_x).reshape(geom.shape)


def simulate_sinogram(
    img: PolychromaticImage,
    geom: FanBeamGeometry,
    spec: Spectrum,
    photons_per_ray: float = 2e7,
    noise: bool = False,
    seed: int = 0,
    partial_volume: bool = False,
) -> Sinogram:
    """Polychromatic measurement ``-ln sum_i eta_i exp(-int mu_i)`` per ray.

    With ``noise`` each energy bin receives an independent Poisson draw of
    expected size ``photons_per_ray * eta_i * exp(-int mu_i)``; the detector
    sums the bins and the total is clamped to at least one photon.  Every ray
    has its own generator seeded from ``(seed, ray_index)``.

    ``partial_volume`` averages the transmitted fraction of four sub-rays
    spread across each detector element.
    """
    if img.values.shape[1:] != (geom.image_height, geom.image_width):
        raise PhantomError("image grid does not match geometry")
    if img.energies.size != len(spec) or not np.allclose(img.energies, spec.energies):
        raise PhantomError("image energies do not match spectrum energies")
    if noise and photons_per_ray <= 0:
        raise PhantomError("photons_per_ray must be > 0 when noise is on")

    n_sub = 4 if partial_volume else 1
    # per-energy line integrals, [sub_rays, N, angles, detectors]
    P = np.stack([line_integrals(img.values, geom, n_sub, j) for j in range(n_sub)])
    b = np.broadcast_to(spec.weights[None, :, None, None] / n_sub, P.shape)

    if not noise:
        p = -logsumexp(-P, axis=(0, 1), b=b)
        return Sinogram(p, geom)

    frac = (b * np.exp(-P)).sum(axis=0)  # [N, angles, detectors]
    lam = photons_per_ray * frac.reshape(len(spec), -1).T  # [rays, N]
    counts = np.empty(lam.shape[0])
    for r in range(lam.shape[0]):
        rng = np.random.default_rng([seed, r])
        counts[r] = rng.poisson(lam[r]).sum()
    total = np.maximum(counts, 1.0)
    p = -np.log(total / photons_per_ray)
    return Sinogram(p.reshape(geom.shape), geom)


def mask_lookup_nearest(mask: np.ndarray, normalized: np.ndarray) -> np.ndarray:
    """Nearest-pixel mask value at normalized sample positions."""
    H, W = mask.shape
    col = np.clip(np.floor(normalized[:, 0] * W).astype(np.int64), 0, W - 1)
    row = np.clip(np.floor(normalized[:, 1] * H).astype(np.int64), 0, H - 1)
    return mask[row, col]


def pixel_world_mask(geom: FanBeamGeometry, radius: Optional[float] = None) -> np.ndarray:
    """Boolean mask of pixels whose centre lies within ``radius`` of the origin
    (default: the inscribed circle of the image box)."""
    if radius is None:
        radius = 0.5 * min(geom.height_mm, geom.width_mm)
    c = pixel_centers(geom)
    return np.hypot(c[..., 0], c[..., 1]) <= radius
