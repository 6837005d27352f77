"""End-to-end workflows shared by the CLI and the acceptance suite."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.ndimage import binary_dilation

from . import baselines, phantom, spectrum as sp, training
from .geometry import FanBeamGeometry
from .phantom import MaterialCurve, Sinogram
from .presets import Preset
from .spectrum import Spectrum

_SQUARE = np.ones((3, 3), dtype=bool)


def dilate_mask(mask, pixels: int = 1) -> np.ndarray:
    """Grow a binary mask by ``pixels`` in the 8-connected sense."""
    m = np.asarray(mask).astype(bool)
    if pixels > 0:
        m = binary_dilation(m, structure=_SQUARE, iterations=pixels)
    return m.astype(np.uint8)


def nonmetal_region(mask) -> np.ndarray:
    """Pixels outside the metal and outside its one-pixel partial-volume band.

    The simulator interpolates the phantom bilinearly, so every pixel that
    neighbours a metal pixel (diagonals included) is blended with metal
    between sample points.
    """
    return ~dilate_mask(mask, 1).astype(bool)


@dataclass
class Case:
    sinogram: Sinogram
    body: np.ndarray
    mask: np.ndarray
    spectrum: Spectrum  # source spectrum used for the simulation
    metal: MaterialCurve

    @property
    def geometry(self) -> FanBeamGeometry:
        return self.sinogram.geometry


def simulate_case(
    preset: Preset,
    seed: int = 0,
    noise: bool = True,
    n_energies: Optional[int] = None,
    photons_per_ray: Optional[float] = None,
    source: Optional[Spectrum] = None,
    metal: Optional[MaterialCurve] = None,
    partial_volume: bool = False,
) -> Case:
    """Simulate the preset phantom; ``n_energies`` resamples the source spectrum
    (``1`` gives a monochromatic scan at the midpoint energy)."""
    geom = preset.make_geometry()
    body, mask = preset.phantom()
    src = preset.source_spectrum() if source is None else source
    if n_energies is not None and n_energies != len(src):
        src = sp.resample(src, n_energies, preset.energy_range)
    metal = preset.metal() if metal is None else metal
    img = phantom.compose_polychromatic(body, mask, metal, src.energies)
    photons = preset.photons_per_ray if photons_per_ray is None else photons_per_ray
    sino = phantom.simulate_sinogram(img, geom, src, photons, noise=noise, seed=seed,
                                     partial_volume=partial_volume)
    return Case(sino, body, mask, src, metal)


def recon_spectrum(source: Spectrum, n_energies: int, energy_range) -> Spectrum:
    """Source spectrum on the reconstruction grid; a one-level source is used as is."""
    if n_energies == len(source) == 1:
        return source
    if n_energies == len(source) and np.isclose(source.energies[0], energy_range[0]) \
            and np.isclose(source.energies[-1], energy_range[1]):
        return source
    return sp.resample(source, n_energies, energy_range)


def reconstruct(
    sino: Sinogram,
    source: Spectrum,
    mask,
    cfg: training.TrainConfig,
    mask_dilation: int = 1,
    threads: int = 1,
):
    """Fit the field and return ``(image, TrainResult, spectrum used)``."""
    spec = recon_spectrum(source, cfg.n_energies, cfg.energy_range)
    train_mask = dilate_mask(mask, mask_dilation)
    res = training.train(sino, sino.geometry, spec, train_mask, cfg, threads=threads)
    img = training.extract_image(res.params, cfg.encoder, sino.geometry, spec)
    return img, res, spec


def fbp_baseline(sino: Sinogram) -> np.ndarray:
    return baselines.fbp(sino)


def li_baseline(sino: Sinogram, mask) -> np.ndarray:
    trace = baselines.metal_trace(mask, sino.geometry)
    return baselines.fbp(baselines.li_inpaint(sino, trace))
