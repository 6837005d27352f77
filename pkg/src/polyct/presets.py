"""Embedded experiment configurations.

``desk64`` is a 64x64 soft-tissue phantom with two small synthetic metal disks,
sized to reconstruct in about a minute on one CPU core.  Two disks are needed
for a beam-hardening streak: measurements through a single uniform disk depend
only on chord length and are matched exactly by a radially cupped linear
image.  ``paper`` is the full-scale configuration (256x256 grid, 360 views,
101 energy levels) with a larger disk phantom.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import field as nf
from .geometry import FanBeamGeometry, detectors_for_coverage, make_geometry
from .phantom import MaterialCurve, make_disk_phantom, power_law_metal
from .spectrum import Spectrum, tungsten_like_spectrum


@dataclass(frozen=True)
class Preset:
    name: str
    geometry: dict
    body_disks: tuple
    metal_disks: tuple
    encoder: nf.HashEncoderConfig
    n_energies: int
    energy_range: tuple = (20.0, 120.0)
    epochs: int = 4000
    photons_per_ray: float = 2e7
    metal_anchors: tuple = ((20.0, 7.0), (120.0, 0.08))

    def make_geometry(self) -> FanBeamGeometry:
        return make_geometry(**self.geometry)

    def source_spectrum(self) -> Spectrum:
        lo, hi = self.energy_range
        return tungsten_like_spectrum(lo, hi, 1.0)

    def metal(self) -> MaterialCurve:
        lo, hi = self.energy_range
        return power_law_metal(*self.metal_anchors, lo=lo, hi=hi)

    def phantom(self):
        """(body LAC grid, metal mask) on the preset image grid."""
        g = self.geometry
        shape = (g["image_height"], g["image_width"])
        vs = tuple(g["voxel_size"])
        body = make_disk_phantom(*shape, self.body_disks, vs)
        mask = make_disk_phantom(*shape, [(c, r, 1.0) for c, r in self.metal_disks], vs)
        return body, mask.astype(np.uint8)


def _geom(size, voxel, n_angles, sod, odd, spacing):
    return dict(
        source_to_center=sod,
        center_to_detector=odd,
        num_angles=n_angles,
        angle_range=(0.0, 360.0),
        num_detectors=detectors_for_coverage(sod, size, size, (voxel, voxel), spacing),
        image_height=size,
        image_width=size,
        voxel_size=(voxel, voxel),
        detector_arrangement="equiangular",
        angular_spacing=spacing,
    )


DESK64 = Preset(
    name="desk64",
    geometry=_geom(64, 0.5, 90, 100.0, 100.0, 0.3),
    body_disks=(
        ((0.0, 0.0), 14.0, 0.020),
        ((-5.0, 4.0), 4.0, 0.025),
        ((5.0, -5.0), 3.0, 0.015),
    ),
    metal_disks=(((4.5, 4.5), 1.5), ((-6.0, -3.0), 1.5)),
    encoder=nf.DESK_ENCODER,
    n_energies=51,
    epochs=1500,
)

PAPER = Preset(
    name="paper",
    geometry=_geom(256, 1.0, 360, 362.0, 362.0, 0.1),
    body_disks=(
        ((0.0, 0.0), 110.0, 0.020),
        ((-40.0, 30.0), 25.0, 0.025),
        ((45.0, -40.0), 20.0, 0.015),
        ((10.0, 60.0), 12.0, 0.030),
    ),
    metal_disks=(((30.0, 25.0), 5.0), ((-30.0, -30.0), 4.0)),
    encoder=nf.PAPER_ENCODER,
    n_energies=101,
    epochs=4000,
)

PRESETS = {p.name: p for p in (DESK64, PAPER)}
