"""Fan-beam acquisition geometry, ray enumeration and ray sampling.

Coordinate conventions
----------------------
World coordinates are in mm with the rotation centre at the origin, x to the
right and y up.  Image arrays are stored row-major as ``[H, W]`` with row 0 at
the top (largest y).  The source for angle ``beta`` sits at
``D * (cos beta, sin beta)`` and the central ray points back through the
origin.  Detector angles ``gamma`` are measured counter-clockwise from the
central ray.

Normalized coordinates map the image bounding box to ``[0, 1]^2`` as
``u = (x - x_min) / width`` (column direction) and ``v = (y_max - y) / height``
(row direction), so ``(u * W - 0.5, v * H - 0.5)`` is the fractional
``(col, row)`` pixel index.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

EQUIANGULAR = "equiangular"
EQUISPACED = "equispaced"


class GeometryError(ValueError):
    """Raised for invalid or inconsistent acquisition geometries."""


@dataclass(frozen=True)
class FanBeamGeometry:
    source_to_center: float
    center_to_detector: float
    num_angles: int
    angle_range: tuple[float, float]
    num_detectors: int
    image_height: int
    image_width: int
    voxel_size: tuple[float, float]
    detector_arrangement: str = EQUIANGULAR
    angular_spacing: Optional[float] = None
    detector_spacing: Optional[float] = None
    sample_spacing: Optional[float] = None

    # --- derived quantities -------------------------------------------------
    @property
    def delta_x(self) -> float:
        if self.sample_spacing is not None:
            return float(self.sample_spacing)
        return float(min(self.voxel_size))

    @property
    def height_mm(self) -> float:
        return self.image_height * self.voxel_size[0]

    @property
    def width_mm(self) -> float:
        return self.image_width * self.voxel_size[1]

    @property
    def box(self) -> tuple[float, float, float, float]:
        """(x_min, x_max, y_min, y_max) of the image bounding box in mm."""
        hw, hh = 0.5 * self.width_mm, 0.5 * self.height_mm
        return (-hw, hw, -hh, hh)

    @property
    def num_rays(self) -> int:
        return self.num_angles * self.num_detectors

    @property
    def shape(self) -> tuple[int, int]:
        return (self.num_angles, self.num_detectors)

    def angles(self) -> np.ndarray:
        """Projection angles in radians, half-open over ``angle_range``."""
        start, end = self.angle_range
        step = (end - start) / self.num_angles
        return np.deg2rad(start + step * np.arange(self.num_angles))

    @property
    def angle_step(self) -> float:
        start, end = self.angle_range
        return math.radians((end - start) / self.num_angles)

    def detector_gammas(self) -> np.ndarray:
        """Fan angle (radians) of every detector element centre."""
        k = np.arange(self.num_detectors) - 0.5 * (self.num_detectors - 1)
        if self.detector_arrangement == EQUIANGULAR:
            return k * math.radians(self.angular_spacing)
        sdd = self.source_to_center + self.center_to_detector
        return np.arctan(k * self.detector_spacing / sdd)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["angle_range"] = list(self.angle_range)
        d["voxel_size"] = list(self.voxel_size)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def digest(self) -> str:
        """SHA-256 of the canonical JSON encoding, used for provenance."""
        return hashlib.sha256(self.to_json().encode()).hexdigest()

    @classmethod
    def from_dict(cls, d: dict) -> "FanBeamGeometry":
        return make_geometry(**d)


@dataclass(frozen=True)
class Ray:
    source_point: np.ndarray
    unit_direction: np.ndarray
    angle_index: int
    detector_index: int


@dataclass(frozen=True)
class SamplePoint:
    position: tuple[float, float]
    normalized_position: tuple[float, float]
    weight: float


@dataclass
class RaySamples:
    """Flat, vectorized sample set for a batch of rays.

    ``offsets[k]:offsets[k+1]`` indexes the samples belonging to ray ``k``.
    """

    positions: np.ndarray
    normalized: np.ndarray
    ray_index: np.ndarray
    counts: np.ndarray
    offsets: np.ndarray
    delta_x: float
    extra: dict = field(default_factory=dict)

    @property
    def num_samples(self) -> int:
        return int(self.positions.shape[0])


def make_geometry(
    source_to_center: float,
    center_to_detector: float,
    num_angles: int,
    angle_range,
    num_detectors: int,
    image_height: int,
    image_width: int,
    voxel_size,
    detector_arrangement: str = EQUIANGULAR,
    angular_spacing: Optional[float] = None,
    detector_spacing: Optional[float] = None,
    sample_spacing: Optional[float] = None,
) -> FanBeamGeometry:
    """Validate a geometry description and return a :class:`FanBeamGeometry`.

    Raises
    ------
    GeometryError
        On nonpositive distances or counts, an unknown detector arrangement,
        or a detector that does not see the whole image for every angle.
    """
    if source_to_center <= 0 or center_to_detector <= 0:
        raise GeometryError("source_to_center and center_to_detector must be > 0")
    if int(num_angles) < 1 or int(num_detectors) < 1:
        raise GeometryError("num_angles and num_detectors must be >= 1")
    if int(image_height) < 1 or int(image_width) < 1:
        raise GeometryError("image dimensions must be >= 1")
    vs = tuple(float(v) for v in voxel_size)
    if len(vs) != 2 or min(vs) <= 0:
        raise GeometryError("voxel_size must be two positive lengths")
    ar = tuple(float(a) for a in angle_range)
    if len(ar) != 2 or ar[1] <= ar[0]:
        raise GeometryError("angle_range must be an increasing [start, end) pair")
    if sample_spacing is not None and sample_spacing <= 0:
        raise GeometryError("sample_spacing must be > 0")
    if detector_arrangement == EQUIANGULAR:
        if angular_spacing is None or angular_spacing <= 0:
            raise GeometryError("equiangular detectors need angular_spacing > 0")
        detector_spacing = None
    elif detector_arrangement == EQUISPACED:
        if detector_spacing is None or detector_spacing <= 0:
            raise GeometryError("equispaced detectors need detector_spacing > 0")
        angular_spacing = None
    else:
        raise GeometryError(f"unknown detector_arrangement {detector_arrangement!r}")

    geom = FanBeamGeometry(
        source_to_center=float(source_to_center),
        center_to_detector=float(center_to_detector),
        num_angles=int(num_angles),
        angle_range=ar,
        num_detectors=int(num_detectors),
        image_height=int(image_height),
        image_width=int(image_width),
        voxel_size=vs,
        detector_arrangement=detector_arrangement,
        angular_spacing=None if angular_spacing is None else float(angular_spacing),
        detector_spacing=None if detector_spacing is None else float(detector_spacing),
        sample_spacing=None if sample_spacing is None else float(sample_spacing),
    )
    _check_coverage(geom)
    return geom


def _corners(geom: FanBeamGeometry) -> np.ndarray:
    x0, x1, y0, y1 = geom.box
    return np.array([[x0, y0], [x0, y1], [x1, y0], [x1, y1]])


def point_fan_angles(geom: FanBeamGeometry, points: np.ndarray, beta: np.ndarray):
    """Fan angle and source distance of ``points`` seen from each source.

    Returns arrays of shape ``(len(beta), len(points))``.
    """
    beta = np.atleast_1d(beta)
    c, s = np.cos(beta)[:, None], np.sin(beta)[:, None]
    D = geom.source_to_center
    rx = points[None, :, 0] - D * c
    ry = points[None, :, 1] - D * s
    # central direction u = -(c, s); v = rot90(u) = (s, -c)
    along = -(rx * c + ry * s)
    across = rx * s - ry * c
    return np.arctan2(across, along), np.hypot(rx, ry)


def _check_coverage(geom: FanBeamGeometry) -> None:
    corners = _corners(geom)
    r_max = float(np.max(np.hypot(corners[:, 0], corners[:, 1])))
    if geom.source_to_center <= r_max:
        raise GeometryError("source lies inside the image field of view")
    gamma, _ = point_fan_angles(geom, corners, geom.angles())
    g = geom.detector_gammas()
    half = 0.5 * (g[1] - g[0]) if geom.num_detectors > 1 else 0.0
    lo, hi = g[0] - half, g[-1] + half
    if np.any(gamma < lo) or np.any(gamma > hi):
        raise GeometryError(
            "detector does not cover the field of view: need |gamma| <= "
            f"{math.degrees(np.max(np.abs(gamma))):.3f} deg, have "
            f"{math.degrees(hi):.3f} deg"
        )


def detectors_for_coverage(
    source_to_center: float, image_height: int, image_width: int, voxel_size, angular_spacing: float
) -> int:
    """Smallest odd equiangular detector count whose arc sees the whole image."""
    hh = 0.5 * image_height * voxel_size[0]
    hw = 0.5 * image_width * voxel_size[1]
    gmax = math.degrees(math.asin(math.hypot(hh, hw) / source_to_center))
    n = 2 * math.ceil(gmax / angular_spacing) + 1
    return n


def ray_arrays(geom: FanBeamGeometry, angle_idx: np.ndarray, det_idx: np.ndarray):
    """Vectorized source points and unit directions for index pairs."""
    angle_idx = np.asarray(angle_idx)
    det_idx = np.asarray(det_idx)
    beta = geom.angles()[angle_idx]
    gamma = geom.detector_gammas()[det_idx]
    c, s = np.cos(beta), np.sin(beta)
    D = geom.source_to_center
    src = np.stack([D * c, D * s], axis=-1)
    # d = cos(g) * u + sin(g) * v with u = -(c, s), v = (s, -c)
    cg, sg = np.cos(gamma), np.sin(gamma)
    d = np.stack([-cg * c + sg * s, -cg * s - sg * c], axis=-1)
    d /= np.linalg.norm(d, axis=-1, keepdims=True)
    return src, d


def ray_for(geom: FanBeamGeometry, angle_index: int, detector_index: int) -> Ray:
    if not 0 <= angle_index < geom.num_angles:
        raise IndexError(f"angle_index {angle_index} out of range")
    if not 0 <= detector_index < geom.num_detectors:
        raise IndexError(f"detector_index {detector_index} out of range")
    src, d = ray_arrays(geom, np.array([angle_index]), np.array([detector_index]))
    return Ray(src[0], d[0], int(angle_index), int(detector_index))


def _box_intersections(geom: FanBeamGeometry, src: np.ndarray, d: np.ndarray):
    """Slab test; returns entry/exit distances (t0 >= t1 means a miss)."""
    x0, x1, y0, y1 = geom.box
    lo = np.array([x0, y0])
    hi = np.array([x1, y1])
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / d
        ta = (lo - src) * inv
        tb = (hi - src) * inv
    tmin = np.minimum(ta, tb)
    tmax = np.maximum(ta, tb)
    # axis-parallel rays: inside the slab gives (-inf, inf), outside gives nan
    inside = (src >= lo) & (src <= hi)
    par = d == 0
    tmin = np.where(par, np.where(inside, -np.inf, np.inf), tmin)
    tmax = np.where(par, np.where(inside, np.inf, -np.inf), tmax)
    t0 = np.maximum(np.max(tmin, axis=-1), 0.0)
    t1 = np.min(tmax, axis=-1)
    return t0, t1


def to_normalized(geom: FanBeamGeometry, xy: np.ndarray) -> np.ndarray:
    x0, _, _, y1 = geom.box
    u = (xy[..., 0] - x0) / geom.width_mm
    v = (y1 - xy[..., 1]) / geom.height_mm
    return np.clip(np.stack([u, v], axis=-1), 0.0, 1.0)


def sample_rays(
    geom: FanBeamGeometry, src: np.ndarray, d: np.ndarray, delta_x: Optional[float] = None
) -> RaySamples:
    """Equidistant midpoint samples for many rays at once.

    Sample ``k`` of a ray sits at ``t_entry + (k + 0.5) * dx`` and is kept while
    it lies before the exit point, so the summed weights differ from the chord
    length by at most ``dx / 2``.
    """
    dx = geom.delta_x if delta_x is None else float(delta_x)
    src = np.atleast_2d(src)
    d = np.atleast_2d(d)
    t0, t1 = _box_intersections(geom, src, d)
    chord = np.where(t1 > t0, t1 - t0, 0.0)
    counts = np.ceil(chord / dx - 0.5).astype(np.int64)
    counts = np.maximum(counts, 0)
    offsets = np.zeros(len(counts) + 1, dtype=np.int64)
    np.cumsum(counts, out=offsets[1:])
    ray_index = np.repeat(np.arange(len(counts)), counts)
    k = np.arange(offsets[-1]) - offsets[:-1][ray_index]
    t = t0[ray_index] + (k + 0.5) * dx
    pos = src[ray_index] + t[:, None] * d[ray_index]
    return RaySamples(
        positions=pos,
        normalized=to_normalized(geom, pos),
        ray_index=ray_index,
        counts=counts,
        offsets=offsets,
        delta_x=dx,
    )


def sample_ray(geom: FanBeamGeometry, ray: Ray) -> list[SamplePoint]:
    s = sample_rays(geom, ray.source_point[None, :], ray.unit_direction[None, :])
    return [
        SamplePoint(tuple(p), tuple(q), s.delta_x)
        for p, q in zip(s.positions.tolist(), s.normalized.tolist())
    ]


def all_ray_indices(geom: FanBeamGeometry) -> tuple[np.ndarray, np.ndarray]:
    """Angle and detector index of every ray, in sinogram row-major order."""
    a, k = np.divmod(np.arange(geom.num_rays), geom.num_detectors)
    return a, k


def pixel_centers(geom: FanBeamGeometry) -> np.ndarray:
    """World coordinates ``[H, W, 2]`` of every pixel centre."""
    x0, _, _, y1 = geom.box
    vy, vx = geom.voxel_size
    xs = x0 + (np.arange(geom.image_width) + 0.5) * vx
    ys = y1 - (np.arange(geom.image_height) + 0.5) * vy
    X, Y = np.meshgrid(xs, ys)
    return np.stack([X, Y], axis=-1)


def pixel_centers_normalized(geom: FanBeamGeometry) -> np.ndarray:
    u = (np.arange(geom.image_width) + 0.5) / geom.image_width
    v = (np.arange(geom.image_height) + 0.5) / geom.image_height
    U, V = np.meshgrid(u, v)
    return np.stack([U, V], axis=-1)
