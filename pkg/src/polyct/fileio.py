"""Raw little-endian float32 arrays with JSON sidecars.

``<stem>.raw`` holds the row-major data (slowest axis first); ``<stem>.json``
holds ``{"dtype": "f32le", "shape": [...], "units": ..., "kind": ...}`` plus
``"geometry"`` for sinograms.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Optional

import numpy as np

from .geometry import FanBeamGeometry
from .phantom import Sinogram


def stem(path) -> Path:
    p = Path(path)
    return p.with_suffix("") if p.suffix in (".raw", ".json") else p


def write_array(path, array, units: str, kind: str, extra: Optional[dict] = None) -> Path:
    s = stem(path)
    s.parent.mkdir(parents=True, exist_ok=True)
    a = np.ascontiguousarray(array, dtype="<f4")
    s.with_suffix(".raw").write_bytes(a.tobytes())
    meta = {"dtype": "f32le", "shape": list(a.shape), "units": units, "kind": kind}
    if extra:
        meta.update(extra)
    s.with_suffix(".json").write_text(json.dumps(meta, indent=2, sort_keys=True))
    return s.with_suffix(".raw")


def read_array(path) -> tuple[np.ndarray, dict]:
    s = stem(path)
    meta_path, raw_path = s.with_suffix(".json"), s.with_suffix(".raw")
    if not meta_path.exists() or not raw_path.exists():
        raise FileNotFoundError(f"missing {raw_path} or its sidecar {meta_path}")
    meta = json.loads(meta_path.read_text())
    if meta.get("dtype") != "f32le":
        raise ValueError(f"{meta_path}: unsupported dtype {meta.get('dtype')!r}")
    shape = tuple(meta["shape"])
    data = np.frombuffer(raw_path.read_bytes(), dtype="<f4")
    if data.size != int(np.prod(shape)):
        raise ValueError(f"{raw_path}: {data.size} values, sidecar says shape {shape}")
    return data.reshape(shape).copy(), meta


def write_sinogram(path, sino: Sinogram) -> Path:
    return write_array(path, sino.values, "dimensionless (-ln transmission)", "sinogram",
                       {"geometry": sino.geometry.to_dict()})


def read_sinogram(path) -> Sinogram:
    data, meta = read_array(path)
    if "geometry" not in meta:
        raise ValueError(f"{stem(path)}.json: sinogram sidecar has no geometry")
    geom = FanBeamGeometry.from_dict(meta["geometry"])
    return Sinogram(data.astype(np.float64), geom)


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def export_png(path, grid, window) -> None:
    """Write an 8-bit grayscale PNG with a linear ``[lo, hi]`` window."""
    from PIL import Image

    lo, hi = float(window[0]), float(window[1])
    if not hi > lo:
        raise ValueError("window must satisfy hi > lo")
    g = np.asarray(grid, dtype=np.float64)
    if g.ndim != 2:
        raise ValueError("export_png expects a 2D grid")
    px = np.clip((g - lo) / (hi - lo), 0.0, 1.0)
    Image.fromarray(np.round(px * 255).astype(np.uint8), mode="L").save(path)
