"""Coordinate network: 2D multiresolution hash-grid encoding + two-layer MLP.

The network maps a normalized position ``x in [0, 1]^2`` to ``N`` per-energy
LACs.  Level ``l`` has a grid of ``N_l = floor(N_min * b**l)`` cells per axis;
corner ``(i, j)`` is stored at the dense row-major slot ``i * (N_l + 1) + j``
when the level fits the table, and at ``(i * 1 ^ j * 2654435761) mod T``
otherwise.  Corner features are bilinearly interpolated and concatenated over
levels, then passed through ``W2 @ relu(W1 @ f + b1) + b2``.

Forward and backward passes are written out by hand in numpy and operate on
batches of points.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional

import numpy as np

HIDDEN = 128
PRIME_1 = np.uint64(1)
PRIME_2 = np.uint64(2654435761)


@dataclass(frozen=True)
class HashEncoderConfig:
    levels: int = 8
    table_size: int = 2 ** 15
    features_per_level: int = 4
    base_resolution: int = 2
    growth_factor: float = 2.0

    def __post_init__(self):
        if self.levels < 1 or self.features_per_level < 1 or self.base_resolution < 1:
            raise ValueError("levels, features_per_level and base_resolution must be >= 1")
        if self.table_size < 1 or self.table_size & (self.table_size - 1):
            raise ValueError("table_size must be a power of two")
        if not self.growth_factor > 1:
            raise ValueError("growth_factor must be > 1")

    @property
    def encoded_dim(self) -> int:
        return self.levels * self.features_per_level

    def resolutions(self) -> list[int]:
        return [
            int(math.floor(self.base_resolution * self.growth_factor ** l))
            for l in range(self.levels)
        ]

    def is_dense(self, level: int) -> bool:
        n = self.resolutions()[level] + 1
        return n * n <= self.table_size


PAPER_ENCODER = HashEncoderConfig(levels=16, table_size=2 ** 19, features_per_level=8,
                                  base_resolution=2, growth_factor=2.0)
DESK_ENCODER = HashEncoderConfig(levels=8, table_size=2 ** 15, features_per_level=4,
                                 base_resolution=2, growth_factor=2.0)


@dataclass
class NeuralFieldParams:
    hash_tables: np.ndarray  # [L, T, F]
    W1: np.ndarray  # [128, L*F]
    b1: np.ndarray  # [128]
    W2: np.ndarray  # [N, 128]
    b2: np.ndarray  # [N]

    FIELDS = ("hash_tables", "W1", "b1", "W2", "b2")

    @property
    def num_outputs(self) -> int:
        return self.W2.shape[0]

    def arrays(self) -> list[np.ndarray]:
        return [getattr(self, k) for k in self.FIELDS]

    def zeros_like(self) -> "NeuralFieldParams":
        return NeuralFieldParams(*(np.zeros_like(a) for a in self.arrays()))

    def copy(self) -> "NeuralFieldParams":
        return NeuralFieldParams(*(a.copy() for a in self.arrays()))


def init_params(config: HashEncoderConfig, n_outputs: int, seed: int = 0) -> NeuralFieldParams:
    """Hash features ~ U(-1e-4, 1e-4); Glorot-uniform MLP weights; zero biases."""
    rng = np.random.default_rng(seed)
    L, T, F = config.levels, config.table_size, config.features_per_level
    tables = rng.uniform(-1e-4, 1e-4, size=(L, T, F))
    d_in = L * F
    a1 = math.sqrt(6.0 / (d_in + HIDDEN))
    a2 = math.sqrt(6.0 / (HIDDEN + n_outputs))
    W1 = rng.uniform(-a1, a1, size=(HIDDEN, d_in))
    W2 = rng.uniform(-a2, a2, size=(n_outputs, HIDDEN))
    return NeuralFieldParams(tables, W1, np.zeros(HIDDEN), W2, np.zeros(n_outputs))


@dataclass
class EncodeCache:
    slots: np.ndarray  # [P, L, 4] table rows touched per point and level
    weights: np.ndarray  # [P, L, 4] bilinear weights
    features: np.ndarray  # [P, L*F]


@dataclass
class FieldCache:
    enc: EncodeCache
    pre: np.ndarray  # [P, 128] first-layer pre-activation
    hidden: np.ndarray  # [P, 128] post-ReLU


def _as_points(x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if x.shape[-1] != 2:
        raise ValueError("positions must be 2-vectors")
    if np.any(x < 0.0) or np.any(x > 1.0) or not np.all(np.isfinite(x)):
        raise ValueError("normalized positions must lie in [0, 1]^2")
    return x, single


def corner_slots(config: HashEncoderConfig, level: int, i: np.ndarray, j: np.ndarray) -> np.ndarray:
    """Table row of grid corner ``(i, j)`` at ``level``."""
    n = config.resolutions()[level] + 1
    if n * n <= config.table_size:
        return (i * n + j).astype(np.int64)
    h = (i.astype(np.uint64) * PRIME_1) ^ (j.astype(np.uint64) * PRIME_2)
    return (h & np.uint64(config.table_size - 1)).astype(np.int64)


def encode_batch(params: NeuralFieldParams, config: HashEncoderConfig, x: np.ndarray) -> EncodeCache:
    P = x.shape[0]
    L, F = config.levels, config.features_per_level
    slots = np.empty((P, L, 4), dtype=np.int64)
    weights = np.empty((P, L, 4))
    feats = np.empty((P, L, F))
    for l, res in enumerate(config.resolutions()):
        g = x * res
        c = np.minimum(np.floor(g), res - 1)
        f = g - c
        i0 = c[:, 0].astype(np.int64)
        j0 = c[:, 1].astype(np.int64)
        fu, fv = f[:, 0], f[:, 1]
        s = slots[:, l]
        s[:, 0] = corner_slots(config, l, i0, j0)
        s[:, 1] = corner_slots(config, l, i0 + 1, j0)
        s[:, 2] = corner_slots(config, l, i0, j0 + 1)
        s[:, 3] = corner_slots(config, l, i0 + 1, j0 + 1)
        w = weights[:, l]
        w[:, 0] = (1 - fu) * (1 - fv)
        w[:, 1] = fu * (1 - fv)
        w[:, 2] = (1 - fu) * fv
        w[:, 3] = fu * fv
        table = params.hash_tables[l]
        feats[:, l] = np.einsum("pk,pkf->pf", w, table[s])
    return EncodeCache(slots, weights, feats.reshape(P, L * F))


def encode(params: NeuralFieldParams, config: HashEncoderConfig, x) -> np.ndarray:
    """Concatenated per-level interpolated features, ``[L*F]`` or ``[P, L*F]``."""
    pts, single = _as_points(x)
    out = encode_batch(params, config, pts).features
    return out[0] if single else out


def forward_with_cache(params: NeuralFieldParams, config: HashEncoderConfig, x: np.ndarray):
    enc = encode_batch(params, config, x)
    pre = enc.features @ params.W1.T + params.b1
    hidden = np.maximum(pre, 0.0)
    out = hidden @ params.W2.T + params.b2
    return out, FieldCache(enc, pre, hidden)


def field_forward(params: NeuralFieldParams, config: HashEncoderConfig, x) -> np.ndarray:
    pts, single = _as_points(x)
    out, _ = forward_with_cache(params, config, pts)
    return out[0] if single else out


@dataclass
class FieldGrads:
    """Dense MLP gradients plus sparse (row, value) hash-table contributions."""

    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    hash_rows: np.ndarray  # [M] flat row index l * T + slot
    hash_vals: np.ndarray  # [M, F]


def backward_from_cache(params: NeuralFieldParams, config: HashEncoderConfig,
                        cache: FieldCache, upstream: np.ndarray) -> FieldGrads:
    g_out = np.asarray(upstream, dtype=np.float64)
    gW2 = g_out.T @ cache.hidden
    gb2 = g_out.sum(axis=0)
    g_hidden = g_out @ params.W2
    g_pre = np.where(cache.pre > 0, g_hidden, 0.0)
    gW1 = g_pre.T @ cache.enc.features
    gb1 = g_pre.sum(axis=0)
    g_feat = (g_pre @ params.W1).reshape(-1, config.levels, config.features_per_level)
    # each corner receives its bilinear weight times the level's feature gradient
    vals = cache.enc.weights[..., None] * g_feat[:, :, None, :]  # [P, L, 4, F]
    level_base = (np.arange(config.levels, dtype=np.int64) * config.table_size)[None, :, None]
    rows = cache.enc.slots + level_base
    return FieldGrads(gW1, gb1, gW2, gb2, rows.reshape(-1),
                      vals.reshape(-1, config.features_per_level))


def accumulate(grads: NeuralFieldParams, parts: list[FieldGrads], config: HashEncoderConfig) -> NeuralFieldParams:
    """Add gradient parts into a params-shaped buffer in list order."""
    for p in parts:
        grads.W1 += p.W1
        grads.b1 += p.b1
        grads.W2 += p.W2
        grads.b2 += p.b2
    if parts:
        rows = np.concatenate([p.hash_rows for p in parts])
        vals = np.concatenate([p.hash_vals for p in parts])
        flat = grads.hash_tables.reshape(-1, config.features_per_level)
        n = flat.shape[0]
        for f in range(config.features_per_level):
            flat[:, f] += np.bincount(rows, weights=vals[:, f], minlength=n)
    return grads


def field_backward(params: NeuralFieldParams, config: HashEncoderConfig, x, upstream,
                   grads: Optional[NeuralFieldParams] = None) -> NeuralFieldParams:
    """Accumulate ``d(upstream . v(x)) / d params`` into ``grads``."""
    pts, single = _as_points(x)
    up = np.atleast_2d(np.asarray(upstream, dtype=np.float64))
    if up.shape != (pts.shape[0], params.num_outputs):
        raise ValueError(f"upstream shape {up.shape} does not match outputs")
    if grads is None:
        grads = params.zeros_like()
    _, cache = forward_with_cache(params, config, pts)
    return accumulate(grads, [backward_from_cache(params, config, cache, up)], config)


# --- checkpoints ------------------------------------------------------------

def save_checkpoint(path, params: NeuralFieldParams, config: HashEncoderConfig, extra: Optional[dict] = None) -> None:
    """Write ``<path>.bin`` (f32le, fields in ``FIELDS`` order, row-major) and
    ``<path>.json`` describing config, outputs and field shapes."""
    path = Path(path)
    blob = np.concatenate([a.astype("<f4").ravel() for a in params.arrays()])
    path.with_suffix(".bin").write_bytes(blob.tobytes())
    header = {
        "dtype": "f32le",
        "order": list(NeuralFieldParams.FIELDS),
        "shapes": {k: list(getattr(params, k).shape) for k in NeuralFieldParams.FIELDS},
        "config": asdict(config),
        "num_outputs": params.num_outputs,
    }
    if extra:
        header.update(extra)
    path.with_suffix(".json").write_text(json.dumps(header, indent=2))


def load_checkpoint(path) -> tuple[NeuralFieldParams, HashEncoderConfig, dict]:
    path = Path(path)
    header = json.loads(path.with_suffix(".json").read_text())
    blob = np.frombuffer(path.with_suffix(".bin").read_bytes(), dtype="<f4")
    arrays, pos = [], 0
    for k in header["order"]:
        shape = tuple(header["shapes"][k])
        n = int(np.prod(shape))
        arrays.append(blob[pos:pos + n].reshape(shape).astype(np.float64))
        pos += n
    if pos != blob.size:
        raise ValueError(f"{path}: checkpoint size does not match header")
    return NeuralFieldParams(*arrays), HashEncoderConfig(**header["config"]), header
