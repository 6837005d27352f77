"""Losses, optimizer and the per-case fitting loop for the neural field."""

from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np

from . import field as nf
from .geometry import (FanBeamGeometry, all_ray_indices, pixel_centers_normalized,
                       ray_arrays, sample_rays)
from .phantom import Sinogram, mask_lookup_nearest
from .projector import poly_from_channels, segment_sums
from .spectrum import Spectrum, effective_energy, nearest_level

log = logging.getLogger(__name__)

RAYS_PER_CHUNK = 16


class NumericalError(RuntimeError):
    """Non-finite loss or gradient during optimization."""


@dataclass
class TrainConfig:
    batch_rays: int = 80
    lam: float = 0.2
    epochs: int = 4000
    lr0: float = 1e-3
    lr_decay: float = 0.5
    decay_every: int = 1000
    seed: int = 0
    n_energies: int = 101
    energy_range: tuple[float, float] = (20.0, 120.0)
    encoder: nf.HashEncoderConfig = field(default_factory=lambda: nf.DESK_ENCODER)

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")
        if self.batch_rays < 1:
            raise ValueError("batch_rays must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["energy_range"] = list(self.energy_range)
        return d


# --- losses -----------------------------------------------------------------

def dc_loss(measured, predicted):
    """Mean absolute error and its subgradient w.r.t. ``predicted``."""
    p = np.asarray(measured, dtype=np.float64)
    q = np.asarray(predicted, dtype=np.float64)
    if p.shape != q.shape or p.size < 1:
        raise ValueError("measured and predicted must have equal nonzero length")
    r = q - p
    return float(np.abs(r).mean()), np.sign(r) / r.size


def _eds_terms(lacs: np.ndarray, mask_values: np.ndarray):
    d = np.diff(lacs, axis=1)  # mu_{i+1} - mu_i
    keep = 1.0 - np.asarray(mask_values, dtype=np.float64)
    per_sample = keep * np.abs(d).sum(axis=1)
    s = np.sign(d)
    g = np.zeros_like(lacs)
    g[:, 1:] += s
    g[:, :-1] -= s
    return per_sample, keep[:, None] * g


def eds_loss(lacs_per_ray, mask_values, n_rays: Optional[int] = None, samples_per_ray=None):
    """Energy-smoothness penalty and its gradient w.r.t. ``lacs``.

    ``lacs_per_ray`` is ``[S, N]`` for the samples of one ray, or a list of
    such arrays (with matching ``mask_values`` lists) for a batch.  Each ray's
    term is divided by its own sample count and the batch size.
    """
    if isinstance(lacs_per_ray, np.ndarray):
        lacs_list, mask_list = [lacs_per_ray], [mask_values]
    else:
        lacs_list, mask_list = list(lacs_per_ray), list(mask_values)
    R = len(lacs_list) if n_rays is None else n_rays
    total = 0.0
    grads = []
    for k, (lac, m) in enumerate(zip(lacs_list, mask_list)):
        lac = np.atleast_2d(np.asarray(lac, dtype=np.float64))
        m = np.asarray(m, dtype=np.float64).reshape(-1)
        if m.shape[0] != lac.shape[0]:
            raise ValueError("one mask value per sample is required")
        n = lac.shape[0] if samples_per_ray is None else samples_per_ray
        if lac.shape[1] < 2 or n == 0:
            grads.append(np.zeros_like(lac))
            continue
        per, g = _eds_terms(lac, m)
        total += per.sum() / (R * n)
        grads.append(g / (R * n))
    return total, grads[0] if isinstance(lacs_per_ray, np.ndarray) else grads


# --- optimizer --------------------------------------------------------------

@dataclass
class AdamState:
    m: list
    v: list
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, arrays) -> "AdamState":
        arrays = arrays.arrays() if isinstance(arrays, nf.NeuralFieldParams) else arrays
        return cls([np.zeros_like(a) for a in arrays], [np.zeros_like(a) for a in arrays])


def adam_step(params, grads, state: AdamState, lr: float):
    """Bias-corrected Adam update applied in place to every array.

    ``params``/``grads`` are :class:`NeuralFieldParams` or lists of arrays.
    """
    ps = params.arrays() if isinstance(params, nf.NeuralFieldParams) else params
    gs = grads.arrays() if isinstance(grads, nf.NeuralFieldParams) else grads
    for g in gs:
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient at optimizer step {state.step + 1}")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for p, g, m, v in zip(ps, gs, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        denom = np.sqrt(v / c2)
        denom += state.eps
        p -= lr * (m / c1) / denom
    return params, state


def lr_at(epoch: int, cfg: TrainConfig) -> float:
    return cfg.lr0 * cfg.lr_decay ** (epoch // cfg.decay_every)


# --- training ---------------------------------------------------------------

@dataclass
class TrainResult:
    params: nf.NeuralFieldParams
    history: list = field(default_factory=list)  # (epoch, lr, dc, eds, total)
    config: Optional[TrainConfig] = None


@dataclass
class _ChunkOut:
    grads: nf.FieldGrads
    dc_sum: float
    eds_sum: float


def _chunk_step(params, cfg, geom, sino_flat, eta, mask, ray_ids, n_batch):
    a_idx, k_idx = np.divmod(ray_ids, geom.num_detectors)
    src, d = ray_arrays(geom, a_idx, k_idx)
    s = sample_rays(geom, src, d)
    R = n_batch
    if s.num_samples:
        lacs, cache = nf.forward_with_cache(params, cfg.encoder, s.normalized)
    else:
        lacs = np.zeros((0, eta.size))
        cache = None
    p_ch = s.delta_x * segment_sums(lacs, s.offsets)
    p_hat, w = poly_from_channels(p_ch, eta)
    resid = p_hat - sino_flat[ray_ids]
    dc_sum = float(np.abs(resid).sum()) / R
    g_ray = np.sign(resid) / R  # dL/dp_hat

    upstream = (g_ray[:, None] * s.delta_x * w)[s.ray_index]
    eds_sum = 0.0
    if eta.size > 1 and s.num_samples:
        m = mask_lookup_nearest(mask, s.normalized)
        per, g = _eds_terms(lacs, m)
        denom = (R * s.counts)[s.ray_index].astype(np.float64)
        eds_sum = float((per / denom).sum())
        upstream = upstream + cfg.lam * g / denom[:, None]
    if cache is None:
        empty = np.zeros((0,), dtype=np.int64)
        zero = params.zeros_like()
        grads = nf.FieldGrads(zero.W1, zero.b1, zero.W2, zero.b2, empty,
                              np.zeros((0, cfg.encoder.features_per_level)))
    else:
        grads = nf.backward_from_cache(params, cfg.encoder, cache, upstream)
    return _ChunkOut(grads, dc_sum, eds_sum)


def batch_loss_and_grads(params, cfg: TrainConfig, geom, sino_flat, spec: Spectrum, mask,
                         ray_ids: np.ndarray, pool: Optional[ThreadPoolExecutor] = None):
    """Total loss pieces and gradient buffer for one batch of ray indices.

    Rays are processed in fixed chunks of ``RAYS_PER_CHUNK`` and the chunk
    results are reduced in chunk order, so the result does not depend on how
    many worker threads evaluated the chunks.
    """
    eta = spec.weights
    chunks = [ray_ids[i:i + RAYS_PER_CHUNK] for i in range(0, len(ray_ids), RAYS_PER_CHUNK)]
    fn = lambda ids: _chunk_step(params, cfg, geom, sino_flat, eta, mask, ids, len(ray_ids))  # noqa: E731
    outs = list(pool.map(fn, chunks)) if pool is not None else [fn(c) for c in chunks]
    grads = nf.accumulate(params.zeros_like(), [o.grads for o in outs], cfg.encoder)
    dc = 0.0
    eds = 0.0
    for o in outs:
        dc += o.dc_sum
        eds += o.eds_sum
    return dc, eds, grads


def train(
    sino: Sinogram,
    geom: FanBeamGeometry,
    spec: Spectrum,
    mask: np.ndarray,
    cfg: TrainConfig,
    threads: int = 1,
    callback: Optional[Callable[[int, tuple], None]] = None,
) -> TrainResult:
    """Fit the neural field to a measured sinogram.

    Each epoch draws ``batch_rays`` distinct rays uniformly from every
    (angle, detector) pair, evaluates the field at the ray samples, projects
    through the polychromatic model and takes one Adam step on
    ``L_DC + lam * L_EDS``.
    """
    if sino.values.shape != geom.shape:
        raise ValueError("sinogram does not match geometry")
    if len(spec) != cfg.n_energies:
        raise ValueError(f"spectrum has {len(spec)} levels, config expects {cfg.n_energies}")
    mask = np.asarray(mask)
    if mask.shape != (geom.image_height, geom.image_width):
        raise ValueError("metal mask does not match the image grid")

    rng = np.random.default_rng(cfg.seed)
    params = nf.init_params(cfg.encoder, cfg.n_energies, seed=int(rng.integers(2 ** 31)))
    state = AdamState.zeros_like(params)
    sino_flat = np.ascontiguousarray(sino.values, dtype=np.float64).ravel()
    n_rays = geom.num_rays
    batch = min(cfg.batch_rays, n_rays)
    history = []
    pool = ThreadPoolExecutor(max_workers=threads) if threads > 1 else None
    try:
        for epoch in range(cfg.epochs):
            ids = rng.choice(n_rays, size=batch, replace=False)
            dc, eds, grads = batch_loss_and_grads(params, cfg, geom, sino_flat, spec, mask, ids, pool)
            total = dc + cfg.lam * eds
            if not math.isfinite(total):
                raise NumericalError(f"non-finite loss at epoch {epoch}")
            lr = lr_at(epoch, cfg)
            adam_step(params, grads, state, lr)
            row = (epoch, lr, dc, eds, total)
            history.append(row)
            if callback is not None:
                callback(epoch, row)
            if epoch % 250 == 0:
                log.debug("epoch %d lr %.2e dc %.5f eds %.5f", epoch, lr, dc, eds)
    finally:
        if pool is not None:
            pool.shutdown()
    return TrainResult(params, history, cfg)


def evaluate_channels(params, encoder, geom: FanBeamGeometry, chunk: int = 8192) -> np.ndarray:
    """Field output at every pixel centre, ``[N, H, W]``."""
    pts = pixel_centers_normalized(geom).reshape(-1, 2)
    out = np.concatenate([
        nf.forward_with_cache(params, encoder, pts[i:i + chunk])[0]
        for i in range(0, len(pts), chunk)
    ])
    return out.T.reshape(-1, geom.image_height, geom.image_width)


def extract_image(params, encoder, geom: FanBeamGeometry, spec: Spectrum) -> np.ndarray:
    """Channel nearest the effective energy, clamped to be nonnegative."""
    k = 0 if len(spec) == 1 else nearest_level(spec, effective_energy(spec))
    return np.maximum(evaluate_channels(params, encoder, geom)[k], 0.0)


def write_history_csv(path, history) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "lr", "L_DC", "L_EDS", "L_total"])
        for epoch, lr, dc, eds, total in history:
            w.writerow([epoch, repr(lr), repr(dc), repr(eds), repr(total)])
