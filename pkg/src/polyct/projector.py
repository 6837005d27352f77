"""Discrete polychromatic projector with closed-form gradients.

For a ray with per-sample, per-energy LAC predictions ``mu[s, i]`` the
per-energy projections are ``p_i = dx * sum_s mu[s, i]`` and the measurement
is ``p = -ln sum_i eta_i exp(-p_i)``.  The derivative with respect to any
``mu[s, i]`` is ``dx * w_i`` where ``w = softmax(ln eta - p_i)``, the share of
transmitted photons carried by energy ``i``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .spectrum import Spectrum


@dataclass
class RayPrediction:
    lacs: np.ndarray  # [num_samples, N]
    delta_x: float

    def __post_init__(self):
        self.lacs = np.atleast_2d(np.asarray(self.lacs, dtype=np.float64))
        if self.lacs.shape[0] < 1:
            raise ValueError("a ray prediction needs at least one sample")


def _weights(spec) -> np.ndarray:
    return spec.weights if isinstance(spec, Spectrum) else np.asarray(spec, dtype=np.float64)


def project_mono(pred: RayPrediction, channel: int) -> float:
    n = pred.lacs.shape[1]
    if not 0 <= channel < n:
        raise IndexError(f"channel {channel} out of range for {n} channels")
    return float(pred.delta_x * pred.lacs[:, channel].sum())


def poly_from_channels(p_channels: np.ndarray, eta: np.ndarray):
    """Stable ``-ln sum_i eta_i exp(-p_i)`` over the last axis.

    Returns the measurement and the photon-share weights ``w`` (same shape as
    ``p_channels``, summing to one along the last axis).  Zero-weight energies
    are ignored rather than allowed to set the shift.
    """
    p = np.asarray(p_channels, dtype=np.float64)
    eta = np.asarray(eta, dtype=np.float64)
    live = eta > 0
    m = np.min(np.where(live, p, np.inf), axis=-1, keepdims=True)
    e = np.where(live, eta * np.exp(-(p - m)), 0.0)
    z = e.sum(axis=-1, keepdims=True)
    out = m[..., 0] - np.log(z[..., 0])
    return out, e / z


def project_poly(pred: RayPrediction, spec) -> float:
    eta = _weights(spec)
    if pred.lacs.shape[1] != eta.size:
        raise ValueError(
            f"prediction has {pred.lacs.shape[1]} channels, spectrum has {eta.size}"
        )
    p_i = pred.delta_x * pred.lacs.sum(axis=0)
    out, _ = poly_from_channels(p_i, eta)
    return float(out)


def project_poly_grad(pred: RayPrediction, spec) -> np.ndarray:
    eta = _weights(spec)
    if pred.lacs.shape[1] != eta.size:
        raise ValueError(
            f"prediction has {pred.lacs.shape[1]} channels, spectrum has {eta.size}"
        )
    p_i = pred.delta_x * pred.lacs.sum(axis=0)
    _, w = poly_from_channels(p_i, eta)
    return np.broadcast_to(pred.delta_x * w, pred.lacs.shape).copy()


def segment_sums(values: np.ndarray, offsets: np.ndarray) -> np.ndarray:
    """Sum rows of ``values`` over ``offsets[k]:offsets[k+1]`` segments.

    Empty segments give zero rows.
    """
    n_seg = offsets.size - 1
    out = np.zeros((n_seg,) + values.shape[1:])
    counts = np.diff(offsets)
    nz = counts > 0
    if values.shape[0] and nz.any():
        out[nz] = np.add.reduceat(values, offsets[:-1][nz], axis=0)
    return out


def project_poly_batch(lacs: np.ndarray, offsets: np.ndarray, delta_x: float, eta):
    """Batched projector for concatenated ray samples.

    Returns ``(p_hat [R], p_channels [R, N], w [R, N])``.
    """
    p_ch = delta_x * segment_sums(lacs, offsets)
    p, w = poly_from_channels(p_ch, _weights(eta))
    return p, p_ch, w
