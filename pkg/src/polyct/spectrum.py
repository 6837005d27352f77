"""Discrete normalized X-ray spectra."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class SpectrumError(ValueError):
    pass


@dataclass(frozen=True)
class Spectrum:
    """Energy levels (keV, strictly increasing) and normalized photon weights."""

    energies: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        e = np.asarray(self.energies, dtype=np.float64)
        w = np.asarray(self.weights, dtype=np.float64)
        if e.ndim != 1 or e.shape != w.shape or e.size < 1:
            raise SpectrumError("energies and weights must be equal-length 1D arrays")
        if np.any(np.diff(e) <= 0):
            raise SpectrumError("energies must be strictly increasing")
        if np.any(w < 0):
            raise SpectrumError("weights must be nonnegative")
        if abs(w.sum() - 1.0) > 1e-12:
            raise SpectrumError(f"weights sum to {w.sum()!r}, expected 1")
        object.__setattr__(self, "energies", e)
        object.__setattr__(self, "weights", w)

    def __len__(self) -> int:
        return self.energies.size


def _renormalize(w: np.ndarray) -> np.ndarray:
    w = w / w.sum()
    # one correction pass pulls the float sum to within an ulp or two of 1
    return w / w.sum()


def normalize(raw_counts, energies) -> Spectrum:
    """Turn source photon counts ``I_0(E_i)`` into a :class:`Spectrum`."""
    c = np.asarray(raw_counts, dtype=np.float64)
    e = np.asarray(energies, dtype=np.float64)
    if c.shape != e.shape or c.ndim != 1 or c.size == 0:
        raise SpectrumError("counts and energies must be equal-length 1D arrays")
    if np.any(c < 0):
        raise SpectrumError("counts must be nonnegative")
    if not np.any(c > 0):
        raise SpectrumError("at least one count must be positive")
    if np.any(np.diff(e) <= 0):
        raise SpectrumError("energies must be strictly increasing")
    return Spectrum(e, _renormalize(c))


def uniform_levels(n: int, lo: float, hi: float) -> np.ndarray:
    """``n`` uniformly spaced levels over ``[lo, hi]``; ``n == 1`` gives the midpoint."""
    if n == 1:
        return np.array([0.5 * (lo + hi)])
    return np.linspace(lo, hi, n)


def resample(s: Spectrum, n_new: int, energy_range=None) -> Spectrum:
    """Resample onto ``n_new`` uniform levels by piecewise-linear interpolation."""
    if n_new < 1:
        raise SpectrumError("n_new must be >= 1")
    lo, hi = (s.energies[0], s.energies[-1]) if energy_range is None else energy_range
    lo, hi = float(lo), float(hi)
    if hi < lo or (hi == lo and n_new > 1):
        raise SpectrumError("empty energy range")
    if lo < s.energies[0] or hi > s.energies[-1]:
        raise SpectrumError(
            f"range [{lo}, {hi}] outside spectrum support "
            f"[{s.energies[0]}, {s.energies[-1]}]"
        )
    e = uniform_levels(n_new, lo, hi)
    w = np.interp(e, s.energies, s.weights)
    if not np.any(w > 0):
        raise SpectrumError("resampled spectrum has no weight in range")
    if np.all(w == w[0]):
        # exact for constant curves, where the generic path may be off by an ulp
        w = np.full(n_new, 1.0 / n_new)
    else:
        w = _renormalize(w)
    return Spectrum(e, w)


def effective_energy(s: Spectrum) -> float:
    """Unweighted mean of the energy levels."""
    return float(np.mean(s.energies))


def nearest_level(s: Spectrum, energy: float) -> int:
    """Index of the level closest to ``energy``; ties go to the lower level."""
    dist = np.abs(s.energies - energy)
    return int(np.flatnonzero(dist == dist.min())[0])


# --- synthetic spectra -----------------------------------------------------

def uniform_spectrum(lo: float = 20.0, hi: float = 120.0, step: float = 1.0) -> Spectrum:
    e = np.arange(lo, hi + 0.5 * step, step)
    return normalize(np.ones_like(e), e)


def tungsten_like_spectrum(
    lo: float = 20.0, hi: float = 120.0, step: float = 1.0, peak: float = 60.0
) -> Spectrum:
    """Triangular test spectrum: linear ramp up to ``peak``, then down to ``hi``.

    A test fixture shaped loosely like a filtered tube spectrum, not a physical
    emission model.  The end points keep a small nonzero count.
    """
    e = np.arange(lo, hi + 0.5 * step, step)
    up = (e - lo) / (peak - lo)
    down = (hi - e) / (hi - peak)
    c = np.where(e <= peak, up, down)
    c = 0.05 + 0.95 * np.clip(c, 0.0, 1.0)
    return normalize(c, e)


# --- CSV files -------------------------------------------------------------

def write_csv(path, s: Spectrum) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["energy_keV", "relative_count"])
        for e, c in zip(s.energies, s.weights):
            w.writerow([repr(float(e)), repr(float(c))])


def read_csv(path) -> Spectrum:
    path = Path(path)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][:2] != ["energy_keV", "relative_count"]:
        raise SpectrumError(f"{path}: expected header 'energy_keV,relative_count'")
    try:
        data = np.array([[float(a), float(b)] for a, b, *_ in rows[1:] if a.strip()])
    except ValueError as exc:
        raise SpectrumError(f"{path}: {exc}") from None
    if data.size == 0:
        raise SpectrumError(f"{path}: no spectrum rows")
    return normalize(data[:, 1], data[:, 0])
