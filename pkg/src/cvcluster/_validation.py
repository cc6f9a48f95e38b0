"""Small argument checks shared by the estimators and samplers."""

from __future__ import annotations

import math

import numpy as np

from .exceptions import DataShapeError, InvalidParameter


def check_count(value, name: str, minimum: int = 1) -> int:
    if isinstance(value, bool) or int(value) != value or value < minimum:
        raise InvalidParameter(f"{name} must be an integer >= {minimum}, got {value!r}")
    return int(value)


def check_seed(value) -> int:
    seed = check_count(value, "seed", 0)
    if seed >= 2 ** 64:
        raise InvalidParameter("seed must fit in 64 bits")
    return seed


def check_positive(value, name: str) -> float:
    value = float(value)
    if not (math.isfinite(value) and value > 0):
        raise InvalidParameter(f"{name} must be positive and finite, got {value!r}")
    return value


def check_spectra(freqs, psds, rows: int = 4) -> tuple:
    """Validate a frequency grid and a ``(rows, F)`` PSD stack."""
    freqs = np.asarray(freqs, dtype=float)
    psds = np.asarray(psds, dtype=float)
    if freqs.ndim != 1:
        raise DataShapeError("frequencies must be one-dimensional")
    if psds.shape != (rows, freqs.size):
        raise DataShapeError(f"psds must have shape ({rows}, {freqs.size}), got {psds.shape}")
    if not (np.all(np.isfinite(freqs)) and np.all(np.isfinite(psds))):
        raise DataShapeError("frequencies and PSDs must be finite")
    if np.any(np.diff(freqs) <= 0):
        raise DataShapeError("frequencies must be strictly increasing")
    return freqs, psds
