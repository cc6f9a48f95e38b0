"""Eight-mode nullifiers of the 2D cylinder state and their variances.

Variances are in units where the vacuum (shot-noise) variance of an
eight-term unit-coefficient combination is 4 (hbar = 1, vacuum 1/2 per
quadrature).  dB values are ``10 log10(variance / 4)``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .circuit import CircuitParams
from .exceptions import DataShapeError, InvalidParameter

SHOT_NOISE = 4.0

# (channel, temporal offset) in the order (A,k),(B,k),(A,k+1),(B,k+1),(A,k+N),(B,k+N),(A,k+N+1),(B,k+N+1)
CELL_OFFSETS = (("A", 0, 0), ("B", 0, 0), ("A", 0, 1), ("B", 0, 1),
                ("A", 1, 0), ("B", 1, 0), ("A", 1, 1), ("B", 1, 1))
SIGNS = {
    "x": (1, 1, -1, -1, -1, 1, -1, 1),
    "p": (1, 1, 1, 1, -1, 1, 1, -1),
}


@dataclass(frozen=True)
class NullifierSpec:
    kind: str
    k: int
    n: int

    def __post_init__(self):
        if self.kind not in SIGNS:
            raise InvalidParameter("nullifier kind must be 'x' or 'p'")

    @property
    def terms(self) -> tuple:
        """``((channel, temporal index), coefficient)`` for the eight modes."""
        return tuple(
            ((ch, self.k + a * self.n + b), sign)
            for (ch, a, b), sign in zip(CELL_OFFSETS, SIGNS[self.kind])
        )

    @property
    def coefficients(self) -> np.ndarray:
        return np.array(SIGNS[self.kind], dtype=float)

    @property
    def span(self) -> tuple:
        return self.k, self.k + self.n + 1


def make_nullifier(kind: str, k: int, n: int) -> NullifierSpec:
    if k < 0:
        raise InvalidParameter("temporal index must be non-negative")
    return NullifierSpec(kind, int(k), int(n))


def to_db(variance) -> np.ndarray | float:
    return 10.0 * np.log10(np.asarray(variance) / SHOT_NOISE)


def from_db(db) -> np.ndarray | float:
    return SHOT_NOISE * 10.0 ** (np.asarray(db) / 10.0)


@dataclass(frozen=True)
class VarianceReport:
    kind: str
    k: int
    variance: float
    stderr: float = 0.0
    samples: int = 0

    @property
    def db(self) -> float:
        return float(to_db(self.variance))

    @property
    def db_stderr(self) -> float:
        if self.variance <= 0:
            return float("nan")
        return 10.0 / math.log(10.0) * self.stderr / self.variance


def source_variance(r: float, eta: float = 1.0, sigma: float = 0.0, exact_phase: bool = False) -> float:
    """Squeezed-quadrature variance of one source relative to vacuum.

    Phase noise uses the small-angle mixture ``cos^2(sigma)``/``sin^2(sigma)``
    unless ``exact_phase`` is set, in which case the Gaussian average
    ``E[cos^2 theta] = (1 + exp(-2 sigma^2))/2`` is used.
    """
    if exact_phase:
        c2 = 0.5 * (1.0 + math.exp(-2.0 * sigma * sigma))
    else:
        c2 = math.cos(sigma) ** 2
    return eta * (math.exp(-2.0 * r) * c2 + math.exp(2.0 * r) * (1.0 - c2)) + (1.0 - eta)


def analytic_variance(spec: NullifierSpec, params: CircuitParams, exact_phase: bool = False) -> VarianceReport:
    """Variance of ``spec`` with loss and phase noise applied at the sources.

    The x-nullifier collapses to the squeezed quadrature of source A, the
    p-nullifier to that of source B.
    """
    ch = params.channel("A" if spec.kind == "x" else "B")
    var = source_variance(ch["r"], ch["eta"], ch["sigma"], exact_phase)
    if params.electronic_noise_db is not None:
        # detector noise adds to every quadrature and is also in the vacuum calibration
        e = 10.0 ** (params.electronic_noise_db / 10.0)
        var = (var + e) / (1.0 + e)
    return VarianceReport(spec.kind, spec.k, SHOT_NOISE * var)


def nullifier_samples(spec: NullifierSpec, data) -> np.ndarray:
    """Per-shot nullifier values assembled from a ``QuadratureDataset``."""
    basis = data.basis
    values = data.values
    k_lo, k_hi = spec.span
    if k_lo < 0 or k_hi >= values.shape[1]:
        raise DataShapeError(f"nullifier at k={spec.k} needs temporal modes {k_lo}..{k_hi}, "
                             f"dataset has 0..{values.shape[1] - 1}")
    out = np.zeros(values.shape[0])
    for (ch, k), coeff in spec.terms:
        c = 0 if ch == "A" else 1
        if basis[c] != spec.kind:
            raise DataShapeError(f"channel {ch} was measured in {basis[c]}, nullifier needs {spec.kind}")
        out += coeff * values[:, k, c]
    return out


def empirical_variance(spec: NullifierSpec, data) -> VarianceReport:
    """Unbiased sample variance of the nullifier, normalised to shot noise."""
    samples = nullifier_samples(spec, data)
    n = samples.size
    if n < 2:
        raise DataShapeError("need at least two shots")
    var = float(np.var(samples, ddof=1)) * (0.5 / data.calibration)
    return VarianceReport(spec.kind, spec.k, var, var * math.sqrt(2.0 / (n - 1)), n)


def nullifier_indices(data, n: int) -> range:
    """Temporal indices ``k`` whose whole nullifier lies in the dataset."""
    first = getattr(data, "warmup", 0)
    return range(first, data.values.shape[1] - n - 1)


def variance_profile(kind: str, data, n: int) -> list:
    return [empirical_variance(make_nullifier(kind, k, n), data) for k in nullifier_indices(data, n)]


def pooled_variance(kind: str, data, n: int) -> VarianceReport:
    """Variance pooled over every complete nullifier in the dataset.

    Nullifiers at different ``k`` collapse onto different source modes and
    are independent, so pooling the centred samples is unbiased.
    """
    ks = list(nullifier_indices(data, n))
    if not ks:
        raise DataShapeError("dataset holds no complete nullifier")
    stack = np.stack([nullifier_samples(make_nullifier(kind, k, n), data) for k in ks], axis=1)
    shots = stack.shape[0]
    if shots < 2:
        raise DataShapeError("need at least two shots")
    per_k = np.var(stack, axis=0, ddof=1)
    var = float(per_k.mean()) * (0.5 / data.calibration)
    dof = len(ks) * (shots - 1)
    return VarianceReport(kind, -1, var, var * math.sqrt(2.0 / dof), len(ks) * shots)


def write_reports_csv(reports, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["k", "kind", "variance", "dB", "stderr"])
        for rep in reports:
            writer.writerow([rep.k, rep.kind, repr(rep.variance), repr(rep.db), repr(rep.stderr)])
