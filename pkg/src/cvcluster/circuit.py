"""Temporally multiplexed EPR -> 1D -> 2D cylinder circuit.

Temporal mode ``k`` of spatial channel ``A`` (0) or ``B`` (1) occupies mode
index ``2k + channel``.  Two representations of the same circuit live here:

* ``build_2d_cluster_z`` composes symplectic operations on a finite window
  of ``K`` temporal modes.  Delays are cyclic inside the window so the
  result stays a pure state; modes whose neighbourhood wraps the window are
  flagged as boundary modes.
* ``quadrature_transfer`` writes the closed-form Heisenberg-picture output
  quadratures in terms of the unsqueezed stage-0 inputs.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .exceptions import InvalidParameter, PhysicalityError
from .graph import (
    AdjacencyZ,
    SymplecticTransform,
    apply_symplectic,
    beam_splitter,
    permutation,
    rotation_pi2,
    squeezed_vacuum_z,
)

CHANNELS = ("A", "B")
BASES = ("x", "p")
MHZ = 2e6 * math.pi


def mode_index(channel, k: int) -> int:
    c = CHANNELS.index(channel) if isinstance(channel, str) else int(channel)
    return 2 * k + c


def mode_labels(n_temporal: int) -> list:
    return [(ch, k) for k in range(n_temporal) for ch in CHANNELS]


@dataclass(frozen=True)
class CircuitParams:
    """Full parameterisation of the generation experiment (SI units)."""

    n_circumference: int = 12
    tau: float = 247e-9
    n_temporal: int = 26
    r_a: float = 1.0
    r_b: float = 1.0
    eta_a: float = 1.0
    eta_b: float = 1.0
    sigma_a: float = 0.0
    sigma_b: float = 0.0
    epsilon_a: float | None = None
    epsilon_b: float | None = None
    gamma_a: float | None = None
    gamma_b: float | None = None
    electronic_noise_db: float | None = None
    drift_a: float = 0.0
    drift_b: float = 0.0

    def __post_init__(self):
        n, k = self.n_circumference, self.n_temporal
        if int(n) != n or n < 2:
            raise InvalidParameter("n_circumference must be an integer >= 2")
        if n % 2:
            raise InvalidParameter(
                f"n_circumference={n} is odd: the cylinder graph is bipartite only for even N"
            )
        if int(k) != k or k < 2 * n + 2:
            raise InvalidParameter(f"n_temporal must be >= 2N+2 = {2 * n + 2}, got {k}")
        if not self.tau > 0:
            raise InvalidParameter("tau must be positive")
        for name in ("r_a", "r_b"):
            if not math.isfinite(getattr(self, name)):
                raise InvalidParameter(f"{name} must be finite")
        for name in ("eta_a", "eta_b"):
            if not 0.0 < getattr(self, name) <= 1.0:
                raise InvalidParameter(f"{name} must lie in (0, 1]")
        for name in ("sigma_a", "sigma_b", "drift_a", "drift_b"):
            if not getattr(self, name) >= 0.0:
                raise InvalidParameter(f"{name} must be non-negative")
        for ch in ("a", "b"):
            eps, gam = getattr(self, f"epsilon_{ch}"), getattr(self, f"gamma_{ch}")
            if (eps is None) != (gam is None):
                raise InvalidParameter(f"epsilon_{ch} and gamma_{ch} must be given together")
            if eps is not None and not 0.0 <= eps < gam:
                raise InvalidParameter(f"channel {ch.upper()} must be below threshold (epsilon < gamma)")

    def channel(self, channel: str) -> dict:
        c = channel.lower()
        return {
            "r": getattr(self, f"r_{c}"),
            "eta": getattr(self, f"eta_{c}"),
            "sigma": getattr(self, f"sigma_{c}"),
            "drift": getattr(self, f"drift_{c}"),
            "epsilon": getattr(self, f"epsilon_{c}"),
            "gamma": getattr(self, f"gamma_{c}"),
        }

    @property
    def ideal(self) -> bool:
        return self.eta_a == 1 and self.eta_b == 1 and self.sigma_a == 0 and self.sigma_b == 0

    def replace(self, **changes) -> "CircuitParams":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_config(self) -> dict:
        """JSON config form: ``tau_ns`` and rates as MHz (divided by 2pi)."""
        doc = self.to_dict()
        doc["tau_ns"] = doc.pop("tau") * 1e9
        for key in ("epsilon_a", "epsilon_b", "gamma_a", "gamma_b"):
            name = key + "_mhz"
            value = doc.pop(key)
            doc[name] = None if value is None else value / MHZ
        return doc

    @classmethod
    def from_config(cls, doc: dict) -> "CircuitParams":
        doc = dict(doc)
        if "tau_ns" in doc:
            doc["tau"] = float(doc.pop("tau_ns")) * 1e-9
        for key in ("epsilon_a", "epsilon_b", "gamma_a", "gamma_b"):
            if key + "_mhz" in doc:
                value = doc.pop(key + "_mhz")
                doc[key] = None if value is None else float(value) * MHZ
        known = cls.__dataclass_fields__
        unknown = set(doc) - set(known)
        if unknown:
            raise InvalidParameter(f"unknown circuit parameters: {sorted(unknown)}")
        return cls(**doc)

    @classmethod
    def load(cls, path) -> "CircuitParams":
        with open(path) as fh:
            return cls.from_config(json.load(fh))


def boundary_modes(n: int, k_total: int) -> np.ndarray:
    """Boolean mask over temporal indices whose neighbourhood wraps the window."""
    k = np.arange(k_total)
    return (k < n + 1) | (k > k_total - n - 2)


def _cyclic_delay(k_total: int, delay: int) -> SymplecticTransform:
    perm = np.arange(2 * k_total)
    for k in range(k_total):
        perm[mode_index("B", k)] = mode_index("B", (k - delay) % k_total)
    return permutation(perm)


def _bs_layer(k_total: int) -> SymplecticTransform:
    m = 2 * k_total
    s = np.eye(2 * m)
    for k in range(k_total):
        s = beam_splitter(m, mode_index("A", k), mode_index("B", k)).matrix @ s
    return SymplecticTransform.from_matrix(s)


def circuit_symplectic(n: int, k_total: int) -> SymplecticTransform:
    """Stages 2-7: rotate B, BS1, delay tau, BS2, delay N tau, BS3."""
    m = 2 * k_total
    rot = rotation_pi2(m, [mode_index("B", k) for k in range(k_total)])
    bs = _bs_layer(k_total)
    s = bs @ _cyclic_delay(k_total, n) @ bs @ _cyclic_delay(k_total, 1) @ bs @ rot
    return s


def cylinder_z(n: int, k_total: int, r_a: float, r_b: float, quadrature: str = "p") -> AdjacencyZ:
    """Adjacency matrix of the finite-window 2D H-graph state.

    ``quadrature`` picks the squeezed quadrature of the sources: ``"p"``
    follows the graphical-calculus derivation, ``"x"`` the experiment
    (amplitude squeezing), which is what ``quadrature_transfer`` describes.
    """
    if n < 1 or k_total < n + 2:
        raise InvalidParameter(f"window of {k_total} temporal modes is too small for N={n}")
    if quadrature not in BASES:
        raise InvalidParameter("quadrature must be 'x' or 'p'")
    sign = 1.0 if quadrature == "p" else -1.0
    r = np.empty(2 * k_total)
    r[0::2] = sign * r_a
    r[1::2] = sign * r_b
    z0 = squeezed_vacuum_z(2 * k_total, r, labels=mode_labels(k_total))
    return apply_symplectic(z0, circuit_symplectic(n, k_total))


def build_2d_cluster_z(params: CircuitParams, quadrature: str = "p") -> AdjacencyZ:
    """Ideal finite-window 2D H-graph for ``params`` (losses and phase noise ignored)."""
    return cylinder_z(params.n_circumference, params.n_temporal, params.r_a, params.r_b, quadrature)


def cluster_rotation_set(k_total: int, parity: int = 1) -> list:
    """Modes rotated to turn the H-graph into a cluster: both channels at every second k."""
    return [mode_index(ch, k) for k in range(parity, k_total, 2) for ch in CHANNELS]


def analytic_covariance(z: AdjacencyZ) -> np.ndarray:
    """Quadrature covariance (hbar = 1, vacuum 1/2) of the pure state ``z``."""
    try:
        np.linalg.cholesky(z.u)
    except np.linalg.LinAlgError:
        raise PhysicalityError("u is not positive definite") from None
    uinv = np.linalg.inv(z.u)
    xx = 0.5 * uinv
    xp = 0.5 * uinv @ z.v
    pp = 0.5 * (z.u + z.v @ uinv @ z.v)
    cov = np.block([[xx, xp], [xp.T, pp]])
    return 0.5 * (cov + cov.T)


# Output quadrature sign tables, offsets (0, 1, N, N+1) for inputs k, k-1, k-N, k-N-1.
# Each output row mixes one squeezed input quadrature (factor e^{-r}) and one
# anti-squeezed input quadrature (factor e^{+r}).
_QUAD_ROWS = {
    ("A", "x"): (("A", "x", (1, -1, -1, -1)), ("B", "p", (1, 1, -1, 1))),
    ("A", "p"): (("B", "x", (-1, -1, 1, -1)), ("A", "p", (1, -1, -1, -1))),
    ("B", "x"): (("A", "x", (1, -1, 1, 1)), ("B", "p", (1, 1, 1, -1))),
    ("B", "p"): (("B", "x", (-1, -1, -1, 1)), ("A", "p", (1, -1, 1, 1))),
}


@dataclass(frozen=True)
class TransferMap:
    """Sparse map from output quadratures to unsqueezed stage-0 inputs.

    ``rows[(channel, basis, k)]`` is a dict ``{(channel, basis, k_in): coeff}``.
    """

    n: int
    start: int
    stop: int
    rows: dict = field(repr=False)

    def output_keys(self) -> list:
        return sorted(self.rows, key=lambda key: (key[2], CHANNELS.index(key[0]), BASES.index(key[1])))

    def input_keys(self) -> list:
        keys = {ik for row in self.rows.values() for ik in row}
        return sorted(keys, key=lambda key: (key[2], CHANNELS.index(key[0]), BASES.index(key[1])))

    def matrix(self, outputs=None, inputs=None):
        outputs = self.output_keys() if outputs is None else outputs
        inputs = self.input_keys() if inputs is None else inputs
        col = {key: j for j, key in enumerate(inputs)}
        mat = np.zeros((len(outputs), len(inputs)))
        for i, out in enumerate(outputs):
            for key, coeff in self.rows[out].items():
                mat[i, col[key]] = coeff
        return mat, outputs, inputs

    def covariance(self, outputs=None) -> tuple:
        """Covariance of the outputs for iid variance-1/2 inputs."""
        mat, outputs, _ = self.matrix(outputs)
        return 0.5 * mat @ mat.T, outputs

    def shifted(self, offset: int) -> "TransferMap":
        rows = {
            (c, b, k + offset): {(ci, bi, ki + offset): v for (ci, bi, ki), v in row.items()}
            for (c, b, k), row in self.rows.items()
        }
        return TransferMap(self.n, self.start + offset, self.stop + offset, rows)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["out_row", "in_col", "coefficient"])
            for out in self.output_keys():
                for key, coeff in sorted(self.rows[out].items(), key=lambda kv: kv[0][2]):
                    writer.writerow(["%s%s%d" % (out[1], out[0], out[2]),
                                     "%s%s%d" % (key[1], key[0], key[2]), repr(coeff)])


def quadrature_transfer(params: CircuitParams, start: int = 0) -> TransferMap:
    """Closed-form stage-7 quadratures for every index with all inputs in the window.

    The window covers temporal indices ``start .. start + K - 1``; rows are
    emitted for ``k >= start + N + 1``.
    """
    n = params.n_circumference
    stop = start + params.n_temporal
    r = {"A": params.r_a, "B": params.r_b}
    norm = 1.0 / (2.0 * math.sqrt(2.0))
    rows = {}
    for k in range(start + n + 1, stop):
        for (ch, basis), terms in _QUAD_ROWS.items():
            row = {}
            for in_ch, in_basis, signs in terms:
                squeeze = math.exp(-r[in_ch]) if in_basis == "x" else math.exp(r[in_ch])
                for offset, sign in zip((0, 1, n, n + 1), signs):
                    row[(in_ch, in_basis, k - offset)] = sign * squeeze * norm
            rows[(ch, basis, k)] = row
    return TransferMap(n, start, stop, rows)


def z_covariance_blocks(z: AdjacencyZ, outputs) -> np.ndarray:
    """Covariance of ``z`` restricted to ``(channel, basis, k)`` output keys."""
    cov = analytic_covariance(z)
    m = z.dim
    idx = [mode_index(c, k) + (m if b == "p" else 0) for c, b, k in outputs]
    return cov[np.ix_(idx, idx)]
