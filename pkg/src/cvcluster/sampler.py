"""Monte-Carlo homodyne sampling of the temporal-mode quadratures.

Each shot propagates iid vacuum inputs through the stages of the circuit
explicitly (squeeze, phase noise, loss, rotate B, BS, delay, BS, delay, BS)
rather than through the closed-form transfer map, so the two routes check
each other.  ``N + 1`` burn-in modes are simulated before the window so that
every stored temporal mode is in steady state.

Random streams: shots are cut into fixed blocks of ``BLOCK_SHOTS``; block
``b`` draws from ``PCG64(SeedSequence(seed, spawn_key=(b,)))``.  The output
therefore does not depend on how many threads process the blocks.
"""

from __future__ import annotations

import csv
import json
import math
import os
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ._validation import check_count, check_seed
from .circuit import BASES, CHANNELS, CircuitParams
from .exceptions import DataShapeError, InvalidParameter

BLOCK_SHOTS = 1024
DATASET_MAGIC = b"CVQD"
DATASET_VERSION = 1
_HEADER = struct.Struct("<4sHQIBQdI")
SQRT_HALF = math.sqrt(0.5)


def parse_basis(basis) -> tuple:
    """``"x"``, ``"p"`` or a per-channel pair -> ``(basis_A, basis_B)``."""
    if isinstance(basis, str):
        basis = (basis, basis)
    basis = tuple(basis)
    if len(basis) != 2 or any(b not in BASES for b in basis):
        raise InvalidParameter(f"basis must be 'x', 'p' or a pair of them, got {basis!r}")
    return basis


def _basis_flags(basis) -> int:
    return sum(1 << c for c, b in enumerate(basis) if b == "p")


def _basis_from_flags(flags: int) -> tuple:
    return tuple("p" if flags >> c & 1 else "x" for c in range(2))


def electronic_variance(params: CircuitParams) -> float:
    """Per-quadrature additive detector noise variance."""
    if params.electronic_noise_db is None:
        return 0.0
    return 0.5 * 10.0 ** (params.electronic_noise_db / 10.0)


@dataclass
class QuadratureDataset:
    """Homodyne samples ``values[shot, k, channel]`` in one basis per channel."""

    values: np.ndarray
    basis: tuple
    calibration: float
    seed: int = 0
    params: CircuitParams = field(default_factory=CircuitParams)
    warmup: int = 0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.basis = parse_basis(self.basis)
        if self.values.ndim != 3 or self.values.shape[2] != 2:
            raise DataShapeError(f"values must have shape (shots, K, 2), got {self.values.shape}")
        if not self.calibration > 0:
            raise DataShapeError("calibration must be positive")
        if not np.all(np.isfinite(self.values)):
            raise DataShapeError("values must be finite")

    @property
    def shots(self) -> int:
        return self.values.shape[0]

    @property
    def n_temporal(self) -> int:
        return self.values.shape[1]

    def normalized(self) -> np.ndarray:
        """Values rescaled so that vacuum has variance exactly 1/2."""
        return self.values * math.sqrt(0.5 / self.calibration)

    def meta(self) -> dict:
        return {"params": self.params.to_config(), "warmup": self.warmup}

    def to_bytes(self) -> bytes:
        blob = json.dumps(self.meta(), sort_keys=True).encode()
        header = _HEADER.pack(DATASET_MAGIC, DATASET_VERSION, self.shots, self.n_temporal,
                              _basis_flags(self.basis), int(self.seed), float(self.calibration), len(blob))
        return header + blob + self.values.astype("<f8").tobytes()

    @classmethod
    def from_bytes(cls, raw: bytes) -> "QuadratureDataset":
        if len(raw) < _HEADER.size:
            raise DataShapeError("truncated dataset header")
        magic, version, shots, k, flags, seed, cal, blob_len = _HEADER.unpack_from(raw)
        if magic != DATASET_MAGIC:
            raise DataShapeError(f"bad magic {magic!r}")
        if version != DATASET_VERSION:
            raise DataShapeError(f"unsupported dataset version {version}")
        start = _HEADER.size + blob_len
        meta = json.loads(raw[_HEADER.size:start])
        expected = start + 8 * shots * k * 2
        if len(raw) != expected:
            raise DataShapeError(f"dataset payload is {len(raw)} bytes, header implies {expected}")
        values = np.frombuffer(raw, dtype="<f8", offset=start).reshape(shots, k, 2).copy()
        return cls(values, _basis_from_flags(flags), cal, seed,
                   CircuitParams.from_config(meta["params"]), meta.get("warmup", 0))

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> "QuadratureDataset":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["shot", "k", "channel", "basis", "value"])
            for s in range(self.shots):
                for k in range(self.n_temporal):
                    for c, ch in enumerate(CHANNELS):
                        writer.writerow([s, k, ch, self.basis[c], repr(float(self.values[s, k, c]))])

    @classmethod
    def read_csv(cls, path, calibration: float = 0.5, params: CircuitParams | None = None) -> "QuadratureDataset":
        rows = []
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                rows.append((int(row["shot"]), int(row["k"]), CHANNELS.index(row["channel"]),
                             row["basis"], float(row["value"])))
        if not rows:
            raise DataShapeError("empty dataset CSV")
        shots = 1 + max(r[0] for r in rows)
        k = 1 + max(r[1] for r in rows)
        values = np.zeros((shots, k, 2))
        basis = ["x", "x"]
        for s, kk, c, b, v in rows:
            values[s, kk, c] = v
            basis[c] = b
        return cls(values, tuple(basis), calibration, 0, params or CircuitParams())


def _shift(a: np.ndarray, d: int) -> np.ndarray:
    """Delay along the temporal axis: out[..., i] = a[..., i - d] (zeros for i < d)."""
    out = np.zeros_like(a)
    out[..., d:] = a[..., :a.shape[-1] - d]
    return out


def propagate(xa, pa, xb, pb, n: int) -> tuple:
    """Stages 2-7 applied to stage-1 quadrature arrays (temporal axis last)."""
    # rotate B by pi/2: x -> -p, p -> x
    xb, pb = -pb, xb

    def bs(x1, p1, x2, p2):
        return ((x1 - x2) * SQRT_HALF, (p1 - p2) * SQRT_HALF,
                (x1 + x2) * SQRT_HALF, (p1 + p2) * SQRT_HALF)

    xa, pa, xb, pb = bs(xa, pa, xb, pb)
    xb, pb = _shift(xb, 1), _shift(pb, 1)
    xa, pa, xb, pb = bs(xa, pa, xb, pb)
    xb, pb = _shift(xb, n), _shift(pb, n)
    return bs(xa, pa, xb, pb)


def source_quadratures(rng: np.random.Generator, params: CircuitParams, shots: int, length: int) -> list:
    """Stage-1 (x, p) arrays per channel: squeezing, phase noise, then loss."""
    out = []
    for ch in CHANNELS:
        c = params.channel(ch)
        x = rng.standard_normal((shots, length)) * (SQRT_HALF * math.exp(-c["r"]))
        p = rng.standard_normal((shots, length)) * (SQRT_HALF * math.exp(c["r"]))
        theta = np.zeros((shots, length))
        if c["sigma"] > 0:
            theta += rng.normal(0.0, c["sigma"], (shots, length))
        if c["drift"] > 0:
            theta += np.cumsum(rng.normal(0.0, c["drift"], (shots, length)), axis=1)
        if c["sigma"] > 0 or c["drift"] > 0:
            cos, sin = np.cos(theta), np.sin(theta)
            x, p = x * cos - p * sin, x * sin + p * cos
        if c["eta"] < 1:
            t, v = math.sqrt(c["eta"]), math.sqrt(1.0 - c["eta"])
            x = t * x + v * SQRT_HALF * rng.standard_normal((shots, length))
            p = t * p + v * SQRT_HALF * rng.standard_normal((shots, length))
        out.extend((x, p))
    return out


def _sample_block(params: CircuitParams, shots: int, basis: tuple, seed: int, block: int) -> np.ndarray:
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(block,))))
    n, k = params.n_circumference, params.n_temporal
    burn = n + 1
    xa, pa, xb, pb = propagate(*source_quadratures(rng, params, shots, k + burn), n)
    out = np.empty((shots, k, 2))
    out[:, :, 0] = (xa if basis[0] == "x" else pa)[:, burn:]
    out[:, :, 1] = (xb if basis[1] == "x" else pb)[:, burn:]
    e = electronic_variance(params)
    if e > 0:
        out += rng.standard_normal(out.shape) * math.sqrt(e)
    return out


def default_threads() -> int:
    return os.cpu_count() or 1


def sample_modes(params: CircuitParams, shots: int, basis="x", seed: int = 0,
                 threads: int | None = None) -> QuadratureDataset:
    """Sample ``shots`` homodyne records of all ``K`` temporal modes.

    The calibration is the exact vacuum variance under the same processing,
    1/2 plus any electronic noise.
    """
    shots = check_count(shots, "shots")
    seed = check_seed(seed)
    basis = parse_basis(basis)
    values = np.empty((shots, params.n_temporal, 2))
    starts = list(range(0, shots, BLOCK_SHOTS))

    def run(b):
        lo = starts[b]
        hi = min(lo + BLOCK_SHOTS, shots)
        values[lo:hi] = _sample_block(params, hi - lo, basis, seed, b)

    workers = max(1, min(threads or default_threads(), len(starts)))
    if workers == 1:
        for b in range(len(starts)):
            run(b)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(run, range(len(starts))))
    return QuadratureDataset(values, basis, 0.5 + electronic_variance(params), seed, params, 0)
