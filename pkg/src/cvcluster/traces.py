"""Continuous homodyne traces and temporal-mode extraction.

Traces are synthesised in the frequency domain.  For an x-basis record the
two independent stage-1 processes are ``x_A`` and ``p_B`` (for p-basis,
``p_A`` and ``x_B``), each white noise shaped by its phase-averaged OPO
spectrum.  The delay lines act as exact phases ``exp(-i omega d tau)`` and
the beam-splitter network as the fixed sign patterns of the transfer map,
so the synthesis is circular in time.

Sample ``i`` represents time ``(i + 1/2) / sample_rate`` and temporal mode
``k`` occupies ``[k tau, (k + 1) tau)``.
"""

from __future__ import annotations

import json
import math
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import fft as sp_fft
from scipy import integrate, special
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_count, check_positive, check_seed
from .circuit import _QUAD_ROWS, CHANNELS, CircuitParams
from .exceptions import DataShapeError, InvalidParameter
from .sampler import QuadratureDataset, _basis_flags, _basis_from_flags, default_threads, parse_basis
from .spectra import SpectrumModel, squeezing_spectrum

TRACE_MAGIC = b"CVTR"
TRACE_VERSION = 1
_HEADER = struct.Struct("<4sHIQBQdI")
DEFAULT_KAPPA = 2 * math.pi * 2.7e6


@dataclass(frozen=True)
class ModeFunction:
    """Odd temporal mode ``f(t) = N t exp(-kappa^2 t^2 / 2)`` on ``|t| < tau/2``."""

    kappa: float = DEFAULT_KAPPA
    tau: float = 247e-9

    def __post_init__(self):
        if not (self.kappa > 0 and self.tau > 0):
            raise InvalidParameter("kappa and tau must be positive")

    @property
    def normalization(self) -> float:
        """``N`` such that the continuous ``int f^2 dt = 1``."""
        a, half = self.kappa ** 2, self.tau / 2
        # int_{-T}^{T} t^2 exp(-a t^2) dt
        val = math.sqrt(math.pi) * special.erf(math.sqrt(a) * half) / (2 * a ** 1.5) \
            - half * math.exp(-a * half * half) / a
        return 1.0 / math.sqrt(val)

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        inside = np.abs(t) < self.tau / 2
        return np.where(inside, self.normalization * t * np.exp(-0.5 * (self.kappa * t) ** 2), 0.0)

    def integrals(self) -> tuple:
        """Numerical ``(int f dt, int f^2 dt)``."""
        half = self.tau / 2
        opts = dict(epsabs=1e-14, epsrel=1e-13, limit=200)
        i1 = integrate.quad(self, -half, half, **opts)[0]
        i2 = integrate.quad(lambda t: self(t) ** 2, -half, half, **opts)[0]
        return i1, i2

    def weights(self, sample_rate: float) -> np.ndarray:
        """Integration weights ``w_j`` over the samples of one window.

        Requires an integer number of samples per ``tau``.  Samples sit at
        window-relative times ``(j + 1/2)/fs - tau/2``, symmetric about the
        centre, so the weights are exactly antisymmetric and DC cancels.
        They are normalised so that ``sum w_j^2 * fs = 1``, the discrete
        counterpart of ``int f^2 dt = 1``.
        """
        m = self.samples_per_mode(sample_rate)
        if m is None:
            raise InvalidParameter("sample_rate * tau must be an integer for fixed-window weights")
        j = np.arange(m // 2)
        t = (j + 0.5 - m / 2) / sample_rate
        half = self(t)
        w = np.concatenate([half, np.zeros(m % 2), -half[::-1]])
        return w / math.sqrt(np.sum(w * w) * sample_rate)

    def samples_per_mode(self, sample_rate: float):
        m = sample_rate * self.tau
        return int(round(m)) if abs(m - round(m)) < 1e-9 * max(1.0, m) else None

    def spectrum(self, sample_rate: float, length: int | None = None) -> tuple:
        """``(omega, |W(omega)|^2)`` on an FFT grid, for spectral averaging."""
        w = self.weights(sample_rate)
        length = length or 1 << int(math.ceil(math.log2(64 * w.size)))
        power = np.abs(np.fft.fft(w, length)) ** 2
        return 2 * math.pi * sample_rate * np.fft.fftfreq(length), power


def detector_response(omega, corner_hz):
    """Single-pole low-pass ``1 / (1 + i omega / omega_c)``."""
    omega = np.asarray(omega, dtype=float)
    if corner_hz is None:
        return np.ones_like(omega, dtype=complex)
    return 1.0 / (1.0 + 1j * omega / (2 * math.pi * corner_hz))


def source_spectra(params: CircuitParams, model: SpectrumModel | None, channel: str, quadrature: str, omega):
    """Stage-1 two-sided spectrum of one source process.

    With OPO rates present the Lorentzian model is used; otherwise a flat
    spectrum with the broadband squeezing ``r`` of ``params``.
    """
    if model is not None:
        return squeezing_spectrum(model, channel, quadrature, omega)
    c = params.channel(channel)
    sq = math.exp(-2 * c["r"]) if quadrature == "x" else math.exp(2 * c["r"])
    anti = 1.0 / sq
    cos2 = math.cos(c["sigma"]) ** 2
    mixed = sq * cos2 + anti * (1 - cos2)
    return np.full(np.shape(omega), 0.5 * (c["eta"] * mixed + 1 - c["eta"]))


def _transfer_filters(params: CircuitParams, omega) -> dict:
    """Frequency responses from stage-1 processes to the outputs."""
    n, tau = params.n_circumference, params.tau
    norm = 1.0 / (2.0 * math.sqrt(2.0))
    phases = [np.exp(-1j * omega * d * tau) for d in (0, 1, n, n + 1)]
    out = {}
    for (ch, basis), terms in _QUAD_ROWS.items():
        for in_ch, in_basis, signs in terms:
            out[(ch, basis, in_ch, in_basis)] = norm * sum(s * ph for s, ph in zip(signs, phases))
    return out


@dataclass
class Trace:
    """Stack of homodyne traces ``samples[trace, channel, sample]``."""

    samples: np.ndarray
    sample_rate: float
    basis: tuple
    seed: int = 0
    params: CircuitParams = field(default_factory=CircuitParams)
    detector_corner: float | None = None

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim == 2:
            self.samples = self.samples[None]
        if self.samples.ndim != 3 or self.samples.shape[1] != 2:
            raise DataShapeError(f"samples must have shape (traces, 2, n), got {self.samples.shape}")
        self.basis = parse_basis(self.basis)
        if not self.sample_rate > 0:
            raise InvalidParameter("sample_rate must be positive")

    @property
    def n_traces(self) -> int:
        return self.samples.shape[0]

    @property
    def n_samples(self) -> int:
        return self.samples.shape[2]

    @property
    def duration(self) -> float:
        return self.n_samples / self.sample_rate

    def meta(self) -> dict:
        return {"params": self.params.to_config(), "detector_corner_hz": self.detector_corner}

    def to_bytes(self) -> bytes:
        blob = json.dumps(self.meta(), sort_keys=True).encode()
        header = _HEADER.pack(TRACE_MAGIC, TRACE_VERSION, self.n_traces, self.n_samples,
                              _basis_flags(self.basis), int(self.seed), float(self.sample_rate), len(blob))
        return header + blob + self.samples.astype("<f8").tobytes()

    @classmethod
    def from_bytes(cls, raw: bytes) -> "Trace":
        if len(raw) < _HEADER.size:
            raise DataShapeError("truncated trace header")
        magic, version, n_traces, n_samples, flags, seed, rate, blob_len = _HEADER.unpack_from(raw)
        if magic != TRACE_MAGIC:
            raise DataShapeError(f"bad magic {magic!r}")
        if version != TRACE_VERSION:
            raise DataShapeError(f"unsupported trace version {version}")
        start = _HEADER.size + blob_len
        meta = json.loads(raw[_HEADER.size:start])
        expected = start + 8 * n_traces * 2 * n_samples
        if len(raw) != expected:
            raise DataShapeError(f"trace payload is {len(raw)} bytes, header implies {expected}")
        samples = np.frombuffer(raw, dtype="<f8", offset=start).reshape(n_traces, 2, n_samples).copy()
        return cls(samples, rate, _basis_from_flags(flags), seed,
                   CircuitParams.from_config(meta["params"]), meta.get("detector_corner_hz"))

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> "Trace":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


def expected_file_size(n_traces: int, n_samples: int, meta_len: int) -> int:
    return _HEADER.size + meta_len + 8 * n_traces * 2 * n_samples


def _synth_one(params, model, n_samples, sample_rate, basis, seed, index, corner):
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(index,))))
    # synthesise on a fast FFT length and keep the first n_samples
    n_fft = sp_fft.next_fast_len(n_samples, real=True)
    omega = 2 * math.pi * np.fft.rfftfreq(n_fft, 1.0 / sample_rate)
    filters = _transfer_filters(params, omega)
    det = detector_response(omega, corner)
    out = np.empty((2, n_samples))
    # x-basis reads x_A and p_B, p-basis reads p_A and x_B
    needed = {}
    for c, ch in enumerate(CHANNELS):
        for in_ch, in_basis, _ in _QUAD_ROWS[(ch, basis[c])]:
            needed[(in_ch, in_basis)] = None
    for key in sorted(needed, key=lambda k: (CHANNELS.index(k[0]), k[1])):
        white = sp_fft.rfft(rng.standard_normal(n_fft))
        shape = np.sqrt(source_spectra(params, model, key[0], key[1], omega) * sample_rate)
        needed[key] = white * shape
    for c, ch in enumerate(CHANNELS):
        spec = 0
        for in_ch, in_basis, _ in _QUAD_ROWS[(ch, basis[c])]:
            spec = spec + filters[(ch, basis[c], in_ch, in_basis)] * needed[(in_ch, in_basis)]
        out[c] = sp_fft.irfft(spec * det, n_fft)[:n_samples]
    e = params.electronic_noise_db
    if e is not None:
        out += rng.standard_normal(out.shape) * math.sqrt(0.5 * 10 ** (e / 10) * sample_rate)
    return out


def synthesize_trace(params: CircuitParams, duration: float, sample_rate: float, basis="x", seed: int = 0,
                     n_traces: int = 1, detector_corner: float | None = None,
                     threads: int | None = None, first_index: int = 0) -> Trace:
    """Synthesise ``n_traces`` independent records of both output channels.

    The one-sided PSD of each output matches the analytic output spectra.
    Trace ``i`` draws from ``PCG64(SeedSequence(seed, spawn_key=(first_index + i,)))``,
    so long runs can be produced in batches.  Random-walk phase drift is a
    sampler option and is not applied here.
    """
    model = SpectrumModel.from_params(params) if params.epsilon_a is not None else None
    max_gamma = 0.0 if model is None else max(model.gamma_a, model.gamma_b) / (2 * math.pi)
    if sample_rate < 10 * max_gamma:
        raise InvalidParameter(f"sample_rate {sample_rate:.3g} Hz is below 10 x gamma/2pi = {10 * max_gamma:.3g} Hz")
    if duration < 100 * params.tau:
        raise InvalidParameter("duration must cover at least 100 tau")
    n_traces = check_count(n_traces, "n_traces")
    seed = check_seed(seed)
    sample_rate = check_positive(sample_rate, "sample_rate")
    basis = parse_basis(basis)
    n_samples = int(round(duration * sample_rate))
    samples = np.empty((int(n_traces), 2, n_samples))

    def run(i):
        samples[i] = _synth_one(params, model, n_samples, sample_rate, basis, seed, first_index + i,
                                detector_corner)

    workers = max(1, min(threads or default_threads(), int(n_traces)))
    if workers == 1:
        for i in range(int(n_traces)):
            run(i)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(run, range(int(n_traces))))
    return Trace(samples, sample_rate, basis, int(seed), params, detector_corner)


def simulate_extracted(params: CircuitParams, mode_fn: ModeFunction, duration: float, sample_rate: float,
                       basis="x", seed: int = 0, n_traces: int = 1, batch: int = 16,
                       detector_corner: float | None = None, threads: int | None = None) -> QuadratureDataset:
    """Synthesise and extract in batches so memory stays bounded.

    Equal to ``extract_modes(synthesize_trace(...), mode_fn)`` for the same
    arguments, whatever the batch size.
    """
    n_traces = check_count(n_traces, "n_traces")
    parts = []
    for start in range(0, n_traces, batch):
        count = min(batch, n_traces - start)
        trace = synthesize_trace(params, duration, sample_rate, basis, seed, count, detector_corner,
                                 threads, first_index=start)
        parts.append(extract_modes(trace, mode_fn))
    first = parts[0]
    values = np.concatenate([p.values for p in parts]) if len(parts) > 1 else first.values
    return QuadratureDataset(values, first.basis, first.calibration, first.seed, first.params, first.warmup)


def _window_weights(mode_fn: ModeFunction, sample_rate: float, n_samples: int):
    """Per-mode ``(index arrays, weights)`` for any sample rate."""
    m = mode_fn.samples_per_mode(sample_rate)
    n_modes = int(math.floor(n_samples / (sample_rate * mode_fn.tau) + 1e-9))
    if m is not None:
        return m, n_modes, mode_fn.weights(sample_rate)
    t = (np.arange(n_samples) + 0.5) / sample_rate
    blocks = []
    for k in range(n_modes):
        lo = int(math.ceil(k * mode_fn.tau * sample_rate - 0.5))
        hi = int(math.floor((k + 1) * mode_fn.tau * sample_rate - 0.5))
        idx = np.arange(max(lo, 0), min(hi + 1, n_samples))
        w = mode_fn(t[idx] - (k + 0.5) * mode_fn.tau)
        blocks.append((idx, w / math.sqrt(np.sum(w * w) * sample_rate)))
    return None, n_modes, blocks


def vacuum_calibration(mode_fn: ModeFunction, sample_rate: float, detector_corner=None,
                       electronic_noise_db=None) -> float:
    """Exact extracted vacuum variance under the same processing."""
    omega, power = mode_fn.spectrum(sample_rate)
    gain = float(np.sum(power * np.abs(detector_response(omega, detector_corner)) ** 2) / np.sum(power))
    extra = 0.0 if electronic_noise_db is None else 10 ** (electronic_noise_db / 10)
    return 0.5 * (gain + extra)


def extract_modes(trace: Trace, mode_fn: ModeFunction, calibration: float | None = None,
                  warmup: int | None = None) -> QuadratureDataset:
    """Integrate each temporal mode against its window; traces become shots.

    ``calibration`` defaults to the exact vacuum variance of the same
    processing chain (detector filter and electronic noise included).
    """
    m, n_modes, weights = _window_weights(mode_fn, trace.sample_rate, trace.n_samples)
    if n_modes < 1:
        raise DataShapeError("trace shorter than one temporal mode")
    x = trace.samples
    if m is not None:
        blocks = x[:, :, :n_modes * m].reshape(x.shape[0], 2, n_modes, m)
        values = blocks @ weights
    else:
        values = np.stack([x[:, :, idx] @ w for idx, w in weights], axis=-1)
    values = np.ascontiguousarray(values.transpose(0, 2, 1))
    if calibration is None:
        if m is None:
            calibration = 0.5
        else:
            calibration = vacuum_calibration(mode_fn, trace.sample_rate, trace.detector_corner,
                                             trace.params.electronic_noise_db)
    params = trace.params
    if n_modes != params.n_temporal and n_modes >= 2 * params.n_circumference + 2:
        params = params.replace(n_temporal=n_modes)
    if warmup is None:
        warmup = trace.params.n_circumference + 1
    return QuadratureDataset(values, trace.basis, calibration, trace.seed, params, warmup)


def mode_overlap(data: QuadratureDataset, channel: int = 0) -> np.ndarray:
    """Squared normalised correlations ``C_kl^2 = (<q_k q_l> / <q_k^2>)^2``."""
    q = data.values[:, :, channel]
    q = q - q.mean(axis=0)
    cov = q.T @ q / q.shape[0]
    c = cov / np.diag(cov)[:, None]
    return c ** 2


def mode_filtered_variance(params: CircuitParams, mode_fn: ModeFunction, kind: str, sample_rate: float,
                           detector_corner=None) -> float:
    """Expected nullifier variance (shot reference 4) of the trace path.

    The x-nullifier reduces to the mode-filtered x quadrature of source A,
    the p-nullifier to that of source B, each normalised to equally
    filtered vacuum.
    """
    model = SpectrumModel.from_params(params) if params.epsilon_a is not None else None
    omega, power = mode_fn.spectrum(sample_rate)
    det = np.abs(detector_response(omega, detector_corner)) ** 2
    src = source_spectra(params, model, "A" if kind == "x" else "B", "x", omega)
    e = 0.0 if params.electronic_noise_db is None else 10 ** (params.electronic_noise_db / 10)
    signal = np.sum(power * det * src) / np.sum(power)
    gain = np.sum(power * det) / np.sum(power)
    return 4.0 * (2 * signal + e) / (gain + e)


class ModeExtractor(TransformerMixin, BaseEstimator):
    """Temporal-mode extraction with a vacuum calibration learned in ``fit``.

    ``fit`` takes a vacuum (shot-noise) ``Trace`` and stores the pooled
    extracted variance as ``calibration_``; ``transform`` maps traces to
    ``QuadratureDataset`` normalised by it.
    """

    def __init__(self, kappa=DEFAULT_KAPPA, tau=247e-9, warmup=None):
        self.kappa = kappa
        self.tau = tau
        self.warmup = warmup

    def _mode_fn(self):
        return ModeFunction(self.kappa, self.tau)

    def fit(self, X, y=None):
        data = extract_modes(X, self._mode_fn(), calibration=1.0, warmup=0)
        self.calibration_ = float(np.var(data.values, ddof=1))
        self.n_modes_ = data.n_temporal
        return self

    def transform(self, X):
        check_is_fitted(self, "calibration_")
        return extract_modes(X, self._mode_fn(), calibration=self.calibration_, warmup=self.warmup)
