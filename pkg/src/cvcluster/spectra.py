"""OPO squeezing spectra, output-channel spectra, Welch estimation and fitting.

Conventions: ``S(omega)`` is the two-sided spectrum in units where vacuum is
1/2, so a quadrature variance is ``int S domega / 2 pi``.  The one-sided
per-Hz PSD of a trace is ``2 S``; in these units a vacuum trace has PSD 1, so
one-sided PSDs are already shot-noise normalised.  Fitting works on
shot-noise-normalised one-sided PSDs.
"""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import optimize, signal
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_spectra
from .circuit import CHANNELS, MHZ, CircuitParams
from .exceptions import DataShapeError, FitError, InvalidParameter

# order of the four jointly fitted spectra
COMBOS = (("A", "x"), ("A", "p"), ("B", "x"), ("B", "p"))
PARAM_NAMES = ("epsilon_a", "gamma_a", "eta_a", "sigma_a", "epsilon_b", "gamma_b", "eta_b", "sigma_b")
DEFAULT_BAND = (0.5e6, 20e6)


@dataclass(frozen=True)
class SpectrumModel:
    """Lorentzian OPO sources plus the delay-line fringe structure."""

    epsilon_a: float
    gamma_a: float
    eta_a: float
    sigma_a: float
    epsilon_b: float
    gamma_b: float
    eta_b: float
    sigma_b: float
    n: int = 12
    tau: float = 247e-9
    electronic_psd: tuple | None = field(default=None, compare=False)

    def __post_init__(self):
        for ch in ("a", "b"):
            eps, gam = getattr(self, f"epsilon_{ch}"), getattr(self, f"gamma_{ch}")
            eta, sig = getattr(self, f"eta_{ch}"), getattr(self, f"sigma_{ch}")
            if not all(math.isfinite(v) for v in (eps, gam, eta, sig)):
                raise InvalidParameter("spectrum parameters must be finite")
            if not (eps >= 0 and gam > 0 and eps < gam):
                raise InvalidParameter(f"channel {ch.upper()} needs 0 <= epsilon < gamma")
            if not 0 < eta <= 1:
                raise InvalidParameter("eta must lie in (0, 1]")
            if sig < 0:
                raise InvalidParameter("sigma must be non-negative")
        if self.electronic_psd is not None:
            freqs, psd = (np.asarray(a, float) for a in self.electronic_psd)
            if freqs.shape != psd.shape or freqs.ndim != 1 or np.any(np.diff(freqs) <= 0):
                raise InvalidParameter("electronic_psd must be (increasing frequencies, psd) of equal length")

    @classmethod
    def from_params(cls, params: CircuitParams, electronic_psd=None) -> "SpectrumModel":
        if params.epsilon_a is None or params.epsilon_b is None:
            raise InvalidParameter("circuit parameters carry no OPO rates (epsilon, gamma)")
        return cls(params.epsilon_a, params.gamma_a, params.eta_a, params.sigma_a,
                   params.epsilon_b, params.gamma_b, params.eta_b, params.sigma_b,
                   params.n_circumference, params.tau, electronic_psd)

    @classmethod
    def from_vector(cls, theta, n=12, tau=247e-9) -> "SpectrumModel":
        """From ``(eps/2pi MHz, gamma/2pi MHz, eta, sigma)`` per channel."""
        t = [float(v) for v in theta]
        return cls(t[0] * MHZ, t[1] * MHZ, t[2], t[3], t[4] * MHZ, t[5] * MHZ, t[6], t[7], n, tau)

    def vector(self) -> np.ndarray:
        return np.array([self.epsilon_a / MHZ, self.gamma_a / MHZ, self.eta_a, self.sigma_a,
                         self.epsilon_b / MHZ, self.gamma_b / MHZ, self.eta_b, self.sigma_b])

    def channel(self, channel: str) -> tuple:
        c = channel.lower()
        return (getattr(self, f"epsilon_{c}"), getattr(self, f"gamma_{c}"),
                getattr(self, f"eta_{c}"), getattr(self, f"sigma_{c}"))

    def threshold_ratio(self, channel: str) -> float:
        eps, gam, _, _ = self.channel(channel)
        return (eps / gam) ** 2

    def to_dict(self) -> dict:
        doc = asdict(self)
        doc.pop("electronic_psd")
        return doc


def _lorentzians(eps, gam, eta, omega):
    omega = np.asarray(omega, dtype=float)
    lx = 2.0 * eps * gam * eta / ((gam + eps) ** 2 + omega ** 2)
    lp = 2.0 * eps * gam * eta / ((gam - eps) ** 2 + omega ** 2)
    return lx, lp


def squeezing_spectrum(model: SpectrumModel, channel: str, quadrature: str, omega, mixed: bool = True):
    """Stage-1 spectrum of ``channel``; ``mixed`` applies the phase-noise average."""
    eps, gam, eta, sig = model.channel(channel)
    lx, lp = _lorentzians(eps, gam, eta, omega)
    sx, sp = 0.5 - lx, 0.5 + lp
    if mixed and sig > 0:
        c, s = math.cos(sig) ** 2, math.sin(sig) ** 2
        sx, sp = sx * c + sp * s, sp * c + sx * s
    if quadrature == "x":
        return sx
    if quadrature == "p":
        return sp
    raise InvalidParameter("quadrature must be 'x' or 'p'")


def fringe_weights(model: SpectrumModel, omega) -> tuple:
    """``(1/2 (1 + s), 1/2 (1 - s))`` with ``s = sin(omega N tau) sin(omega tau)``."""
    omega = np.asarray(omega, dtype=float)
    s = np.sin(omega * model.n * model.tau) * np.sin(omega * model.tau)
    return 0.5 * (1.0 + s), 0.5 * (1.0 - s)


# (output channel, quadrature) -> ((source channel, quadrature, weight sign), ...)
OUTPUT_MIX = {
    ("A", "x"): (("A", "x", +1), ("B", "p", -1)),
    ("A", "p"): (("B", "x", -1), ("A", "p", +1)),
    ("B", "x"): (("A", "x", -1), ("B", "p", +1)),
    ("B", "p"): (("B", "x", +1), ("A", "p", -1)),
}


def electronic_spectrum(model: SpectrumModel, omega) -> np.ndarray:
    """Two-sided electronic spectrum interpolated from the one-sided table."""
    omega = np.asarray(omega, dtype=float)
    if model.electronic_psd is None:
        return np.zeros_like(omega)
    freqs, psd = (np.asarray(a, float) for a in model.electronic_psd)
    return 0.5 * np.interp(np.abs(omega) / (2 * math.pi), freqs, psd)


def output_spectra(model: SpectrumModel, channel: str, quadrature: str, omega) -> np.ndarray:
    wp, wm = fringe_weights(model, omega)
    out = np.zeros_like(np.asarray(omega, dtype=float))
    for src_ch, src_q, sign in OUTPUT_MIX[(channel, quadrature)]:
        out = out + (wp if sign > 0 else wm) * squeezing_spectrum(model, src_ch, src_q, omega)
    return out + electronic_spectrum(model, omega)


def model_psd(model: SpectrumModel, freqs) -> np.ndarray:
    """Shot-noise-normalised one-sided PSDs, shape ``(4, len(freqs))`` in ``COMBOS`` order."""
    omega = 2 * math.pi * np.asarray(freqs, dtype=float)
    return np.stack([2.0 * output_spectra(model, ch, q, omega) for ch, q in COMBOS])


def model_jacobian(model: SpectrumModel, freqs) -> np.ndarray:
    """d model_psd / d theta for ``theta = model.vector()``; shape ``(4, F, 8)``."""
    omega = 2 * math.pi * np.asarray(freqs, dtype=float)
    wp, wm = fringe_weights(model, omega)
    # per source channel: d(Sx_mixed), d(Sp_mixed) with respect to its 4 parameters
    dsrc = {}
    for ch in CHANNELS:
        eps, gam, eta, sig = model.channel(ch)
        d_x = (gam + eps) ** 2 + omega ** 2
        d_p = (gam - eps) ** 2 + omega ** 2
        lx = 2 * eps * gam * eta / d_x
        lp = 2 * eps * gam * eta / d_p
        dlx = [2 * gam * eta / d_x - 4 * eps * gam * eta * (gam + eps) / d_x ** 2,
               2 * eps * eta / d_x - 4 * eps * gam * eta * (gam + eps) / d_x ** 2,
               lx / eta]
        dlp = [2 * gam * eta / d_p + 4 * eps * gam * eta * (gam - eps) / d_p ** 2,
               2 * eps * eta / d_p - 4 * eps * gam * eta * (gam - eps) / d_p ** 2,
               lp / eta]
        c, s = math.cos(sig) ** 2, math.sin(sig) ** 2
        sx, sp = 0.5 - lx, 0.5 + lp
        scale = (MHZ, MHZ, 1.0)
        dx = [(-dlx[i] * c + dlp[i] * s) * scale[i] for i in range(3)]
        dp = [(dlp[i] * c - dlx[i] * s) * scale[i] for i in range(3)]
        dx.append((sp - sx) * math.sin(2 * sig))
        dp.append((sx - sp) * math.sin(2 * sig))
        dsrc[(ch, "x")] = np.stack(dx, axis=-1)
        dsrc[(ch, "p")] = np.stack(dp, axis=-1)
    jac = np.zeros((4, omega.size, 8))
    for row, key in enumerate(COMBOS):
        for src_ch, src_q, sign in OUTPUT_MIX[key]:
            w = wp if sign > 0 else wm
            col = 0 if src_ch == "A" else 4
            jac[row, :, col:col + 4] += 2.0 * w[:, None] * dsrc[(src_ch, src_q)]
    return jac


def welch_psd(trace, sample_rate: float, segment: int, overlap: float = 0.5, window: str = "hann"):
    """One-sided Welch PSD (per Hz) of a trace or a stack of traces.

    A 2-D input is treated as independent traces whose periodograms are
    averaged.  Returns ``(freqs, psd)``.
    """
    x = np.atleast_2d(np.asarray(trace, dtype=float))
    if segment < 2 or segment > x.shape[-1]:
        raise InvalidParameter(f"segment length {segment} must be in [2, {x.shape[-1]}]")
    if not 0 <= overlap < 1:
        raise InvalidParameter("overlap must lie in [0, 1)")
    freqs, psd = signal.welch(x, fs=sample_rate, window=window, nperseg=int(segment),
                              noverlap=int(segment * overlap), detrend=False,
                              scaling="density", return_onesided=True, axis=-1)
    return freqs, psd.reshape(-1, freqs.size).mean(axis=0)


def welch_kernel(segment: int, window: str = "hann", oversample: int = 8, half_width: int = 8) -> tuple:
    """Spectral window of a Welch estimate: ``(offsets in bins, weights)``.

    The expected Welch PSD at bin ``f`` is ``sum(weights * S(f + offsets * df))``
    for a smooth true spectrum ``S``; weights sum to one.
    """
    segment = int(segment)
    if segment < 2:
        raise InvalidParameter("segment must be at least 2")
    w = signal.get_window(window, segment)
    power = np.abs(np.fft.fft(w, segment * oversample)) ** 2
    idx = np.arange(-half_width * oversample, half_width * oversample + 1)
    weights = power[idx % power.size]
    return idx / oversample, weights / weights.sum()


def _smoothed(fn, model, f, kernel):
    if kernel is None:
        return fn(model, f)
    offsets, weights = kernel
    df = f[1] - f[0] if f.size > 1 else 0.0
    grid = (f[:, None] + offsets[None, :] * df).ravel()
    vals = fn(model, grid)
    vals = vals.reshape(vals.shape[0], f.size, offsets.size, *vals.shape[2:])
    return np.einsum("afo...,o->af...", vals, weights)


def expected_welch_psd(model: SpectrumModel, freqs, segment: int, window: str = "hann") -> np.ndarray:
    """Mean of a Welch estimate of ``model_psd`` on the uniform grid ``freqs``."""
    return _smoothed(model_psd, model, np.asarray(freqs, dtype=float), welch_kernel(segment, window))


def band_mask(freqs, band=DEFAULT_BAND) -> np.ndarray:
    freqs = np.asarray(freqs)
    return (freqs >= band[0]) & (freqs <= band[1])


@dataclass
class FitResult:
    model: SpectrumModel
    covariance: np.ndarray
    ci95: np.ndarray
    cost: float
    iterations: int
    status: int = 0

    def to_dict(self) -> dict:
        theta = self.model.vector()
        return {
            "params": {name: float(v) for name, v in zip(PARAM_NAMES, theta)},
            "units": {"epsilon": "MHz (omega / 2 pi)", "gamma": "MHz (omega / 2 pi)", "eta": "1", "sigma": "rad"},
            "ci95": {name: float(v) for name, v in zip(PARAM_NAMES, self.ci95)},
            "cost": self.cost,
            "iterations": self.iterations,
            "n": self.model.n,
            "tau": self.model.tau,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)


DEFAULT_GUESS = np.array([3.0, 10.0, 0.7, 0.05, 3.0, 10.0, 0.7, 0.05])
_LOWER = np.array([1e-6, 1e-6, 1e-6, 0.0] * 2)
_UPPER = np.array([np.inf, np.inf, 1.0, math.pi / 4] * 2)


def fit_spectra(freqs, psds, initial=None, n: int = 12, tau: float = 247e-9, band=DEFAULT_BAND,
                shot_noise: float = 1.0, ftol: float = 1e-10, max_nfev: int = 500,
                segment: int | None = None, window: str = "hann") -> FitResult:
    """Joint weighted least-squares fit of the four output spectra.

    ``psds`` has shape ``(4, F)`` in ``COMBOS`` order; values are divided by
    ``shot_noise`` before fitting.  Residuals are relative, ``model/data - 1``,
    which is inverse-variance weighting for periodogram bins whose variance
    scales with PSD squared.

    When ``segment`` is given the PSDs are taken to be Welch estimates with
    that segment length and ``window``, and the model is smoothed by the
    window's spectral kernel before comparison.  Without this the leakage
    of anti-squeezed noise into the fringe minima biases ``sigma`` upward.
    The frequency grid must then be uniform.
    """
    freqs, psds = check_spectra(freqs, psds)
    kernel = None
    if segment is not None:
        steps = np.diff(freqs)
        if not np.allclose(steps, steps[0], rtol=1e-9):
            raise DataShapeError("leakage correction needs a uniform frequency grid")
        kernel = welch_kernel(segment, window)
    if not shot_noise > 0:
        raise InvalidParameter("shot_noise must be positive")
    mask = band_mask(freqs, band)
    if mask.sum() < 16:
        raise DataShapeError("fewer than 16 frequency bins inside the fit band")
    f = freqs[mask]
    data = psds[:, mask] / shot_noise
    if np.any(data <= 0):
        raise DataShapeError("PSD values must be positive inside the fit band")
    theta0 = DEFAULT_GUESS if initial is None else (
        initial.vector() if isinstance(initial, SpectrumModel) else np.asarray(initial, float))
    theta0 = np.clip(theta0, _LOWER + 1e-9, _UPPER - 1e-9)

    def build(theta):
        return SpectrumModel.from_vector(theta, n, tau)

    def resid(theta):
        try:
            model = build(theta)
        except InvalidParameter:
            return np.full(data.size, 1e3)
        return (_smoothed(model_psd, model, f, kernel) / data - 1.0).ravel()

    def jac(theta):
        try:
            model = build(theta)
        except InvalidParameter:
            return np.zeros((data.size, 8))
        return (_smoothed(model_jacobian, model, f, kernel) / data[..., None]).reshape(-1, 8)

    sol = optimize.least_squares(resid, theta0, jac=jac, bounds=(_LOWER, _UPPER), method="trf",
                                 ftol=ftol, xtol=1e-12, gtol=1e-12, max_nfev=max_nfev, x_scale="jac")
    grad_norm = float(np.linalg.norm(sol.grad))
    if sol.status <= 0:
        raise FitError(f"fit did not converge: {sol.message}", cost=float(sol.cost), gradient_norm=grad_norm)
    try:
        model = build(sol.x)
    except InvalidParameter as exc:
        raise FitError(f"fit left the physical region: {exc}", cost=float(sol.cost),
                       gradient_norm=grad_norm) from None
    pinned = [name for name, v, lo, hi in zip(PARAM_NAMES, sol.x, _LOWER, _UPPER)
              if np.isclose(v, lo, atol=1e-8) or np.isclose(v, hi, atol=1e-8)]
    if pinned:
        warnings.warn(f"parameters pinned at bounds: {pinned}", RuntimeWarning, stacklevel=2)
    dof = max(data.size - 8, 1)
    s2 = 2.0 * sol.cost / dof
    jtj = sol.jac.T @ sol.jac
    cov = s2 * np.linalg.pinv(jtj)
    ci = 1.96 * np.sqrt(np.clip(np.diag(cov), 0, None))
    return FitResult(model, cov, ci, float(sol.cost), int(sol.nfev), int(sol.status))


class SpectrumFitter(BaseEstimator):
    """Estimator wrapper around :func:`fit_spectra`.

    ``fit(freqs, psds)`` stores ``model_``, ``covariance_``, ``ci95_``,
    ``cost_`` and ``n_iter_``; ``predict(freqs)`` evaluates the fitted PSDs.
    """

    def __init__(self, n=12, tau=247e-9, band=DEFAULT_BAND, initial=None, shot_noise=1.0,
                 ftol=1e-10, max_nfev=500, segment=None, window="hann"):
        self.n = n
        self.tau = tau
        self.band = band
        self.initial = initial
        self.shot_noise = shot_noise
        self.ftol = ftol
        self.max_nfev = max_nfev
        self.segment = segment
        self.window = window

    def fit(self, X, y):
        """``X``: frequencies in Hz, ``y``: PSDs of shape ``(4, F)``."""
        res = fit_spectra(X, y, self.initial, self.n, self.tau, self.band, self.shot_noise,
                          self.ftol, self.max_nfev, self.segment, self.window)
        self.result_ = res
        self.model_ = res.model
        self.params_ = res.model.vector()
        self.covariance_ = res.covariance
        self.ci95_ = res.ci95
        self.cost_ = res.cost
        self.n_iter_ = res.iterations
        return self

    def predict(self, X):
        check_is_fitted(self, "model_")
        return model_psd(self.model_, X) * self.shot_noise


def write_psd_csv(path, freqs, psd) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["frequency_hz", "psd"])
        for f, p in zip(freqs, psd):
            writer.writerow([repr(float(f)), repr(float(p))])


def read_psd_csv(path) -> tuple:
    freqs, psd = [], []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"frequency_hz", "psd"} <= set(reader.fieldnames):
            raise DataShapeError(f"{path}: expected columns frequency_hz, psd")
        for row in reader:
            freqs.append(float(row["frequency_hz"]))
            psd.append(float(row["psd"]))
    return np.array(freqs), np.array(psd)
