"""Experimental operating point shipped with the package."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from importlib import resources

import numpy as np

from .circuit import CircuitParams
from .spectra import SpectrumModel, squeezing_spectrum
from .traces import ModeFunction


@dataclass(frozen=True)
class Fixture:
    params: CircuitParams
    mode_function: ModeFunction
    sample_rate: float
    reported_db: dict

    @property
    def model(self) -> SpectrumModel:
        return SpectrumModel.from_params(self.params)


def effective_r(model: SpectrumModel, channel: str, mode_fn: ModeFunction, sample_rate: float) -> float:
    """Broadband squeezing equivalent to the lossless, noiseless mode-filtered spectrum.

    Loss acts on the Lorentzian spectrum exactly like a beam splitter on a
    broadband source, so ``r`` is taken from the ``eta = 1, sigma = 0``
    spectrum and loss and phase noise are applied on top by the sampler.
    """
    eps, gam, _, _ = model.channel(channel)
    lossless = SpectrumModel(eps, gam, 1.0, 0.0, eps, gam, 1.0, 0.0, model.n, model.tau)
    omega, power = mode_fn.spectrum(sample_rate)
    ratio = np.sum(power * squeezing_spectrum(lossless, "A", "x", omega)) / (0.5 * np.sum(power))
    return -0.5 * math.log(ratio)


def load_fixture(name: str = "experiment", n_temporal: int | None = None) -> Fixture:
    if name != "experiment":
        raise KeyError(f"unknown fixture {name!r}")
    doc = json.loads(resources.files("cvcluster").joinpath("data", "experiment_fixture.json").read_text())
    cfg = dict(doc["circuit"])
    for ch in ("a", "b"):
        cfg[f"sigma_{ch}"] = math.radians(cfg.pop(f"sigma_{ch}_deg"))
    if n_temporal is not None:
        cfg["n_temporal"] = n_temporal
    params = CircuitParams.from_config(cfg)
    mode_fn = ModeFunction(2 * math.pi * doc["kappa_mhz"] * 1e6, params.tau)
    rate = doc["samples_per_mode"] / params.tau
    model = SpectrumModel.from_params(params)
    params = params.replace(r_a=effective_r(model, "A", mode_fn, rate), r_b=effective_r(model, "B", mode_fn, rate))
    return Fixture(params, mode_fn, rate, doc["reported_db"])
