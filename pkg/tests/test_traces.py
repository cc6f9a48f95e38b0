import json
import math

import numpy as np
import pytest
from sklearn.base import clone

from cvcluster.circuit import CircuitParams
from cvcluster.exceptions import DataShapeError, InvalidParameter
from cvcluster.fixtures import effective_r, load_fixture
from cvcluster.nullifiers import pooled_variance
from cvcluster.spectra import expected_welch_psd, welch_psd
from cvcluster.traces import (
    DEFAULT_KAPPA,
    ModeExtractor,
    ModeFunction,
    Trace,
    expected_file_size,
    extract_modes,
    mode_filtered_variance,
    mode_overlap,
    simulate_extracted,
    synthesize_trace,
    vacuum_calibration,
)

TAU = 247e-9
FS = 62 / TAU
VACUUM = CircuitParams(r_a=0.0, r_b=0.0)


def test_mode_function_integrals():
    f = ModeFunction(DEFAULT_KAPPA, TAU)
    i1, i2 = f.integrals()
    assert abs(i1) < 1e-10
    assert abs(i2 - 1.0) < 1e-10


def test_weights_are_antisymmetric_and_normalised():
    w = ModeFunction(DEFAULT_KAPPA, TAU).weights(FS)
    assert w.size == 62
    assert np.array_equal(w, -w[::-1])
    assert abs(w.sum()) < 1e-15
    assert np.sum(w * w) * FS == pytest.approx(1.0, rel=1e-14)
    with pytest.raises(InvalidParameter):
        ModeFunction(DEFAULT_KAPPA, TAU).weights(250e6)


def test_vacuum_extraction_is_shot_noise():
    data = simulate_extracted(VACUUM, ModeFunction(tau=TAU), 60e-6, FS, "x", seed=1, n_traces=64)
    q = data.normalized()[:, data.warmup:, :]
    assert q.var() == pytest.approx(0.5, rel=0.02)


@pytest.mark.parametrize("corner", [None, 50e6])
def test_vacuum_calibration_matches_extraction(corner):
    mode_fn = ModeFunction(tau=TAU)
    trace = synthesize_trace(VACUUM, 100e-6, FS, "x", seed=2, n_traces=32, detector_corner=corner)
    raw = extract_modes(trace, mode_fn, calibration=1.0).values
    cal = vacuum_calibration(mode_fn, FS, corner)
    assert raw.var() == pytest.approx(cal, rel=0.02)
    if corner is not None:
        assert cal < 0.5


def test_neighbour_overlap_is_small():
    data = simulate_extracted(VACUUM, ModeFunction(tau=TAU), 30e-6, FS, "x", seed=3, n_traces=2000,
                              batch=500, detector_corner=50e6)
    c2 = mode_overlap(data)
    assert np.allclose(np.diag(c2), 1.0)
    nn = np.diag(c2, 1)
    assert nn.mean() < 1e-3


def test_batched_extraction_equals_direct():
    p = CircuitParams(r_a=0.8, r_b=0.8)
    mode_fn = ModeFunction(tau=TAU)
    a = simulate_extracted(p, mode_fn, 30e-6, FS, "p", seed=7, n_traces=5, batch=2)
    b = extract_modes(synthesize_trace(p, 30e-6, FS, "p", seed=7, n_traces=5), mode_fn)
    assert np.array_equal(a.values, b.values)


def test_threads_do_not_change_traces():
    fx = load_fixture()
    ref = synthesize_trace(fx.params, 40e-6, FS, "x", seed=5, n_traces=4, threads=1).to_bytes()
    assert synthesize_trace(fx.params, 40e-6, FS, "x", seed=5, n_traces=4, threads=3).to_bytes() == ref


def test_trace_psd_matches_model():
    fx = load_fixture()
    trace = synthesize_trace(fx.params, 2e-3, FS, "x", seed=4, n_traces=2)
    f, psd = welch_psd(trace.samples[:, 0, :], FS, 4096)
    band = (f > 0.5e6) & (f < 20e6)
    model = expected_welch_psd(fx.model, f[band], 4096)[0]
    rms = np.sqrt(np.mean((psd[band] / model - 1) ** 2))
    # 2 traces x 2 ms of 4096-sample segments: about 240 averages per bin
    assert rms < 0.1


def test_flat_source_trace_matches_broadband_nullifier():
    p = CircuitParams(r_a=1.0, r_b=0.8, eta_a=0.9, eta_b=0.9)
    mode_fn = ModeFunction(tau=TAU)
    for kind, r in (("x", 1.0), ("p", 0.8)):
        data = simulate_extracted(p, mode_fn, 40e-6, FS, kind, seed=8, n_traces=200, batch=100)
        rep = pooled_variance(kind, data, 12)
        expected = mode_filtered_variance(p, mode_fn, kind, FS)
        assert expected == pytest.approx(4 * (0.9 * math.exp(-2 * r) + 0.1))
        assert abs(rep.variance - expected) < 4 * rep.stderr


def test_trace_round_trip(tmp_path):
    trace = synthesize_trace(VACUUM, 30e-6, FS, ("x", "p"), seed=3, n_traces=2, detector_corner=80e6)
    trace.save(tmp_path / "t.cvtr")
    raw = (tmp_path / "t.cvtr").read_bytes()
    meta_len = len(json.dumps(trace.meta(), sort_keys=True).encode())
    assert len(raw) == expected_file_size(2, trace.n_samples, meta_len)
    back = Trace.load(tmp_path / "t.cvtr")
    assert back.to_bytes() == raw
    assert back.detector_corner == 80e6 and back.basis == ("x", "p")
    with pytest.raises(DataShapeError):
        Trace.from_bytes(raw[:-1])


def test_synthesis_validation():
    fx = load_fixture()
    with pytest.raises(InvalidParameter):
        synthesize_trace(fx.params, 1e-3, 50e6, "x")
    with pytest.raises(InvalidParameter):
        synthesize_trace(fx.params, 10 * TAU, FS, "x")


def test_non_integer_sample_rate_path():
    data = simulate_extracted(VACUUM, ModeFunction(tau=TAU), 60e-6, 250e6, "x", seed=1, n_traces=64)
    assert data.n_temporal == int(60e-6 / TAU)
    assert data.normalized()[:, data.warmup:].var() == pytest.approx(0.5, rel=0.03)


def test_mode_extractor_estimator():
    est = ModeExtractor(tau=TAU)
    assert clone(est).get_params() == est.get_params()
    vac = synthesize_trace(VACUUM, 100e-6, FS, "x", seed=1, n_traces=16)
    est.fit(vac)
    assert est.calibration_ == pytest.approx(0.5, rel=0.03)
    out = est.transform(synthesize_trace(CircuitParams(r_a=1.0, r_b=1.0), 100e-6, FS, "x", seed=2, n_traces=16))
    assert out.calibration == est.calibration_
    assert out.n_temporal == est.n_modes_


def test_effective_r_of_fixture():
    fx = load_fixture()
    r_a = effective_r(fx.model, "A", fx.mode_function, fx.sample_rate)
    r_b = effective_r(fx.model, "B", fx.mode_function, fx.sample_rate)
    assert 1.0 < r_a < r_b < 1.3
