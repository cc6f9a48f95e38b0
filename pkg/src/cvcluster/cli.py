"""Command-line entry point: ``cvcluster <command> [options]``.

Exit codes: 0 success (criterion met), 1 criterion failed, 2 invalid input,
3 numerical failure.  Options may also come from ``--config`` (a JSON
object whose keys are option names, e.g. ``"shots"`` or ``"bound_db"``, plus
circuit fields such as ``"r_a"`` or ``"tau_ns"``); flags given on the
command line win.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .circuit import CircuitParams, build_2d_cluster_z, cluster_rotation_set
from .exceptions import (
    BipartitenessError,
    DataShapeError,
    FitError,
    InvalidParameter,
    NumericalSingularity,
    PhysicalityError,
    WitnessIntegrityError,
)
from .graph import IdealGraph, h_graph_to_cluster, is_bipartite, write_edge_csv
from .inseparability import full_audit
from .unfold import ideal_cluster_graph, unfold
from .nullifiers import (
    SHOT_NOISE,
    VarianceReport,
    analytic_variance,
    empirical_variance,
    from_db,
    make_nullifier,
    nullifier_indices,
    write_reports_csv,
)

log = logging.getLogger("cvcluster")

EXIT_OK, EXIT_CRITERION, EXIT_INPUT, EXIT_NUMERIC = 0, 1, 2, 3

CIRCUIT_FIELDS = set(CircuitParams.__dataclass_fields__) | {
    "tau_ns", "epsilon_a_mhz", "epsilon_b_mhz", "gamma_a_mhz", "gamma_b_mhz"}

DEFAULTS = {
    "seed": 0,
    "threads": None,
    "out": ".",
    "n": 12,
    "k": 26,
    "r": 1.0,
    "method": "analytic",
    "shots": 10000,
    "basis": "x",
    "duration": 1e-3,
    "sample_rate": None,
    "n_traces": 1,
    "segment": 16384,
    "overlap": 0.5,
}


class CriterionFailed(Exception):
    pass


def _circuit_args(p):
    g = p.add_argument_group("circuit")
    g.add_argument("--n", type=int, help="circumference N (even, default 12)")
    g.add_argument("--k", type=int, help="temporal modes in the window (default 26)")
    g.add_argument("--r", type=float, help="squeezing r for both sources (default 1)")
    g.add_argument("--r-a", type=float, help="squeezing of source A")
    g.add_argument("--r-b", type=float, help="squeezing of source B")
    g.add_argument("--eta", type=float, help="efficiency of both sources")
    g.add_argument("--sigma-deg", type=float, help="phase noise of both sources in degrees")
    g.add_argument("--drift-deg", type=float, help="random-walk phase step per mode, source A, degrees")
    g.add_argument("--electronic-db", type=float, help="electronic noise clearance in dB (e.g. -20)")
    g.add_argument("--fixture", choices=["experiment"], help="use the shipped experimental operating point")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cvcluster",
        description="Build, sample and verify temporally multiplexed 2D cluster states.",
        epilog="Exit codes: 0 success, 1 criterion failed, 2 invalid input, 3 numerical failure.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON file with option and circuit values")
    common.add_argument("--seed", type=int, help="RNG seed (unsigned 64-bit, default 0)")
    common.add_argument("--threads", type=int, help="worker threads (default: all cores)")
    common.add_argument("--out", type=Path, help="output directory (default .)")
    common.add_argument("--verbose", "-v", action="count", default=0, help="more logging")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    p = sub.add_parser("graph", parents=[common], help="adjacency matrix and cluster graph")
    _circuit_args(p)
    p.add_argument("--quadrature", choices=["p", "x"], default="p", help="squeezed source quadrature")
    p.add_argument("--unfold", action="store_true", help="also write the four unfolding stages")

    p = sub.add_parser("nullifiers", parents=[common], help="nullifier variance report")
    _circuit_args(p)
    p.add_argument("--method", choices=["analytic", "sample", "trace"], help="variance source")
    p.add_argument("--shots", type=int, help="shots (sample) or traces (trace)")
    p.add_argument("--duration", type=float, help="trace duration in seconds (trace method)")
    p.add_argument("--bound-db", type=float, help="exit 1 unless every row is strictly below this")

    p = sub.add_parser("audit", parents=[common], help="127-bipartition inseparability audit")
    _circuit_args(p)
    p.add_argument("--db", type=float, help="common nullifier variance in dB")
    p.add_argument("--x-db", type=float, help="x-nullifier variance in dB")
    p.add_argument("--p-db", type=float, help="p-nullifier variance in dB")
    p.add_argument("--datasets", type=Path, nargs=2, metavar=("X_FILE", "P_FILE"),
                   help="x- and p-basis datasets for an empirical audit")

    p = sub.add_parser("sample", parents=[common], help="Monte-Carlo homodyne dataset")
    _circuit_args(p)
    p.add_argument("--shots", type=int, help="number of shots (default 10000)")
    p.add_argument("--basis", choices=["x", "p"], help="measurement basis of both channels")
    p.add_argument("--csv", action="store_true", help="also write a CSV copy")

    p = sub.add_parser("trace", parents=[common], help="synthesise homodyne traces")
    _circuit_args(p)
    p.add_argument("--duration", type=float, help="seconds per trace (default 1e-3)")
    p.add_argument("--sample-rate", type=float, help="Hz (default 62 samples per tau)")
    p.add_argument("--basis", choices=["x", "p"], help="measurement basis of both channels")
    p.add_argument("--n-traces", type=int, help="independent traces (default 1)")
    p.add_argument("--detector-corner", type=float, help="single-pole detector corner in Hz")
    p.add_argument("--first-index", type=int, help="index of the first trace stream, for batched runs")

    p = sub.add_parser("spectrum", parents=[common], help="Welch PSDs of trace files")
    p.add_argument("traces", type=Path, nargs="+",
                   help="trace files; files of the same basis are averaged")
    p.add_argument("--segment", type=int, help="Welch segment length (default 16384)")
    p.add_argument("--overlap", type=float, help="segment overlap fraction (default 0.5)")

    p = sub.add_parser("fit", parents=[common], help="fit OPO parameters to four PSD files")
    p.add_argument("psds", type=Path, nargs="*",
                   help="psd_A_x.csv psd_A_p.csv psd_B_x.csv psd_B_p.csv (default: from --out)")
    p.add_argument("--n", type=int, help="circumference N (default 12)")
    p.add_argument("--tau-ns", type=float, help="short delay in ns (default 247)")
    p.add_argument("--shot-noise", type=float, help="PSD level of vacuum (default 1)")
    p.add_argument("--welch-segment", type=int,
                   help="Welch segment of the PSDs for leakage correction; 0 disables "
                        "(default: read from spectrum_run.json next to the PSDs)")
    return parser


def _option_names(parser) -> set:
    names = set(DEFAULTS)
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            for sub in action.choices.values():
                names |= {a.dest for a in sub._actions}
    return names - {"help", "config"}


def _resolve(args, parser) -> dict:
    """Merge config file and flags; flags win."""
    cfg = {}
    if getattr(args, "config", None):
        with open(args.config) as fh:
            cfg = json.load(fh)
        if not isinstance(cfg, dict):
            raise InvalidParameter("config must be a JSON object")
        unknown = set(cfg) - CIRCUIT_FIELDS - _option_names(parser)
        if unknown:
            raise InvalidParameter(f"unknown config keys: {sorted(unknown)}")
    opts = dict(DEFAULTS)
    opts.update({k: v for k, v in cfg.items() if k not in CIRCUIT_FIELDS})
    opts.update({k: v for k, v in vars(args).items() if v is not None and k != "config"})
    opts["circuit_config"] = {k: v for k, v in cfg.items() if k in CIRCUIT_FIELDS}
    return opts


def circuit_from_options(opts: dict, spectral: bool = False):
    """``CircuitParams`` (and fixture, if any) from merged options."""
    fixture = None
    if opts.get("fixture") == "experiment":
        from .fixtures import load_fixture

        k = opts.get("k") if opts.get("k") != DEFAULTS["k"] else None
        fixture = load_fixture("experiment", n_temporal=k)
        params = fixture.params
    else:
        doc = {"n_circumference": opts["n"], "n_temporal": opts["k"], "r_a": opts["r"], "r_b": opts["r"]}
        doc.update(opts["circuit_config"])
        params = CircuitParams.from_config(doc)
    changes = {}
    for key, field_a, field_b in (("r", "r_a", "r_b"), ("eta", "eta_a", "eta_b")):
        if key != "r" and opts.get(key) is not None:
            changes[field_a] = changes[field_b] = opts[key]
    if opts.get("sigma_deg") is not None:
        changes["sigma_a"] = changes["sigma_b"] = math.radians(opts["sigma_deg"])
    for key in ("r_a", "r_b"):
        if opts.get(key) is not None:
            changes[key] = opts[key]
    if opts.get("drift_deg") is not None:
        changes["drift_a"] = math.radians(opts["drift_deg"])
    if opts.get("electronic_db") is not None:
        changes["electronic_noise_db"] = opts["electronic_db"]
    if changes:
        params = params.replace(**changes)
    return params, fixture


def _write_manifest(out: Path, command: str, opts: dict, params, files: list) -> None:
    doc = {
        "command": command,
        "version": __version__,
        "seed": opts.get("seed"),
        "options": {k: (str(v) if isinstance(v, Path) else v) for k, v in sorted(opts.items())
                    if k not in ("circuit_config", "verbose")},
        "circuit": params.to_config() if params is not None else None,
        "files": files,
    }
    with open(out / f"{command}_run.json", "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True, default=str)


def cmd_graph(opts: dict) -> int:
    params, _ = circuit_from_options(opts)
    out = opts["out"]
    z = build_2d_cluster_z(params, opts.get("quadrature", "p"))
    coloring = is_bipartite(z.u)
    if not coloring.bipartite:
        raise BipartitenessError(f"H-graph has an odd cycle {coloring.odd_cycle}")
    cluster = h_graph_to_cluster(z, cluster_rotation_set(params.n_temporal))
    graph = ideal_cluster_graph(params.n_circumference, params.n_temporal)
    files = ["z.json", "cluster_z.json", "cluster_graph.json", "cluster_edges.csv"]
    (out / "z.json").write_text(z.to_json())
    (out / "cluster_z.json").write_text(cluster.to_json())
    (out / "cluster_graph.json").write_text(graph.to_json())
    write_edge_csv(graph, out / "cluster_edges.csv")
    if opts.get("unfold"):
        stages = unfold(graph, params.n_circumference)
        for name, g in stages.items():
            (out / f"unfold_{name}.json").write_text(g.to_json())
            write_edge_csv(g, out / f"unfold_{name}_edges.csv")
            files += [f"unfold_{name}.json", f"unfold_{name}_edges.csv"]
            log.info("stage %s: %d nodes", name, g.dim)
    _write_manifest(out, "graph", opts, params, files)
    print(f"graph: {z.dim} modes, {len(files)} files written to {out}")
    return EXIT_OK


def _reports(opts, params, fixture) -> list:
    n = params.n_circumference
    method = opts["method"]
    reports = []
    if method == "analytic":
        ks = range(0, params.n_temporal - n - 1)
        for kind in ("x", "p"):
            if fixture is not None:
                from .traces import mode_filtered_variance

                v = mode_filtered_variance(params, fixture.mode_function, kind, fixture.sample_rate)
                reports += [VarianceReport(kind, k, v) for k in ks]
            else:
                reports += [analytic_variance(make_nullifier(kind, k, n), params) for k in ks]
        return reports
    for i, kind in enumerate(("x", "p")):
        seed = opts["seed"] + i
        if method == "sample":
            from .sampler import sample_modes

            data = sample_modes(params, opts["shots"], kind, seed, opts["threads"])
        else:
            from .traces import ModeFunction, simulate_extracted

            if fixture is not None:
                mode_fn, rate = fixture.mode_function, fixture.sample_rate
            else:
                mode_fn = ModeFunction(tau=params.tau)
                rate = opts["sample_rate"] or 62 / params.tau
            data = simulate_extracted(params, mode_fn, opts["duration"], rate, kind, seed,
                                      opts["shots"], threads=opts["threads"])
        reports += [empirical_variance(make_nullifier(kind, k, n), data) for k in nullifier_indices(data, n)]
    return reports


def cmd_nullifiers(opts: dict) -> int:
    params, fixture = circuit_from_options(opts)
    if opts["method"] == "trace" and opts["shots"] == DEFAULTS["shots"]:
        opts["shots"] = 16
    reports = _reports(opts, params, fixture)
    out = opts["out"]
    write_reports_csv(reports, out / "nullifiers.csv")
    _write_manifest(out, "nullifiers", opts, params, ["nullifiers.csv"])
    for kind in ("x", "p"):
        rows = [r for r in reports if r.kind == kind]
        mean_db = 10 * math.log10(np.mean([r.variance for r in rows]) / SHOT_NOISE)
        print(f"{kind}-nullifier: {len(rows)} rows, mean {mean_db:.3f} dB, "
              f"max {max(r.db for r in rows):.3f} dB")
    bound = opts.get("bound_db")
    if bound is not None:
        worst = max(r.db for r in reports)
        if not worst < bound:
            print(f"FAIL: worst nullifier {worst:.4f} dB is not below {bound} dB")
            return EXIT_CRITERION
        print(f"PASS: every nullifier below {bound} dB")
    return EXIT_OK


def cmd_audit(opts: dict) -> int:
    params = None
    if opts.get("datasets"):
        from .sampler import QuadratureDataset

        x_data, p_data = (QuadratureDataset.load(p) for p in opts["datasets"])
        source = {"x": x_data, "p": p_data}
        params = x_data.params
    elif opts.get("db") is not None or opts.get("x_db") is not None or opts.get("p_db") is not None:
        common = opts.get("db")
        vx = from_db(opts["x_db"] if opts.get("x_db") is not None else common)
        vp = from_db(opts["p_db"] if opts.get("p_db") is not None else common)
        if vx is None or vp is None or np.isnan([vx, vp]).any():
            raise InvalidParameter("give --db or both --x-db and --p-db")
        source = (float(vx), float(vp))
    else:
        params, fixture = circuit_from_options(opts)
        if fixture is not None:
            from .traces import mode_filtered_variance

            source = tuple(mode_filtered_variance(params, fixture.mode_function, kind, fixture.sample_rate)
                           for kind in ("x", "p"))
        else:
            source = params
    report = full_audit(source)
    out = opts["out"]
    report.write_json(out / "audit.json")
    report.write_csv(out / "audit.csv")
    _write_manifest(out, "audit", opts, params, ["audit.json", "audit.csv"])
    print(json.dumps({"violated": f"{report.n_violated}/{len(report.rows)}",
                      "completely_inseparable": report.completely_inseparable}))
    return EXIT_OK if report.completely_inseparable else EXIT_CRITERION


def cmd_sample(opts: dict) -> int:
    from .sampler import sample_modes

    params, _ = circuit_from_options(opts)
    data = sample_modes(params, opts["shots"], opts["basis"], opts["seed"], opts["threads"])
    out = opts["out"]
    name = f"dataset_{opts['basis']}.cvqd"
    data.save(out / name)
    files = [name]
    if opts.get("csv"):
        data.write_csv(out / f"dataset_{opts['basis']}.csv")
        files.append(f"dataset_{opts['basis']}.csv")
    _write_manifest(out, "sample", opts, params, files)
    print(f"sample: {data.shots} shots x {data.n_temporal} modes -> {out / name}")
    return EXIT_OK


def cmd_trace(opts: dict) -> int:
    from .traces import synthesize_trace

    params, fixture = circuit_from_options(opts)
    rate = opts["sample_rate"] or (fixture.sample_rate if fixture else 62 / params.tau)
    trace = synthesize_trace(params, opts["duration"], rate, opts["basis"], opts["seed"], opts["n_traces"],
                             opts.get("detector_corner"), opts["threads"], opts.get("first_index") or 0)
    out = opts["out"]
    name = f"trace_{opts['basis']}.cvtr"
    trace.save(out / name)
    _write_manifest(out, "trace", opts, params, [name])
    print(f"trace: {trace.n_traces} x {trace.n_samples} samples at {rate:.6g} Hz -> {out / name}")
    return EXIT_OK


def cmd_spectrum(opts: dict) -> int:
    from .spectra import write_psd_csv, welch_psd
    from .traces import Trace

    out = opts["out"]
    sums, counts = {}, {}
    params = freqs = None
    for path in opts["traces"]:
        trace = Trace.load(path)
        params = trace.params
        for c, ch in enumerate("AB"):
            f, psd = welch_psd(trace.samples[:, c, :], trace.sample_rate, opts["segment"], opts["overlap"])
            if freqs is not None and (f.shape != freqs.shape or np.any(f != freqs)):
                raise DataShapeError("trace files differ in sample rate or length")
            freqs = f
            key = (ch, trace.basis[c])
            sums[key] = sums.get(key, 0.0) + psd * trace.n_traces
            counts[key] = counts.get(key, 0) + trace.n_traces
    files = []
    for ch, q in sorted(sums):
        name = f"psd_{ch}_{q}.csv"
        write_psd_csv(out / name, freqs, sums[(ch, q)] / counts[(ch, q)])
        files.append(name)
    _write_manifest(out, "spectrum", opts, params, files)
    print(f"spectrum: wrote {', '.join(files)}")
    return EXIT_OK


def cmd_fit(opts: dict) -> int:
    from .spectra import COMBOS, fit_spectra, read_psd_csv

    out = opts["out"]
    paths = opts.get("psds") or [out / f"psd_{ch}_{q}.csv" for ch, q in COMBOS]
    if len(paths) != 4:
        raise InvalidParameter("fit needs four PSD files in the order A_x A_p B_x B_p")
    grids, psds = zip(*(read_psd_csv(p) for p in paths))
    freqs = grids[0]
    if any(g.shape != freqs.shape or np.any(g != freqs) for g in grids):
        raise DataShapeError("PSD files must share one frequency grid")
    tau = (opts.get("tau_ns") or 247.0) * 1e-9
    segment = opts.get("welch_segment")
    manifest = Path(paths[0]).parent / "spectrum_run.json"
    if segment is None and manifest.exists():
        segment = json.loads(manifest.read_text())["options"].get("segment")
    result = fit_spectra(freqs, np.stack(psds), n=opts["n"], tau=tau, shot_noise=opts.get("shot_noise") or 1.0,
                         segment=segment or None)
    (out / "fit.json").write_text(result.to_json())
    _write_manifest(out, "fit", opts, None, ["fit.json"])
    print(result.to_json())
    return EXIT_OK


COMMANDS = {
    "graph": cmd_graph,
    "nullifiers": cmd_nullifiers,
    "audit": cmd_audit,
    "sample": cmd_sample,
    "trace": cmd_trace,
    "spectrum": cmd_spectrum,
    "fit": cmd_fit,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(message)s")
    try:
        opts = _resolve(args, parser)
        opts["out"] = Path(opts["out"])
        opts["out"].mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](opts)
    except (InvalidParameter, DataShapeError, WitnessIntegrityError, BipartitenessError,
            FileNotFoundError, json.JSONDecodeError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (NumericalSingularity, PhysicalityError, FitError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
