"""Command-line experiment runner.

Every run writes its tables and a JSON report into ``--out`` together with
``manifest.json`` (config, seed, options, library versions, output hashes).
Only the manifest carries a timestamp, so the other files are byte-identical
for identical config and seed. ``cotdr rerun OUT/manifest.json`` repeats a run.

Exit codes: 0 ok, 1 selftest/rerun mismatch, 2 config error,
3 simulation error, 4 peak-fit failure (partial results written).
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import hashlib
import json
import platform
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from cotdr import __version__
from cotdr.config import ConfigError, ExperimentConfig, bundled_config, config_hash, from_dict, load_config
from cotdr.correlator import peak_fwhm_samples
from cotdr.fiber_channel import TraceOverlapError
from cotdr.measurement import (
    FRONTENDS,
    EchoNotFoundError,
    EchoOverlapError,
    PartialMeasurementError,
    acquire,
    measure,
    measure_consecutive,
    temperature_sweep,
)
from cotdr.peak_fit import PeakFitError
from cotdr.pmd_mps import AmbiguityError, PhaseWrapError, pmd_report, random_core_model
from cotdr.timing_analysis import MeasurementReport, SweepReport, TimingError, write_delay_csv, write_json
from cotdr.traces import AccumulatedTrace

EXIT_OK, EXIT_MISMATCH, EXIT_CONFIG, EXIT_SIM, EXIT_FIT = 0, 1, 2, 3, 4
SIM_ERRORS = (
    TraceOverlapError,
    EchoOverlapError,
    EchoNotFoundError,
    TimingError,
    PhaseWrapError,
    AmbiguityError,
    ValueError,
    FloatingPointError,
)


class FitFailure(Exception):
    pass


def _csv_writer(path):
    fh = open(path, "w", newline="")
    return fh, csv.writer(fh, lineterminator="\n")


def _ps(x: float) -> str:
    return f"{x * 1e12:.4f}"


# -- subcommands -------------------------------------------------------------


def _skew_outputs(report: MeasurementReport, cfg: ExperimentConfig, out: Path) -> None:
    write_json({"mode": "skew", "measurement": report.to_dict()}, out / "skew_report.json")
    center = report.center_core_id
    fh, w = _csv_writer(out / "skew_table.csv")
    with fh:
        w.writerow(["core_id", "x_um", "y_um", "one_way_delay_s", "skew_ps", "true_skew_ps", "skew_error_ps"])
        for cid, rec in report.records.items():
            x, y = cfg.fiber.core(cid).position
            true_skew = report.truth[cid] - report.truth[center] if report.truth else float("nan")
            w.writerow(
                [
                    cid,
                    f"{x:.3f}",
                    f"{y:.3f}",
                    f"{rec.one_way_delay:.15e}",
                    _ps(report.skews[cid]),
                    _ps(true_skew),
                    _ps(report.skews[cid] - true_skew),
                ]
            )


def cmd_skew(cfg: ExperimentConfig, args, out: Path) -> int:
    mode = getattr(args, "mode", "simultaneous")
    try:
        if mode == "consecutive":
            report = measure_consecutive(cfg.fiber, cfg.environment, cfg.acquisition, args.seed, cfg.drift_rms)
        else:
            report = measure(cfg.fiber, cfg.environment, cfg.acquisition, args.seed)
    except PartialMeasurementError as exc:
        if exc.partial is not None:
            _skew_outputs(exc.partial, cfg, out)
        raise FitFailure(str(exc)) from exc
    _skew_outputs(report, cfg, out)
    return EXIT_OK


def _sweep_outputs(sweep: SweepReport, cfg: ExperimentConfig, out: Path) -> None:
    write_json(sweep.to_dict(), out / "sweep_report.json")
    write_delay_csv(sweep.reports, out / "group_delay.csv")
    ids = list(sweep.skew_table)
    fh, w = _csv_writer(out / "skew_vs_temperature.csv")
    with fh:
        w.writerow(["temperature_c"] + [f"core_{cid}_ps" for cid in ids])
        for k, r in enumerate(sweep.reports):
            w.writerow([f"{r.temperature:g}"] + [_ps(sweep.skew_table[cid][k][1]) for cid in ids])
    fh, w = _csv_writer(out / "tdc.csv")
    with fh:
        w.writerow(["core_id", "tdc_ppm_per_k", "configured_tdc_ppm_per_k", "r_squared", "skew_peak_to_peak_ps"])
        p2p = sweep.peak_to_peak
        for cid, fit in sweep.tdc_fit.items():
            w.writerow(
                [
                    cid,
                    f"{fit.slope_ppm_per_k:.6f}",
                    f"{cfg.fiber.core(cid).tdc:.6f}",
                    f"{fit.r_squared:.9f}",
                    _ps(p2p[cid]),
                ]
            )


def cmd_temp_sweep(cfg: ExperimentConfig, args, out: Path) -> int:
    temps = cfg.temperatures
    try:
        sweep = temperature_sweep(
            cfg.fiber,
            temps,
            cfg.acquisition,
            args.seed,
            reference_temperature=cfg.environment.reference_temperature,
        )
    except PartialMeasurementError as exc:
        done = exc.partial or []
        if len(done) >= 3:
            _sweep_outputs(SweepReport.from_reports(done), cfg, out)
        elif done:
            write_delay_csv(done, out / "group_delay.csv")
        raise FitFailure(str(exc)) from exc
    _sweep_outputs(sweep, cfg, out)
    return EXIT_OK


def cmd_pmd(cfg: ExperimentConfig, args, out: Path) -> int:
    settings = cfg.pmd
    summary = {}
    fh, w = _csv_writer(out / "pmd_summary.csv")
    with fh:
        w.writerow(["core_id", "x_um", "y_um", "target_pmd_ps", "pmd_mps_ps", "pmd_fit_ps", "pmd_jme_ps"])
        for core in cfg.fiber.cores:
            spec = core.birefringence
            if spec is None:
                continue
            seed = int(np.random.SeedSequence([args.seed, spec.seed]).generate_state(1)[0])
            model = random_core_model(replace(spec, seed=seed), settings.band)
            rep = pmd_report(
                model,
                settings.band,
                settings.n_points,
                settings.sops,
                mod_freq=settings.mod_freq,
                base_delay=core.base_delay,
            )
            rep.write_csv(out / f"dgd_core_{core.core_id}.csv")
            entry = rep.summary()
            entry["target_pmd_ps"] = spec.target_pmd * 1e12
            entry["position_um"] = list(core.position)
            summary[core.core_id] = entry
            w.writerow(
                [
                    core.core_id,
                    f"{core.position[0]:.3f}",
                    f"{core.position[1]:.3f}",
                    _ps(spec.target_pmd),
                    _ps(rep.pmd),
                    _ps(rep.pmd_fit),
                    _ps(rep.pmd_jme),
                ]
            )
    if not summary:
        raise ValueError("no core in the config has a birefringence entry")
    write_json({"cores": summary, "mod_freq_hz": settings.mod_freq}, out / "pmd_report.json")
    return EXIT_OK


def cmd_trace(cfg: ExperimentConfig, args, out: Path) -> int:
    groups = cfg.fiber.measurement_groups()
    if not 0 <= args.group < len(groups):
        raise ValueError(f"--group must lie in [0, {len(groups) - 1}]")
    sub = cfg.fiber.select(groups[args.group])
    try:
        a = acquire(sub, cfg.environment, cfg.acquisition, args.seed, key=(args.group,))
    except PeakFitError as exc:
        raise FitFailure(str(exc)) from exc
    corr = a.correlation
    half = int(np.ceil(args.span * corr.sample_rate))
    fh, w = _csv_writer(out / "correlation.csv")
    with fh:
        w.writerow(["echo", "time_s", "correlation"])
        for label, pk in a.peaks.items():
            c = int(round(corr.time_to_index(pk.position)))
            for i in range(max(c - half, 0), min(c + half + 1, len(corr))):
                w.writerow([label, f"{corr.index_to_time(i):.15e}", f"{corr.samples[i]:.9e}"])
    fh, w = _csv_writer(out / "peaks.csv")
    with fh:
        w.writerow(
            ["echo", "position_s", "echo_arrival_s", "amplitude", "sigma_s", "fwhm_ps",
             "fwhm_samples", "baseline", "rms_residual", "peak_snr_db"]
        )
        truth = {"reference": sub.reference_reflector_delay}
        for cid in sub.core_ids:
            truth[cid] = sub.reference_reflector_delay + 2 * (a.truth[cid] + sub.splitter_excess_delay)
        for label, pk in a.peaks.items():
            c = int(round(corr.time_to_index(pk.position)))
            w.writerow(
                [
                    label,
                    f"{pk.position:.15e}",
                    f"{truth[label]:.15e}",
                    f"{pk.amplitude:.9e}",
                    f"{pk.sigma_width:.9e}",
                    _ps(pk.fwhm),
                    peak_fwhm_samples(corr, c),
                    f"{pk.baseline:.9e}",
                    f"{pk.rms_residual:.9e}",
                    f"{a.peak_snr_db[label]:.3f}",
                ]
            )
    if args.dump_raw:
        if isinstance(a.received, AccumulatedTrace):
            a.received.to_binary(out / "accumulated.bin")
        else:
            np.save(out / "received.npy", a.received.samples)
    return EXIT_OK


COMMANDS = {"skew": cmd_skew, "temp-sweep": cmd_temp_sweep, "pmd": cmd_pmd, "trace": cmd_trace}


# -- plumbing ----------------------------------------------------------------


def _versions() -> dict:
    import scipy
    import yaml

    return {
        "cotdr": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "pyyaml": yaml.__version__,
    }


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _options(args) -> dict:
    keys = ("seed", "frontend", "traces", "sample_rate", "mode", "group", "span", "dump_raw")
    return {k: getattr(args, k) for k in keys if hasattr(args, k)}


def _apply_overrides(cfg: ExperimentConfig, args) -> ExperimentConfig:
    changes = {}
    if getattr(args, "frontend", None):
        changes["frontend"] = args.frontend
    if getattr(args, "traces", None) is not None:
        changes["n_traces"] = args.traces
    if getattr(args, "sample_rate", None) is not None:
        changes["sample_rate"] = args.sample_rate
    return cfg.with_acquisition(**changes) if changes else cfg


def _write_manifest(out: Path, command: str, cfg: ExperimentConfig, args, status: int, message: str = "") -> dict:
    outputs = {
        p.name: _sha256(p) for p in sorted(out.iterdir()) if p.is_file() and p.name != "manifest.json"
    }
    manifest = {
        "command": command,
        "options": _options(args),
        "seed": args.seed,
        "config": cfg.raw,
        "config_sha256": config_hash(cfg.raw),
        "config_source": str(getattr(args, "config", "")),
        "versions": _versions(),
        "created_utc": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
        "exit_status": status,
        "message": message,
        "outputs": outputs,
    }
    write_json(manifest, out / "manifest.json")
    return manifest


def _resolve_config(arg: str) -> Path:
    path = Path(arg)
    if path.exists() or path.suffix:
        return path
    return bundled_config(arg)


def _execute(command: str, cfg: ExperimentConfig, args, out: Path) -> int:
    out.mkdir(parents=True, exist_ok=True)
    try:
        status = COMMANDS[command](cfg, args, out)
        message = ""
    except FitFailure as exc:
        status, message = EXIT_FIT, str(exc)
    except SIM_ERRORS as exc:
        status, message = EXIT_SIM, f"{type(exc).__name__}: {exc}"
    except (RuntimeError, ArithmeticError) as exc:
        status, message = EXIT_SIM, f"{type(exc).__name__}: {exc}"
    _write_manifest(out, command, cfg, args, status, message)
    if message:
        print(f"cotdr {command}: {message}", file=sys.stderr)
    return status


def _run_command(args) -> int:
    try:
        cfg = load_config(_resolve_config(args.config))
        cfg = _apply_overrides(cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ValueError, TypeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    status = _execute(args.command, cfg, args, Path(args.out))
    if status == EXIT_OK:
        print(f"cotdr {args.command}: results in {args.out}")
    return status


def _run_selftest(args) -> int:
    from cotdr.selftest import run

    results = run()
    for name, ok, detail in results:
        print(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
    failed = sum(not ok for _, ok, _ in results)
    print(f"{len(results) - failed}/{len(results)} checks passed")
    return EXIT_OK if failed == 0 else EXIT_MISMATCH


def _run_rerun(args) -> int:
    try:
        manifest = json.loads(Path(args.manifest).read_text())
        command = manifest["command"]
        if command not in COMMANDS:
            raise ConfigError(f"unknown command {command!r} in manifest")
        cfg = from_dict(manifest["config"])
    except (OSError, json.JSONDecodeError, KeyError, ConfigError, ValueError, TypeError) as exc:
        print(f"config error: cannot rerun {args.manifest}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    opts = argparse.Namespace(config=args.manifest, **manifest["options"])
    out = Path(args.out)
    status = _execute(command, cfg, opts, out)
    fresh = json.loads((out / "manifest.json").read_text())["outputs"]
    if fresh != manifest["outputs"]:
        changed = sorted(set(fresh.items()) ^ set(manifest["outputs"].items()))
        print(f"rerun differs from the original run: {sorted({k for k, _ in changed})}", file=sys.stderr)
        return status or EXIT_MISMATCH
    print(f"rerun of {command} reproduced {len(fresh)} output files byte for byte")
    return status


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cotdr", description="Correlation OTDR multi-core fiber simulator")
    parser.add_argument("--version", action="version", version=f"cotdr {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument(
        "--config", required=True,
        help="YAML experiment config, or the name of a bundled one (mcf4_5km, mcf7_10km, mcf19_5km)",
    )
    common.add_argument("--out", required=True, help="output directory")
    common.add_argument("--seed", type=int, default=0, help="master random seed (default 0)")

    acq = argparse.ArgumentParser(add_help=False)
    acq.add_argument("--frontend", choices=FRONTENDS, help="receiver model (overrides the config)")
    acq.add_argument("--traces", type=int, help="number of averaged/accumulated traces (config default 1000)")
    acq.add_argument("--sample-rate", type=float, help="receiver sample rate in Hz")

    p = sub.add_parser("skew", parents=[common, acq], help="inter-core skew table at one temperature")
    p.add_argument(
        "--mode", choices=("simultaneous", "consecutive"), default="simultaneous",
        help="measure groups in one trace, or one core at a time with temperature drift",
    )
    sub.add_parser("temp-sweep", parents=[common, acq], help="delay, TDC and skew drift over the sweep temperatures")
    sub.add_parser("pmd", parents=[common], help="4-SOP MPS DGD spectra and per-core PMD")
    p = sub.add_parser("trace", parents=[common, acq], help="correlation around each echo plus peak fits")
    p.add_argument("--group", type=int, default=0, help="splitter group to acquire (default 0)")
    p.add_argument("--span", type=float, default=2e-9, help="half-width of each dumped window in s (default 2 ns)")
    p.add_argument("--dump-raw", action="store_true", help="also save the received trace")
    sub.add_parser("selftest", help="run closed-form consistency checks")
    p = sub.add_parser("rerun", help="repeat a run from its manifest and compare outputs")
    p.add_argument("manifest", help="manifest.json of an earlier run")
    p.add_argument("--out", required=True, help="output directory for the repeated run")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "traces", None) is not None and args.traces < 1:
        print("config error: --traces must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    if args.command == "selftest":
        return _run_selftest(args)
    if args.command == "rerun":
        return _run_rerun(args)
    return _run_command(args)


if __name__ == "__main__":
    sys.exit(main())
