"""``gridwatch`` command line: analyze, synth, stream, spectra and check."""

from __future__ import annotations

import argparse
import logging
import sys
import time
from dataclasses import replace
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from . import __version__
from . import config as config_mod
from . import report
from .config import RunConfig
from .errors import GridwatchError, InputError
from .ingest import (
    VARIABLES,
    ColumnAssembler,
    Conditioner,
    DataMatrix,
    NoiseSpec,
    generate_scenario,
    inject_noise,
    iter_frames,
    load_scenario,
    minmax_normalize,
    parse_csv,
    write_csv,
)
from .pipeline import AnalysisResult, StreamingPipeline, analyze, tick_spectra

log = logging.getLogger("gridwatch")

EXIT_OK = 0


# --------------------------------------------------------------------------- helpers


def load_source(cfg: RunConfig) -> tuple[DataMatrix, dict[str, str]]:
    """Raw matrix plus input hashes for the manifest."""
    if cfg.input is not None:
        return parse_csv(cfg.input), {"input": _hash(cfg.input)}
    spec = load_scenario(cfg.scenario)
    return generate_scenario(spec, cfg.seed), {"scenario": _hash(cfg.scenario)}


def _hash(path: Path) -> str:
    try:
        return report.sha256(Path(path))
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror or exc}") from exc


def condition(d: DataMatrix, cfg: RunConfig) -> DataMatrix:
    """Min-max normalization then SNR-controlled noise, as configured."""
    if cfg.normalize:
        d = minmax_normalize(d)
    if cfg.tau_snr is not None:
        d = inject_noise(d, NoiseSpec.for_matrix(d, cfg.tau_snr, cfg.seed))
    return d


def _prepare_out(out) -> Path:
    out = Path(out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise InputError(f"cannot create output directory {out}: {exc.strerror or exc}") from exc
    return out


def _write_outputs(out: Path, res: AnalysisResult, cfg: RunConfig) -> None:
    report.write_ticks(out / "ticks.csv", res.ticks)
    if cfg.emit.get("les", True):
        report.write_les(out / "les.csv", res.les_series)
    if cfg.emit.get("events", True):
        report.write_events(out / "events.csv", res.events)
        report.write_events_jsonl(out / "events.jsonl", res.events)
    if cfg.emit.get("eta_surface", True):
        report.write_eta_surface(out / "eta_surface.csv", res.ticks)


def _write_spectra(directory: Path, source, tick: int, cfg: RunConfig) -> dict:
    sp = tick_spectra(source, tick, cfg.detector)
    directory.mkdir(parents=True, exist_ok=True)
    if cfg.emit.get("esd", True):
        report.write_esd(directory, sp, cfg.detector.esd_bins)
    if cfg.emit.get("ring", True):
        report.write_ring(directory, sp)
    return report.spectra_summary(sp)


# --------------------------------------------------------------------------- commands


def cmd_analyze(cfg: RunConfig, out, workers: int | None = None) -> int:
    cfg.validate()
    out = _prepare_out(out)
    raw, inputs = load_source(cfg)
    data = condition(raw, cfg)
    res = analyze(data, cfg.detector, workers=workers)
    _write_outputs(out, res, cfg)
    # spectra snapshots: first full window plus every detection tick
    if cfg.emit.get("esd", True) or cfg.emit.get("ring", True):
        snap_ticks = sorted({cfg.detector.window, *(e.detection_tick for e in res.events)})
        for tick in snap_ticks:
            if tick <= data.shape[1]:
                _write_spectra(out / "spectra" / f"tick_{tick}", data, tick, cfg)
    report.write_manifest(out, cfg.echo(), __version__, inputs)
    degraded = sum(r.status != "ok" for r in res.ticks)
    print(f"{len(res.ticks)} ticks, {len(res.events)} events, {degraded} degraded -> {out}")
    return EXIT_OK


def cmd_synth(spec_path, seed: int, out) -> int:
    spec = load_scenario(spec_path)
    nv = len(VARIABLES)
    # the CSV schema carries whole devices; pad with extra baseline rows
    padded = -(-spec.rows // nv) * nv
    if padded != spec.rows:
        log.info("padding %d rows to %d (whole devices)", spec.rows, padded)
        spec = replace(spec, rows=padded)
    d = generate_scenario(spec, seed)
    out = Path(out)
    try:
        write_csv(d, out)
    except OSError as exc:
        raise InputError(f"cannot write {out}: {exc.strerror or exc}") from exc
    print(f"wrote {d.shape[0]}x{d.shape[1]} matrix ({d.shape[0] // nv} devices) to {out}")
    return EXIT_OK


def cmd_spectra(cfg: RunConfig, tick: int, out) -> int:
    cfg.validate()
    raw, inputs = load_source(cfg)
    data = condition(raw, cfg)
    out = _prepare_out(out)
    summary = _write_spectra(out, data, tick, cfg)
    report.write_manifest(out, {**cfg.echo(), "tick": tick}, __version__, inputs)
    print(", ".join(f"{k}={v}" for k, v in summary.items()))
    return EXIT_OK


def follow_lines(path: Path, idle_timeout: float, poll: float = 0.1) -> Iterator[str]:
    """Yield complete lines of a growing file until it stays idle for ``idle_timeout`` s."""
    try:
        fh = path.open(encoding="utf-8", newline="")
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror or exc}") from exc
    with fh:
        partial = ""
        idle = 0.0
        while True:
            chunk = fh.readline()
            if chunk:
                idle = 0.0
                partial += chunk
                if partial.endswith("\n"):
                    yield partial
                    partial = ""
                continue
            if idle >= idle_timeout:
                if partial:
                    yield partial
                return
            time.sleep(poll)
            idle += poll


def cmd_stream(path, cfg: RunConfig, idle_timeout: float = 2.0, out=None, emit=print) -> int:
    """Process a (possibly growing) CSV column by column."""
    cfg.validate(need_source=False)
    det = cfg.detector
    n_cal = cfg.calibration_ticks or det.window
    asm = ColumnAssembler()
    calib: list[np.ndarray] = []
    pipe: StreamingPipeline | None = None
    cond: Conditioner | None = None
    results, events = [], []
    emit(",".join(report.EVENTS_HEADER))

    def feed(col: np.ndarray) -> None:
        nonlocal pipe, cond
        if pipe is None:
            calib.append(col)
            if len(calib) < n_cal:
                return
            block = np.column_stack(calib)
            cond = Conditioner.calibrate(block, cfg.tau_snr, cfg.seed, cfg.normalize)
            pipe = StreamingPipeline(det, block.shape[0])
            for c in calib:
                _push(c)
            calib.clear()
            return
        _push(col)

    def _push(col: np.ndarray) -> None:
        res, ev = pipe.push(cond.apply(col, pipe.tick + 1))
        if res is not None:
            results.append(res)
        if ev is not None:
            events.append(ev)
            emit(",".join([str(ev.detection_tick), str(ev.onset_tick), report.fmt(ev.les_drop_magnitude),
                           report.join_ints(ev.flagged_rows), report.join_ints(ev.flagged_devices),
                           ev.mapping_rule]))

    for _, frame in iter_frames(follow_lines(Path(path), idle_timeout)):
        closed = asm.add(frame)
        if closed is not None:
            feed(closed[1])
    closed = asm.flush()
    if closed is not None:
        feed(closed[1])
    if pipe is None:
        raise InputError(f"stream ended after {len(calib)} ticks; calibration needs {n_cal}")

    if out is not None:
        out = _prepare_out(out)
        res = AnalysisResult(results, events, det)
        _write_outputs(out, res, cfg)
        report.write_manifest(out, cfg.echo(), __version__, {"input": _hash(Path(path))})
    return EXIT_OK


def cmd_check(directory) -> int:
    problems = report.self_check(directory)
    for p in problems:
        print(p, file=sys.stderr)
    if problems:
        return 2
    print(f"{directory}: all outputs valid")
    return EXIT_OK


# --------------------------------------------------------------------------- argument parsing


def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.replace(",", " ").split()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected numbers, got {text!r}") from None


def _add_run_args(p: argparse.ArgumentParser, source: bool = True) -> None:
    p.add_argument("--config", type=Path, help="YAML run configuration")
    if source:
        g = p.add_mutually_exclusive_group()
        g.add_argument("--input", type=Path, help="telemetry CSV")
        g.add_argument("--scenario", type=Path, help="scenario YAML (generated in memory)")
    p.add_argument("--seed", type=int)
    p.add_argument("--test-function", choices=["ie", "lrf", "wd", "cp"])
    p.add_argument("--cp-coeffs", type=_floats, help="polynomial coefficients, highest power first")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gridwatch", description=__doc__)
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    a = sub.add_parser("analyze", help="offline run over a CSV or a scenario")
    _add_run_args(a)
    a.add_argument("--out", type=Path, required=True)
    a.add_argument("--workers", type=int, default=None)

    s = sub.add_parser("synth", help="write a synthetic scenario as telemetry CSV")
    s.add_argument("--spec", type=Path, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", type=Path, required=True)

    st = sub.add_parser("stream", help="process a growing CSV column by column")
    st.add_argument("--follow", type=Path, required=True)
    _add_run_args(st, source=False)
    st.add_argument("--idle-timeout", type=float, default=2.0,
                    help="stop after this many seconds without new data")
    st.add_argument("--out", type=Path)

    sp = sub.add_parser("spectra", help="ESD, MP and ring-law data for one window")
    _add_run_args(sp)
    sp.add_argument("--tick", type=int, required=True)
    sp.add_argument("--out", type=Path)

    c = sub.add_parser("check", help="validate an output directory")
    c.add_argument("directory", type=Path)
    return ap


def _run_config(args) -> RunConfig:
    cfg = config_mod.load(args.config) if args.config else RunConfig()
    return config_mod.with_overrides(
        cfg,
        input=getattr(args, "input", None),
        scenario=getattr(args, "scenario", None),
        seed=args.seed,
        test_function=args.test_function,
        cp_coeffs=args.cp_coeffs,
    )


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        if args.command == "analyze":
            return cmd_analyze(_run_config(args), args.out, args.workers)
        if args.command == "synth":
            return cmd_synth(args.spec, args.seed, args.out)
        if args.command == "stream":
            return cmd_stream(args.follow, _run_config(args), args.idle_timeout, args.out)
        if args.command == "spectra":
            return cmd_spectra(_run_config(args), args.tick, args.out or Path(f"spectra_{args.tick}"))
        return cmd_check(args.directory)
    except GridwatchError as exc:
        print(f"gridwatch: {exc.__class__.__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except KeyboardInterrupt:
        return 130


if __name__ == "__main__":
    sys.exit(main())
