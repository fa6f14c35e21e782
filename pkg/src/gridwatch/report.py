"""Line-oriented writers for run outputs, plus the schema self-check."""

from __future__ import annotations

import csv
import hashlib
import json
import math
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DegenerateSeries, InputError
from .les import LesSeries, normalize_series
from .pipeline import AnomalyEvent, TickResult, TickSpectra
from .spectra import esd_histogram

TICKS_HEADER = ("tick", "status", "les", "msr", "outlier_count", "largest_eigenvalue",
                "mp_l1_distance", "ring_annulus_fraction", "eta_threshold", "flagged_rows",
                "flagged_devices")
LES_HEADER = ("tick", "les", "les_normalized")
EVENTS_HEADER = ("detection_tick", "onset_tick", "les_drop", "flagged_rows", "flagged_devices",
                 "mapping_rule")
ETA_HEADER = ("tick", "row", "eta")
ESD_HEADER = ("bin_lo", "bin_hi", "count", "density", "mp_mass")
MP_HEADER = ("x", "mp_density")
RING_HEADER = ("re", "im", "modulus")

SCHEMAS = {
    "ticks.csv": TICKS_HEADER,
    "les.csv": LES_HEADER,
    "events.csv": EVENTS_HEADER,
    "eta_surface.csv": ETA_HEADER,
    "esd.csv": ESD_HEADER,
    "mp_density.csv": MP_HEADER,
    "ring.csv": RING_HEADER,
}
# columns holding ';'-joined integer lists
_LIST_COLUMNS = {"flagged_rows", "flagged_devices"}
_TEXT_COLUMNS = {"status", "mapping_rule"}


def fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    return "nan" if math.isnan(x) else repr(x)


def join_ints(xs: Iterable[int]) -> str:
    return ";".join(str(int(x)) for x in xs)


def _writer(path: Path, header: Sequence[str]):
    fh = path.open("w", newline="", encoding="utf-8")
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(header)
    return fh, w


def write_ticks(path: Path, results: Sequence[TickResult]) -> None:
    fh, w = _writer(path, TICKS_HEADER)
    with fh:
        for r in results:
            loc = r.location
            w.writerow([
                r.tick, r.status, fmt(r.les_value), fmt(r.msr_value), r.outlier_count,
                fmt(r.largest_eigenvalue), fmt(r.law_fit.mp_l1_distance),
                fmt(r.law_fit.ring_annulus_fraction),
                fmt(loc.eta_threshold) if loc else "nan",
                join_ints(loc.flagged_rows) if loc else "",
                join_ints(loc.flagged_devices) if loc else "",
            ])


def write_les(path: Path, series: LesSeries) -> None:
    try:
        norm = normalize_series(series).values
    except DegenerateSeries:
        norm = np.full(len(series), np.nan)
    fh, w = _writer(path, LES_HEADER)
    with fh:
        for tick, raw, n in zip(series.ticks, series.values, norm):
            w.writerow([int(tick), fmt(raw), fmt(n)])


def write_events(path: Path, events: Sequence[AnomalyEvent]) -> None:
    fh, w = _writer(path, EVENTS_HEADER)
    with fh:
        for e in events:
            w.writerow([e.detection_tick, e.onset_tick, fmt(e.les_drop_magnitude),
                        join_ints(e.flagged_rows), join_ints(e.flagged_devices), e.mapping_rule])


def event_record(e: AnomalyEvent) -> dict:
    return {
        "detection_tick": e.detection_tick,
        "onset_tick": e.onset_tick,
        "les_drop": e.les_drop_magnitude,
        "flagged_rows": list(e.flagged_rows),
        "flagged_devices": list(e.flagged_devices),
        "mapping_rule": e.mapping_rule,
        "augmented_candidates": e.augmented_candidates,
    }


def write_events_jsonl(path: Path, events: Sequence[AnomalyEvent]) -> None:
    """One JSON record per line, including back-mapped candidate sets."""
    with path.open("w", encoding="utf-8") as fh:
        for e in events:
            fh.write(json.dumps(event_record(e), sort_keys=True) + "\n")


def write_eta_surface(path: Path, results: Sequence[TickResult]) -> None:
    fh, w = _writer(path, ETA_HEADER)
    with fh:
        for r in results:
            if r.location is None:
                continue
            for i, eta in enumerate(r.location.eta, start=1):
                w.writerow([r.tick, i, fmt(eta)])


def write_esd(directory: Path, sp: TickSpectra, bins: int = 50, samples: int = 200) -> None:
    hist = esd_histogram(sp.spectrum, bins)
    edges = hist.bin_edges
    mass = sp.mp.mass_between(edges[:-1], edges[1:])
    fh, w = _writer(directory / "esd.csv", ESD_HEADER)
    with fh:
        for lo, hi, cnt, dens, m in zip(edges[:-1], edges[1:], hist.counts,
                                        hist.normalized_density, mass):
            w.writerow([fmt(lo), fmt(hi), int(cnt), fmt(dens), fmt(m)])
    xs = np.linspace(sp.mp.a, sp.mp.b, samples)
    fh, w = _writer(directory / "mp_density.csv", MP_HEADER)
    with fh:
        for x, f in zip(xs, sp.mp.pdf(xs)):
            w.writerow([fmt(x), fmt(f)])


def write_ring(directory: Path, sp: TickSpectra) -> None:
    if sp.ring is None:
        return
    fh, w = _writer(directory / "ring.csv", RING_HEADER)
    with fh:
        for z in sp.ring.eigenvalues:
            z = complex(z)
            w.writerow([fmt(z.real), fmt(z.imag), fmt(abs(z))])
    ref = {"c": sp.ring_ref.c, "L": sp.ring_ref.L,
           "inner_radius": sp.ring_ref.inner_radius, "outer_radius": sp.ring_ref.outer_radius}
    (directory / "ring_reference.json").write_text(json.dumps(ref, sort_keys=True, indent=2) + "\n")


def spectra_summary(sp: TickSpectra) -> dict:
    lam = sp.spectrum.eigenvalues
    return {
        "tick": sp.tick,
        "rows": int(lam.size),
        "c": sp.mp.c,
        "mp_a": sp.mp.a,
        "mp_b": sp.mp.b,
        "outlier_count": int(np.count_nonzero(lam > sp.mp.b)),
        "largest_eigenvalue": float(lam[0]),
    }


def sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_manifest(directory: Path, config: dict, version: str, inputs: dict[str, str]) -> None:
    """Config echo, version, input hashes and output hashes; no wall-clock data."""
    outputs = {
        p.relative_to(directory).as_posix(): sha256(p)
        for p in sorted(directory.rglob("*"))
        if p.is_file() and p.name != "manifest.json"
    }
    doc = {"version": version, "config": config, "inputs": inputs, "outputs": outputs}
    (directory / "manifest.json").write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n")


# --------------------------------------------------------------------------- self-check


def _check_cell(col: str, cell: str) -> bool:
    if col in _LIST_COLUMNS:
        return cell == "" or all(part.lstrip("-").isdigit() for part in cell.split(";"))
    if col in _TEXT_COLUMNS:
        return bool(cell)
    try:
        float(cell)
    except ValueError:
        return False
    return True


def check_csv(path: Path, header: Sequence[str]) -> list[str]:
    problems = []
    with path.open(newline="", encoding="utf-8") as fh:
        rows = csv.reader(fh)
        got = next(rows, None)
        if got is None or tuple(got) != tuple(header):
            return [f"{path.name}: header {got} != {list(header)}"]
        for lineno, row in enumerate(rows, start=2):
            if len(row) != len(header):
                problems.append(f"{path.name}:{lineno}: {len(row)} fields, expected {len(header)}")
                continue
            bad = [c for c, cell in zip(header, row) if not _check_cell(c, cell)]
            if bad:
                problems.append(f"{path.name}:{lineno}: bad value in {', '.join(bad)}")
    return problems


def self_check(directory) -> list[str]:
    """Validate every known output file under ``directory``; returns problems."""
    directory = Path(directory)
    if not directory.is_dir():
        raise InputError(f"{directory} is not a directory")
    problems: list[str] = []
    manifest = directory / "manifest.json"
    if not manifest.exists():
        problems.append("manifest.json missing")
        recorded = {}
    else:
        try:
            recorded = json.loads(manifest.read_text(encoding="utf-8")).get("outputs", {})
        except json.JSONDecodeError as exc:
            problems.append(f"manifest.json: invalid JSON ({exc.msg})")
            recorded = {}
    for rel, digest in sorted(recorded.items()):
        p = directory / rel
        if not p.exists():
            problems.append(f"{rel}: listed in manifest but missing")
        elif sha256(p) != digest:
            problems.append(f"{rel}: hash differs from manifest")
    for p in sorted(directory.rglob("*")):
        if p.name in SCHEMAS:
            problems.extend(check_csv(p, SCHEMAS[p.name]))
        elif p.suffix == ".jsonl":
            for lineno, line in enumerate(p.read_text(encoding="utf-8").splitlines(), start=1):
                try:
                    json.loads(line)
                except json.JSONDecodeError:
                    problems.append(f"{p.name}:{lineno}: not a JSON record")
    return problems
