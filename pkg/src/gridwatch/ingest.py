"""Telemetry parsing, matrix assembly, normalization, noise and scenarios.

The data matrix stacks 7 rows per device in registration order:
``ua, ub, uc, ia, ib, ic, load``. Columns are ticks in timestamp order.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import yaml

from .errors import (
    InputError,
    InvalidSpec,
    MalformedRow,
    MissingTick,
    NonMonotonicTimestamps,
)

VARIABLES = ("ua", "ub", "uc", "ia", "ib", "ic", "load")
CSV_HEADER = ("timestamp", "device_id") + VARIABLES

# entropy tags keep the noise and Haar substreams of one master seed apart
NOISE_STREAM = 0
HAAR_STREAM = 1


@dataclass(frozen=True)
class TelemetryFrame:
    timestamp: float
    device_id: str
    ua: float
    ub: float
    uc: float
    ia: float
    ib: float
    ic: float
    load: float

    def __post_init__(self):
        vals = [self.timestamp, *self.measurements]
        if not all(math.isfinite(v) for v in vals):
            raise ValueError("telemetry values must be finite")
        if self.timestamp < 0:
            raise ValueError("timestamp must be >= 0")

    @property
    def measurements(self) -> tuple[float, ...]:
        return (self.ua, self.ub, self.uc, self.ia, self.ib, self.ic, self.load)


@dataclass(frozen=True)
class DataMatrix:
    values: np.ndarray
    row_labels: list[tuple[int, str]]
    tick_timestamps: list[float]
    device_ids: list[str] = field(default_factory=list)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2:
            raise InputError(f"data matrix must be 2-D, got {v.shape}")
        if len(self.row_labels) != v.shape[0]:
            raise InputError("row label count does not match the matrix")
        if len(self.tick_timestamps) != v.shape[1]:
            raise InputError("timestamp count does not match the matrix")
        ts = np.asarray(self.tick_timestamps, dtype=float)
        if ts.size > 1 and np.any(np.diff(ts) <= 0):
            raise NonMonotonicTimestamps("timestamps must be strictly increasing")
        object.__setattr__(self, "values", v)

    @property
    def m(self) -> int:
        return len(self.device_ids) or -(-self.values.shape[0] // len(VARIABLES))

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    @classmethod
    def from_array(cls, values, timestamps: Sequence[float] | None = None, interval: float = 1.0):
        v = np.asarray(values, dtype=float)
        p, t = v.shape
        ts = list(timestamps) if timestamps is not None else [round(k * interval, 6) for k in range(t)]
        labels = device_labels(p)
        ids = [f"dev{d:03d}" for d in range(-(-p // len(VARIABLES)))]
        return cls(v, labels, ts, ids)


def device_labels(p: int) -> list[tuple[int, str]]:
    nv = len(VARIABLES)
    return [(r // nv, VARIABLES[r % nv]) for r in range(p)]


def _parse_timestamp(text: str) -> float:
    text = text.strip()
    try:
        return float(text)
    except ValueError:
        pass
    if text.endswith("Z"):
        text = text[:-1] + "+00:00"
    dt = datetime.fromisoformat(text)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.timestamp()


def iter_frames(lines: Iterable[str], first_line: int = 1) -> Iterable[tuple[int, TelemetryFrame]]:
    """Yield ``(line_number, frame)``; the header must be the first line."""
    reader = csv.reader(lines)
    lineno = first_line
    header = next(reader, None)
    if header is None or tuple(h.strip() for h in header) != CSV_HEADER:
        raise MalformedRow(lineno, f"header must be {','.join(CSV_HEADER)}")
    for row in reader:
        lineno += 1
        if not row or all(not c.strip() for c in row):
            continue
        yield lineno, frame_from_row(row, lineno)


def frame_from_row(row: Sequence[str], lineno: int) -> TelemetryFrame:
    if len(row) != len(CSV_HEADER):
        raise MalformedRow(lineno, f"expected {len(CSV_HEADER)} fields, got {len(row)}")
    try:
        ts = _parse_timestamp(row[0])
        vals = [float(c) for c in row[2:]]
        return TelemetryFrame(ts, row[1].strip(), *vals)
    except ValueError as exc:
        raise MalformedRow(lineno, str(exc)) from None


def assemble(frames: Iterable[TelemetryFrame]) -> DataMatrix:
    """Dense matrix from frames; devices keep first-appearance order."""
    devices: dict[str, dict[float, tuple[float, ...]]] = {}
    for fr in frames:
        samples = devices.setdefault(fr.device_id, {})
        if fr.timestamp in samples:
            raise NonMonotonicTimestamps(
                f"device {fr.device_id!r} repeats timestamp {fr.timestamp!r}"
            )
        samples[fr.timestamp] = fr.measurements
    if not devices:
        raise InputError("no telemetry rows")
    stamps = sorted(set().union(*(s.keys() for s in devices.values())))
    ids = list(devices)
    nv = len(VARIABLES)
    values = np.empty((nv * len(ids), len(stamps)))
    for d, dev in enumerate(ids):
        samples = devices[dev]
        for j, ts in enumerate(stamps):
            try:
                values[d * nv:(d + 1) * nv, j] = samples[ts]
            except KeyError:
                raise MissingTick(dev, ts) from None
    return DataMatrix(values, device_labels(values.shape[0]), stamps, ids)


class ColumnAssembler:
    """Incremental counterpart of :func:`assemble` for a growing file.

    Frames must arrive grouped by timestamp in increasing order. A timestamp
    closes when a later one appears (or on :meth:`flush`); the device set is
    fixed by the first closed timestamp.
    """

    def __init__(self):
        self.devices: list[str] | None = None
        self._ts: float | None = None
        self._group: dict[str, tuple[float, ...]] = {}
        self._order: list[str] = []

    def _close(self) -> tuple[float, np.ndarray] | None:
        if self._ts is None:
            return None
        if self.devices is None:
            self.devices = list(self._order)
        for dev in self.devices:
            if dev not in self._group:
                raise MissingTick(dev, self._ts)
        extra = [d for d in self._order if d not in self.devices]
        if extra:
            raise InputError(f"device {extra[0]!r} first appears after registration closed")
        col = np.concatenate([self._group[d] for d in self.devices]).astype(float)
        ts = self._ts
        self._ts, self._group, self._order = None, {}, []
        return ts, col

    def add(self, fr: TelemetryFrame) -> tuple[float, np.ndarray] | None:
        """Feed one frame; returns ``(timestamp, column)`` when a tick closes."""
        done = None
        if self._ts is not None and fr.timestamp != self._ts:
            if fr.timestamp < self._ts:
                raise NonMonotonicTimestamps(f"timestamp {fr.timestamp!r} after {self._ts!r}")
            done = self._close()
        if self._ts is None:
            self._ts = fr.timestamp
        if fr.device_id in self._group:
            raise NonMonotonicTimestamps(f"device {fr.device_id!r} repeats timestamp {fr.timestamp!r}")
        self._group[fr.device_id] = fr.measurements
        self._order.append(fr.device_id)
        return done

    def flush(self) -> tuple[float, np.ndarray] | None:
        return self._close()


def parse_csv(path) -> DataMatrix:
    path = Path(path)
    try:
        with path.open(newline="", encoding="utf-8") as fh:
            return assemble(fr for _, fr in iter_frames(fh))
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror or exc}") from exc


def _fmt(x: float) -> str:
    return repr(float(x))


def write_csv(d: DataMatrix, path) -> None:
    """Write a matrix whose row count is a multiple of 7 in the CSV schema."""
    nv = len(VARIABLES)
    p, t = d.values.shape
    if p % nv:
        raise InputError(f"{p} rows is not a multiple of {nv}; cannot write device records")
    ids = d.device_ids or [f"dev{k:03d}" for k in range(p // nv)]
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for j, ts in enumerate(d.tick_timestamps):
            for dev_idx, dev in enumerate(ids):
                block = d.values[dev_idx * nv:(dev_idx + 1) * nv, j]
                w.writerow([_fmt(ts), dev, *(_fmt(v) for v in block)])


def minmax_normalize(d: DataMatrix) -> DataMatrix:
    """Map every row onto [0, 1]; constant rows become 0.5."""
    v = d.values
    lo = v.min(axis=1, keepdims=True)
    span = v.max(axis=1, keepdims=True) - lo
    flat = span[:, 0] == 0
    out = np.empty_like(v)
    out[~flat] = (v[~flat] - lo[~flat]) / span[~flat]
    out[flat] = 0.5
    return replace(d, values=out)


def noise_column(rows: int, tick: int, seed: int) -> np.ndarray:
    """Standard normal noise for one tick (1-based), independent of the stride."""
    return np.random.default_rng([int(seed), NOISE_STREAM, int(tick)]).standard_normal(rows)


def noise_matrix(shape: tuple[int, int], seed: int, first_tick: int = 1) -> np.ndarray:
    p, t = shape
    return np.column_stack([noise_column(p, first_tick + j, seed) for j in range(t)])


def gamma_for_snr(d_tilde, noise, tau_snr: float) -> float:
    """Noise magnitude giving ``Tr(D D^H) / (gamma**2 Tr(E E^H)) = tau_snr``.

    The signal trace uses the noise-free matrix.
    """
    if not tau_snr > 0:
        raise InvalidSpec(f"tau_snr must be positive, got {tau_snr}")
    dv = np.asarray(getattr(d_tilde, "values", d_tilde), dtype=float)
    ev = np.asarray(noise, dtype=float)
    e_tr = float(np.sum(ev * ev))
    if not e_tr > 0:
        raise InvalidSpec("noise matrix has zero energy")
    return math.sqrt(float(np.sum(dv * dv)) / (e_tr * tau_snr))


@dataclass(frozen=True)
class NoiseSpec:
    tau_snr: float
    gamma: float
    seed: int

    @classmethod
    def for_matrix(cls, d_tilde: DataMatrix, tau_snr: float, seed: int) -> "NoiseSpec":
        e = noise_matrix(d_tilde.shape, seed)
        return cls(float(tau_snr), gamma_for_snr(d_tilde, e, tau_snr), int(seed))


def inject_noise(d_tilde: DataMatrix, spec: NoiseSpec) -> DataMatrix:
    if spec.gamma == 0:
        return replace(d_tilde, values=d_tilde.values.copy())
    e = noise_matrix(d_tilde.shape, spec.seed)
    return replace(d_tilde, values=d_tilde.values + spec.gamma * e)


def prepare(d: DataMatrix, tau_snr: float, seed: int) -> tuple[DataMatrix, NoiseSpec]:
    """Min-max normalization followed by SNR-controlled white noise."""
    dt = minmax_normalize(d)
    spec = NoiseSpec.for_matrix(dt, tau_snr, seed)
    return inject_noise(dt, spec), spec


# --------------------------------------------------------------------------- scenarios


@dataclass(frozen=True)
class Signal:
    row: int
    start: int
    end: int
    base: float
    step: float


@dataclass(frozen=True)
class Coupling:
    """Linear response of the other rows to every signal.

    Row ``i`` moves by ``-gain * exp(-|i - row| / decay) * (level - base)``,
    a stand-in for how bus voltages sag when a nearby load steps up.
    ``gain = 0`` (the default) leaves the other rows untouched, which matches
    load measurements.
    """

    gain: float = 0.0
    decay: float = 10.0


@dataclass(frozen=True)
class ScenarioSpec:
    rows: int
    ticks: int
    baseline_value: float = 20.0
    jitter_pct: float = 0.5
    signals: tuple[Signal, ...] = ()
    coupling: Coupling = Coupling()
    interval: float = 0.02

    def validate(self) -> None:
        if self.rows < 1:
            raise InvalidSpec(f"rows must be >= 1, got {self.rows}")
        if self.ticks < 1:
            raise InvalidSpec(f"ticks must be >= 1, got {self.ticks}")
        if self.jitter_pct < 0:
            raise InvalidSpec("jitter_pct must be >= 0")
        if not self.interval > 0:
            raise InvalidSpec("interval must be positive")
        if self.coupling.decay <= 0:
            raise InvalidSpec("coupling decay must be positive")
        for s in self.signals:
            if not 1 <= s.row <= self.rows:
                raise InvalidSpec(f"signal row {s.row} outside 1..{self.rows}")
            if not 1 <= s.start <= s.end <= self.ticks:
                raise InvalidSpec(f"signal interval {s.start}..{s.end} outside 1..{self.ticks}")

    @classmethod
    def from_dict(cls, doc: dict) -> "ScenarioSpec":
        if not isinstance(doc, dict):
            raise InvalidSpec("scenario document must be a mapping")
        try:
            baseline = doc.get("baseline") or {}
            coupling = doc.get("coupling") or {}
            signals = tuple(
                Signal(int(s["row"]), int(s["start"]), int(s["end"]), float(s["base"]), float(s["step"]))
                for s in doc.get("signals") or ()
            )
            spec = cls(
                rows=int(doc["rows"]),
                ticks=int(doc["ticks"]),
                baseline_value=float(baseline.get("value", 20.0)),
                jitter_pct=float(baseline.get("jitter_pct", 0.5)),
                signals=signals,
                coupling=Coupling(float(coupling.get("gain", 0.0)), float(coupling.get("decay", 10.0))),
                interval=float(doc.get("interval", 0.02)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise InvalidSpec(f"bad scenario document: {exc}") from None
        spec.validate()
        return spec

    def to_dict(self) -> dict:
        return {
            "rows": self.rows,
            "ticks": self.ticks,
            "interval": self.interval,
            "baseline": {"value": self.baseline_value, "jitter_pct": self.jitter_pct},
            "coupling": {"gain": self.coupling.gain, "decay": self.coupling.decay},
            "signals": [
                {"row": s.row, "start": s.start, "end": s.end, "base": s.base, "step": s.step}
                for s in self.signals
            ],
        }


def load_scenario(path) -> ScenarioSpec:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror or exc}") from exc
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise InvalidSpec(f"{path}: not valid YAML ({exc.__class__.__name__})") from None
    return ScenarioSpec.from_dict(doc)


def generate_scenario(spec: ScenarioSpec, seed: int) -> DataMatrix:
    """Baseline rows with Gaussian jitter plus step signals (1-based rows/ticks)."""
    spec.validate()
    p, T = spec.rows, spec.ticks
    rng = np.random.default_rng(seed)
    level = np.full((p, T), spec.baseline_value)
    base = np.full(p, spec.baseline_value)
    rows_idx = np.arange(p)
    for s in spec.signals:
        r = s.row - 1
        delta = np.zeros(T)
        delta[s.start - 1:s.end] = s.step - s.base
        level[r] = s.base + delta
        base[r] = s.base
        if spec.coupling.gain:
            weight = spec.coupling.gain * np.exp(-np.abs(rows_idx - r) / spec.coupling.decay)
            weight[r] = 0.0
            level -= np.outer(weight, delta)
    jitter = rng.standard_normal((p, T)) * (spec.jitter_pct / 100.0) * np.abs(base)[:, None]
    values = level + jitter
    ts = [round(k * spec.interval, 9) for k in range(T)]
    nv = len(VARIABLES)
    return DataMatrix(values, device_labels(p), ts, [f"dev{d:03d}" for d in range(-(-p // nv))])


@dataclass(frozen=True)
class Conditioner:
    """Min-max map and noise level frozen from a calibration prefix.

    Streaming input cannot see the global row extremes, so the first block of
    columns fixes them. Later values may fall outside [0, 1].
    """

    lo: np.ndarray
    span: np.ndarray
    gamma: float
    seed: int

    @classmethod
    def calibrate(cls, block, tau_snr: float | None, seed: int, normalize: bool = True) -> "Conditioner":
        b = np.asarray(block, dtype=float)
        if normalize:
            lo, span = b.min(axis=1), b.max(axis=1) - b.min(axis=1)
        else:
            lo, span = np.zeros(b.shape[0]), np.ones(b.shape[0])
        cond = cls(lo, span, 0.0, int(seed))
        if tau_snr is None:
            return cond
        scaled = np.column_stack([cond.scale(b[:, j]) for j in range(b.shape[1])])
        gamma = gamma_for_snr(scaled, noise_matrix(b.shape, seed), tau_snr)
        return replace(cond, gamma=gamma)

    def scale(self, column) -> np.ndarray:
        col = np.asarray(column, dtype=float)
        out = np.full_like(col, 0.5)
        ok = self.span != 0
        out[ok] = (col[ok] - self.lo[ok]) / self.span[ok]
        return out

    def apply(self, column, tick: int) -> np.ndarray:
        out = self.scale(column)
        if self.gamma:
            out = out + self.gamma * noise_column(out.size, tick, self.seed)
        return out
