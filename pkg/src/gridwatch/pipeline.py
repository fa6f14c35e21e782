"""Sliding-window orchestration, per-tick spectra and the LES break detector.

Ticks are 1-based: tick ``j`` is column ``j`` of the source, and the window
at tick ``j`` covers columns ``j - t + 1 .. j``.
"""

from __future__ import annotations

import logging
import math
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .augment import AugmentConfig, augmented_covariance, tensor_columns
from .errors import ConfigError, InsufficientHistory, ShapeMismatch, ZeroVarianceRow
from .ingest import HAAR_STREAM
from .les import LesSeries, TestFunction, les, msr
from .locator import AugmentedIndexMap, LocationReport, locate
from .spectra import (
    EigenSpectrum,
    MpReference,
    RawWindow,
    RingReference,
    covariance,
    eigen,
    mp_l1_distance,
    mp_reference,
    ring_product,
    ring_reference,
    standardize,
)

log = logging.getLogger(__name__)

MAD_SCALE = 1.4826  # MAD -> standard deviation under Gaussian data
OK = "ok"
DEGRADED = "degraded"


@dataclass(frozen=True)
class DetectorConfig:
    window: int = 200
    stride: int = 1
    test_function: TestFunction = field(default_factory=TestFunction)
    confidence_level: float = 0.95
    ring_L: int = 1
    augment: AugmentConfig | None = None
    mad_kappa: float = 5.0
    history_len: int = 96
    debounce: int = 2
    vars_per_device: int = 7
    seed: int = 0
    esd_bins: int = 50
    ring_tol: float = 0.02

    def __post_init__(self):
        if self.window < 2:
            raise ConfigError(f"window must be >= 2, got {self.window}")
        if self.stride < 1:
            raise ConfigError(f"stride must be >= 1, got {self.stride}")
        if self.history_len < 10:
            raise ConfigError(f"history_len must be >= 10, got {self.history_len}")
        if not self.mad_kappa > 0:
            raise ConfigError("mad_kappa must be positive")
        if self.debounce < 1:
            raise ConfigError("debounce must be >= 1")
        if self.ring_L < 1:
            raise ConfigError("ring_L must be >= 1")
        if not 0 < self.confidence_level < 1:
            raise ConfigError("confidence_level must be in (0, 1)")
        if self.esd_bins < 5:
            raise ConfigError("esd_bins must be >= 5")

    @property
    def baseline_span(self) -> int:
        # consecutive LES values share t-1 columns, so a short trailing window
        # underestimates the spread; look back at least two window widths
        return max(self.history_len, 2 * self.window)

    @property
    def lookback(self) -> int:
        """Columns a tick needs: its window plus the extra ring-law windows."""
        return self.window + self.ring_L - 1


@dataclass(frozen=True)
class LawFit:
    mp_l1_distance: float
    ring_annulus_fraction: float


@dataclass
class TickResult:
    tick: int
    les_value: float
    msr_value: float
    outlier_count: int
    largest_eigenvalue: float
    location: LocationReport | None
    law_fit: LawFit
    status: str = OK

    @classmethod
    def degraded(cls, tick: int) -> "TickResult":
        nan = float("nan")
        return cls(tick, nan, nan, 0, nan, None, LawFit(nan, nan), DEGRADED)


@dataclass
class AnomalyEvent:
    detection_tick: int
    onset_tick: int
    les_drop_magnitude: float
    flagged_rows: list[int] = field(default_factory=list)
    flagged_devices: list[int] = field(default_factory=list)
    augmented_candidates: dict[str, list[int]] | None = None
    mapping_rule: str = "direct"


def _source_values(source) -> np.ndarray:
    v = np.asarray(getattr(source, "values", source), dtype=float)
    if v.ndim != 2:
        raise ShapeMismatch(f"source must be 2-D, got shape {v.shape}")
    return v


def form_window(source, tick: int, t: int) -> RawWindow:
    v = _source_values(source)
    if tick < t:
        raise InsufficientHistory(f"tick {tick} has fewer than {t} columns of history")
    if tick > v.shape[1]:
        raise InsufficientHistory(f"tick {tick} beyond the {v.shape[1]} available columns")
    labels = getattr(source, "row_labels", None) or []
    return RawWindow(v[:, tick - t:tick].copy(), tick - t + 1, tick, labels)


def _window_at(values: np.ndarray, offset: int, tick: int, t: int) -> np.ndarray:
    """Window ending at ``tick`` from a buffer whose first column is tick ``offset + 1``."""
    end = tick - offset
    if tick < t or end - t < 0 or end > values.shape[1]:
        raise InsufficientHistory(f"tick {tick} has fewer than {t} columns of history")
    return values[:, end - t:end]


def haar_seed(seed: int, tick: int) -> list[int]:
    return [int(seed), HAAR_STREAM, int(tick)]


@dataclass
class TickSpectra:
    """Everything computed for one window before it is summarized."""

    tick: int
    spectrum: EigenSpectrum
    mp: MpReference
    ring: EigenSpectrum | None
    ring_ref: RingReference | None
    index_map: AugmentedIndexMap | None


def _spectra(values: np.ndarray, offset: int, tick: int, cfg: DetectorConfig) -> TickSpectra:
    t = cfg.window
    z = standardize(_window_at(values, offset, tick, t))
    p = z.values.shape[0]

    index_map = None
    if cfg.augment is not None:
        xt = tensor_columns(z, cfg.augment)
        cov = augmented_covariance(xt, cfg.augment.weights(t))
        mp = mp_reference(cfg.augment.dim / t, allow_singular=True)
        if cfg.augment.n >= 2 and cfg.augment.k >= 2:
            index_map = AugmentedIndexMap(cfg.augment.n, cfg.augment.k)
    else:
        cov = covariance(z)
        mp = mp_reference(p / t)

    # Ring law on the raw window and its predecessors. Early ticks without
    # enough history reuse the first full window.
    ring = ring_ref = None
    if p <= t:
        ring_windows = [z.values]
        for back in range(1, cfg.ring_L):
            prev = max(tick - back, t)
            ring_windows.append(standardize(_window_at(values, offset, prev, t)).values)
        ring = ring_product(ring_windows, cfg.ring_L, seed=haar_seed(cfg.seed, tick))
        ring_ref = ring_reference(p / t, cfg.ring_L)
    return TickSpectra(tick, eigen(cov), mp, ring, ring_ref, index_map)


def _process(values: np.ndarray, offset: int, tick: int, cfg: DetectorConfig) -> TickResult:
    sp = _spectra(values, offset, tick, cfg)
    lam = sp.spectrum.eigenvalues
    ring_frac = msr_value = math.nan
    if sp.ring is not None:
        msr_value = msr(sp.ring)
        ring_frac = sp.ring_ref.annulus_fraction(sp.ring.eigenvalues, cfg.ring_tol)
    location = locate(sp.spectrum, sp.mp, tick, cfg.confidence_level, cfg.vars_per_device, sp.index_map)
    return TickResult(
        tick=tick,
        les_value=les(sp.spectrum, cfg.test_function),
        msr_value=msr_value,
        outlier_count=int(np.count_nonzero(lam > sp.mp.b)),
        largest_eigenvalue=float(lam[0]),
        location=location,
        law_fit=LawFit(mp_l1_distance(lam, sp.mp, cfg.esd_bins), ring_frac),
    )


def tick_spectra(source, tick: int, cfg: DetectorConfig) -> TickSpectra:
    v = _source_values(source)
    if tick > v.shape[1]:
        raise InsufficientHistory(f"tick {tick} beyond the {v.shape[1]} available columns")
    return _spectra(v, 0, tick, cfg)


def process_tick(source, tick: int, cfg: DetectorConfig) -> TickResult:
    """Spectral analysis of the window ending at ``tick``.

    Propagates :class:`ZeroVarianceRow`; the drivers below turn it into a
    degraded tick.
    """
    v = _source_values(source)
    if tick > v.shape[1]:
        raise InsufficientHistory(f"tick {tick} beyond the {v.shape[1]} available columns")
    return _process(v, 0, tick, cfg)


def _guarded(values: np.ndarray, offset: int, tick: int, cfg: DetectorConfig) -> TickResult:
    try:
        return _process(values, offset, tick, cfg)
    except ZeroVarianceRow as exc:
        log.warning("tick %d degraded: row %d has zero variance", tick, exc.row)
        return TickResult.degraded(tick)


# --------------------------------------------------------------------------- detection


class LesDetector:
    """Streaming median/MAD break test with debounce.

    The trailing baseline stops absorbing values while the series is out of
    band, and the detector re-arms after ``debounce`` in-band ticks.
    """

    def __init__(self, cfg: DetectorConfig):
        self.cfg = cfg
        self._baseline: deque[float] = deque(maxlen=cfg.baseline_span)
        self._pending: list[tuple[int, float, float]] = []  # (tick, value, median)
        self._in_event = False
        self._calm = 0

    def _band(self) -> tuple[float, float]:
        base = np.fromiter(self._baseline, dtype=float)
        med = float(np.median(base))
        mad = MAD_SCALE * float(np.median(np.abs(base - med)))
        return med, max(mad, 1e-12 * max(1.0, abs(med)))

    def update(self, tick: int, value: float, location: LocationReport | None = None) -> AnomalyEvent | None:
        if not math.isfinite(value):
            return None
        if len(self._baseline) < self.cfg.history_len:
            self._baseline.append(value)
            return None
        med, mad = self._band()
        outside = abs(value - med) > self.cfg.mad_kappa * mad
        if self._in_event:
            self._calm = 0 if outside else self._calm + 1
            if self._calm >= self.cfg.debounce:
                self._in_event = False
                self._calm = 0
            return None
        if not outside:
            self._pending.clear()
            self._baseline.append(value)
            return None
        self._pending.append((tick, value, med))
        if len(self._pending) < self.cfg.debounce:
            return None
        onset = self._pending[0][0]
        self._pending.clear()
        self._in_event = True
        self._calm = 0
        ev = AnomalyEvent(detection_tick=tick, onset_tick=onset, les_drop_magnitude=med - value)
        if location is not None:
            ev.flagged_rows = list(location.flagged_rows)
            ev.flagged_devices = list(location.flagged_devices)
            ev.augmented_candidates = location.augmented_candidates
            ev.mapping_rule = location.mapping_rule
        return ev


def detect_all(history: LesSeries, cfg: DetectorConfig,
               locations: dict[int, LocationReport] | None = None) -> list[AnomalyEvent]:
    det = LesDetector(cfg)
    locations = locations or {}
    events = []
    for tick, value in history.points:
        ev = det.update(tick, value, locations.get(tick))
        if ev is not None:
            events.append(ev)
    return events


def detect(history: LesSeries, cfg: DetectorConfig,
           locations: dict[int, LocationReport] | None = None) -> AnomalyEvent | None:
    """First break in ``history``, or ``None``."""
    events = detect_all(history, cfg, locations)
    return events[0] if events else None


# --------------------------------------------------------------------------- drivers


@dataclass
class AnalysisResult:
    ticks: list[TickResult]
    events: list[AnomalyEvent]
    cfg: DetectorConfig

    @property
    def les_series(self) -> LesSeries:
        ok = [r for r in self.ticks if r.status == OK]
        return LesSeries([r.tick for r in ok], [r.les_value for r in ok], self.cfg.test_function)


def tick_schedule(T: int, cfg: DetectorConfig) -> range:
    return range(cfg.window, T + 1, cfg.stride)


def analyze(source, cfg: DetectorConfig, workers: int | None = None) -> AnalysisResult:
    """Offline run over every scheduled tick, optionally in parallel."""
    v = _source_values(source)
    ticks = tick_schedule(v.shape[1], cfg)
    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda j: _guarded(v, 0, j, cfg), ticks))
    else:
        results = [_guarded(v, 0, j, cfg) for j in ticks]
    return AnalysisResult(results, _events_for(results, cfg), cfg)


def _events_for(results: Iterable[TickResult], cfg: DetectorConfig) -> list[AnomalyEvent]:
    det = LesDetector(cfg)
    out = []
    for r in results:
        ev = det.update(r.tick, r.les_value, r.location)
        if ev is not None:
            out.append(ev)
    return out


class StreamingPipeline:
    """Single-consumer column-at-a-time driver.

    Keeps only ``cfg.lookback`` columns and yields the same results as
    :func:`analyze` on the concatenated input.
    """

    def __init__(self, cfg: DetectorConfig, rows: int):
        self.cfg = cfg
        self.rows = rows
        self.detector = LesDetector(cfg)
        self._cols: deque[np.ndarray] = deque(maxlen=cfg.lookback)
        self.tick = 0

    def push(self, column: Sequence[float]) -> tuple[TickResult | None, AnomalyEvent | None]:
        col = np.asarray(column, dtype=float).reshape(-1)
        if col.size != self.rows:
            raise ShapeMismatch(f"column has {col.size} values, expected {self.rows}")
        self._cols.append(col)
        self.tick += 1
        j = self.tick
        if j < self.cfg.window or (j - self.cfg.window) % self.cfg.stride:
            return None, None
        buf = np.column_stack(self._cols)
        res = _guarded(buf, j - buf.shape[1], j, self.cfg)
        return res, self.detector.update(res.tick, res.les_value, res.location)
