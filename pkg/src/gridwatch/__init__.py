"""Streaming spectral anomaly detection and localization for multi-device telemetry."""

from importlib.metadata import PackageNotFoundError, version as _dist_version

from .augment import AugmentConfig, augmented_covariance, tensor_columns
from .errors import ConfigError, GridwatchError, InputError, NumericalError
from .ingest import DataMatrix, NoiseSpec, ScenarioSpec, generate_scenario, parse_csv
from .les import LesSeries, TestFunction, les, msr
from .locator import AugmentedIndexMap, LocationReport, locate
from .pipeline import (
    AnomalyEvent,
    DetectorConfig,
    StreamingPipeline,
    TickResult,
    analyze,
    detect,
    process_tick,
)
from .spectra import EigenSpectrum, covariance, eigen, mp_reference, ring_reference, standardize

try:
    __version__ = _dist_version("artifact")
except PackageNotFoundError:  # running from a source tree
    __version__ = "0.1.0"

__all__ = [
    "AnomalyEvent",
    "AugmentConfig",
    "AugmentedIndexMap",
    "ConfigError",
    "DataMatrix",
    "DetectorConfig",
    "EigenSpectrum",
    "GridwatchError",
    "InputError",
    "LesSeries",
    "LocationReport",
    "NoiseSpec",
    "NumericalError",
    "ScenarioSpec",
    "StreamingPipeline",
    "TestFunction",
    "TickResult",
    "analyze",
    "augmented_covariance",
    "covariance",
    "detect",
    "eigen",
    "generate_scenario",
    "les",
    "locate",
    "mp_reference",
    "msr",
    "parse_csv",
    "process_tick",
    "ring_reference",
    "standardize",
    "tensor_columns",
]
