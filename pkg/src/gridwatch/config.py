"""Run configuration: a YAML document plus command-line overrides."""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any

import yaml

from .augment import AugmentConfig
from .errors import ConfigError, InputError
from .les import TestFunction
from .pipeline import DetectorConfig

EMIT_KEYS = ("esd", "ring", "les", "eta_surface", "events")

_DETECTOR_KEYS = {
    "window", "stride", "confidence_level", "ring_L", "mad_kappa", "history_len",
    "debounce", "vars_per_device", "esd_bins", "ring_tol",
}
_TOP_KEYS = {"input", "scenario", "seed", "noise", "detector", "augment", "emit", "calibration_ticks", "normalize"}


@dataclass(frozen=True)
class RunConfig:
    input: Path | None = None
    scenario: Path | None = None
    seed: int = 0
    tau_snr: float | None = 500.0
    normalize: bool = True
    detector: DetectorConfig = field(default_factory=DetectorConfig)
    emit: dict[str, bool] = field(default_factory=lambda: {k: True for k in EMIT_KEYS})
    calibration_ticks: int | None = None

    def validate(self, need_source: bool = True) -> None:
        if need_source and (self.input is None) == (self.scenario is None):
            raise ConfigError("exactly one of input and scenario must be given")
        if self.tau_snr is not None and not self.tau_snr > 0:
            raise ConfigError("noise.tau_snr must be positive or null")
        if self.calibration_ticks is not None and self.calibration_ticks < 2:
            raise ConfigError("calibration_ticks must be >= 2")

    def echo(self) -> dict[str, Any]:
        """Plain-data view used by the run manifest."""
        d = self.detector
        aug = None
        if d.augment is not None:
            tau = d.augment.tau
            aug = {"n": d.augment.n, "k": d.augment.k, "normalize": d.augment.normalize,
                   "tau": list(tau) if isinstance(tau, tuple) else tau}
        det = {f.name: getattr(d, f.name) for f in fields(d) if f.name in _DETECTOR_KEYS}
        det["test_function"] = d.test_function.short_name
        if d.test_function.coefficients:
            det["cp_coeffs"] = list(d.test_function.coefficients)
        return {
            "input": str(self.input) if self.input else None,
            "scenario": str(self.scenario) if self.scenario else None,
            "seed": self.seed,
            "noise": {"tau_snr": self.tau_snr},
            "normalize": self.normalize,
            "detector": det,
            "augment": aug,
            "emit": dict(self.emit),
            "calibration_ticks": self.calibration_ticks,
        }


def load_yaml(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror or exc}") from exc
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML ({exc.__class__.__name__})") from None
    if doc is None:
        return {}
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return doc


def _section(doc: dict, key: str) -> dict:
    sec = doc.get(key) or {}
    if not isinstance(sec, dict):
        raise ConfigError(f"config section {key!r} must be a mapping")
    return sec


def _augment(sec: dict) -> AugmentConfig | None:
    if not sec or not sec.get("enabled", True):
        return None
    tau = sec.get("tau", 1.0)
    if isinstance(tau, list):
        tau = tuple(float(x) for x in tau)
    return AugmentConfig(int(sec["n"]), int(sec.get("k", 2)), tau, bool(sec.get("normalize", True)))


def from_dict(doc: dict, base_dir: Path | None = None) -> RunConfig:
    unknown = set(doc) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
    base_dir = base_dir or Path(".")
    try:
        det = _section(doc, "detector")
        bad = set(det) - _DETECTOR_KEYS - {"test_function", "cp_coeffs"}
        if bad:
            raise ConfigError(f"unknown detector keys: {', '.join(sorted(bad))}")
        tf = TestFunction.from_name(str(det.get("test_function", "ie")), det.get("cp_coeffs"))
        seed = int(doc.get("seed", 0))
        dcfg = DetectorConfig(
            test_function=tf,
            augment=_augment(_section(doc, "augment")),
            seed=seed,
            **{k: det[k] for k in _DETECTOR_KEYS if k in det},
        )
        noise = _section(doc, "noise")
        tau = noise.get("tau_snr", 500.0)
        emit = {k: True for k in EMIT_KEYS}
        for k, v in _section(doc, "emit").items():
            if k not in EMIT_KEYS:
                raise ConfigError(f"unknown emit flag {k!r}")
            emit[k] = bool(v)
        cal = doc.get("calibration_ticks")
        cfg = RunConfig(
            input=(base_dir / doc["input"]) if doc.get("input") else None,
            scenario=(base_dir / doc["scenario"]) if doc.get("scenario") else None,
            seed=seed,
            tau_snr=None if tau is None else float(tau),
            normalize=bool(doc.get("normalize", True)),
            detector=dcfg,
            emit=emit,
            calibration_ticks=None if cal is None else int(cal),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad config value: {exc}") from None
    return cfg


def load(path) -> RunConfig:
    path = Path(path)
    return from_dict(load_yaml(path), path.parent)


def with_overrides(cfg: RunConfig, **kw) -> RunConfig:
    """Apply non-``None`` command-line overrides."""
    det = cfg.detector
    updates: dict[str, Any] = {}
    if kw.get("input") is not None:
        updates.update(input=Path(kw["input"]), scenario=None)
    if kw.get("scenario") is not None:
        updates.update(scenario=Path(kw["scenario"]), input=None)
    if kw.get("seed") is not None:
        updates["seed"] = int(kw["seed"])
        det = replace(det, seed=int(kw["seed"]))
    if kw.get("test_function") is not None or kw.get("cp_coeffs") is not None:
        name = kw.get("test_function") or det.test_function.short_name
        coeffs = kw.get("cp_coeffs") or (det.test_function.coefficients if name == "cp" else None)
        det = replace(det, test_function=TestFunction.from_name(name, coeffs))
    updates["detector"] = det
    return replace(cfg, **updates)
