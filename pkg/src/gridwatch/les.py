"""Test functions, linear eigenvalue statistics and mean spectral radius."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .errors import ConfigError, DegenerateSeries, EmptySpectrum

EIGEN_FLOOR = 1e-12

CHEBYSHEV = "chebyshev_poly"
ENTROPY = "information_entropy"
LIKELIHOOD = "likelihood_ratio"
WASSERSTEIN = "wasserstein"

SHORT_NAMES = {"cp": CHEBYSHEV, "ie": ENTROPY, "lrf": LIKELIHOOD, "wd": WASSERSTEIN}
KINDS = (CHEBYSHEV, ENTROPY, LIKELIHOOD, WASSERSTEIN)

# highest degree first: [1, 0, 0] is lambda**2
DEFAULT_CP_COEFFS = (1.0, 0.0, 0.0)


@dataclass(frozen=True)
class TestFunction:
    """Eigenvalue mapping used inside a linear eigenvalue statistic.

    Polynomial coefficients are ordered from the highest power down to the
    constant term, so ``(a0, a1, a2)`` means ``a0*x**2 + a1*x + a2``.
    """

    __test__ = False  # keep pytest from collecting this class

    kind: str = ENTROPY
    coefficients: tuple[float, ...] = ()

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown test function {self.kind!r}")
        if self.kind == CHEBYSHEV:
            coeffs = tuple(float(a) for a in (self.coefficients or DEFAULT_CP_COEFFS))
            if not coeffs:
                raise ConfigError("polynomial test function needs coefficients")
            object.__setattr__(self, "coefficients", coeffs)

    @classmethod
    def from_name(cls, name: str, coefficients: Sequence[float] | None = None) -> "TestFunction":
        kind = SHORT_NAMES.get(name.lower(), name.lower())
        return cls(kind, tuple(coefficients or ()))

    @property
    def short_name(self) -> str:
        return {v: k for k, v in SHORT_NAMES.items()}[self.kind]

    def __call__(self, lam) -> np.ndarray:
        lam = np.asarray(lam, dtype=float)
        if self.kind == CHEBYSHEV:
            return np.polyval(self.coefficients, lam)
        if self.kind == ENTROPY:
            fl = np.maximum(lam, EIGEN_FLOOR)
            return -fl * np.log(fl)
        if self.kind == LIKELIHOOD:
            fl = np.maximum(lam, EIGEN_FLOOR)
            return fl - np.log(fl) - 1.0
        return lam - 2.0 * np.sqrt(np.maximum(lam, 0.0)) + 1.0


@dataclass(frozen=True)
class LesSeries:
    ticks: np.ndarray
    values: np.ndarray
    test_function: TestFunction = field(default_factory=TestFunction)
    normalized: bool = False

    def __post_init__(self):
        ticks = np.asarray(self.ticks, dtype=int)
        values = np.asarray(self.values, dtype=float)
        if ticks.shape != values.shape:
            raise ValueError("ticks and values must have equal length")
        if ticks.size > 1 and np.any(np.diff(ticks) <= 0):
            raise ValueError("ticks must be strictly increasing")
        object.__setattr__(self, "ticks", ticks)
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return len(self.ticks)

    @property
    def points(self) -> list[tuple[int, float]]:
        return list(zip(self.ticks.tolist(), self.values.tolist()))


def _eigs(spectrum) -> np.ndarray:
    ev = np.asarray(getattr(spectrum, "eigenvalues", spectrum))
    if ev.size == 0:
        raise EmptySpectrum("empty spectrum")
    return ev


def les(spectrum, phi: TestFunction | None = None) -> float:
    """Sum of ``phi`` over the (real) eigenvalues."""
    ev = _eigs(spectrum)
    phi = phi or TestFunction()
    return float(np.sum(phi(np.real(ev))))


def msr(spectrum) -> float:
    """Mean modulus of the eigenvalues."""
    return float(np.mean(np.abs(_eigs(spectrum))))


def normalize_series(s: LesSeries) -> LesSeries:
    """Affine map of the series onto [0, 1]."""
    lo, hi = float(np.min(s.values)), float(np.max(s.values))
    if not hi > lo:
        raise DegenerateSeries("all LES values are equal")
    return replace(s, values=(s.values - lo) / (hi - lo), normalized=True)
