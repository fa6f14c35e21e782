"""Outlier-eigenvector anomaly localization.

Index conventions:
    * row indices of the location indicator and tensor indices of an augmented
      window are 1-based;
    * device indices are 0-based (row ``r`` of a 7-variable layout belongs to
      device ``(r - 1) // 7``).

:func:`eigen_sensitivity` perturbs a single covariance entry ``(i, j)``; it
does not perturb the mirrored entry ``(j, i)``. Perturbing both would double
every off-diagonal value.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np
from scipy.stats import norm

from .errors import DegenerateEigenvalue, IndexOutOfRange, ConfigError
from .spectra import EigenSpectrum, MpReference, eigen

CEIL_DIVIDE = "ceil_divide"
MOD_SHIFT = "mod_shift"
BOTH = "both"
RULES = (CEIL_DIVIDE, MOD_SHIFT, BOTH)


@dataclass
class LocationReport:
    tick: int
    eta: np.ndarray
    eta_threshold: float
    flagged_rows: list[int]
    flagged_devices: list[int]
    z_coefficient: float
    confidence_level: float
    # only for augmented windows: original-row candidates keyed by mapping rule
    augmented_candidates: dict[str, list[int]] | None = None
    mapping_rule: str = "direct"


@dataclass(frozen=True)
class AugmentedIndexMap:
    n: int
    k: int = 2
    rule: str = BOTH

    def __post_init__(self):
        if self.n < 2 or self.k < 2:
            raise ConfigError(f"augmented index map needs n >= 2 and k >= 2, got n={self.n} k={self.k}")
        if self.rule not in RULES:
            raise ConfigError(f"unknown mapping rule {self.rule!r}")


def eta_indicator(spectrum: EigenSpectrum, mp: MpReference) -> np.ndarray:
    """Per-row share of the outlier eigenvalues (those above ``mp.b``)."""
    lam = np.real(np.asarray(spectrum.eigenvalues))
    vecs = spectrum.eigenvectors
    if vecs is None:
        raise ValueError("location indicator needs eigenvectors")
    out = lam > mp.b
    eta = np.zeros(vecs.shape[0])
    if out.any():
        eta = (vecs[:, out] ** 2) @ lam[out] / lam.sum()
    return eta


def z_for_confidence(confidence_level: float) -> float:
    if not 0 < confidence_level < 1:
        raise ConfigError(f"confidence level must be in (0, 1), got {confidence_level}")
    return float(norm.ppf(0.5 + confidence_level / 2.0))


def eta_threshold(eta, confidence_level: float = 0.95) -> float:
    """Mean plus ``z`` population standard deviations of ``eta``."""
    eta = np.asarray(eta, dtype=float)
    if eta.size < 2:
        raise ValueError("threshold needs at least two rows")
    return float(eta.mean() + z_for_confidence(confidence_level) * eta.std())


def flag_rows(eta, threshold: float) -> list[int]:
    eta = np.asarray(eta, dtype=float)
    return (np.flatnonzero(eta > threshold) + 1).tolist()


def rows_to_devices(rows: Iterable[int], vars_per_device: int = 7) -> list[int]:
    """Map 0-based matrix rows onto 0-based device indices."""
    if vars_per_device < 1:
        raise ConfigError("vars_per_device must be >= 1")
    return sorted({int(r) // vars_per_device for r in rows})


def map_augmented_indices(itilde: Iterable[int], imap: AugmentedIndexMap) -> dict[str, list[int]]:
    """Back-map 1-based tensor indices onto original rows.

    ``ceil_divide`` gives ``ceil(i / n)`` (signals in the first block);
    ``mod_shift`` gives ``(i mod n) + n`` (signals in the second block).
    """
    idx = np.asarray(sorted(set(int(i) for i in itilde)), dtype=np.int64)
    n, top = imap.n, imap.n**imap.k
    if idx.size and (idx.min() < 1 or idx.max() > top):
        raise IndexOutOfRange(f"augmented indices must lie in [1, {top}]")
    out: dict[str, list[int]] = {}
    if imap.rule in (CEIL_DIVIDE, BOTH):
        out[CEIL_DIVIDE] = sorted(set((-(-idx // n)).tolist()))
    if imap.rule in (MOD_SHIFT, BOTH):
        out[MOD_SHIFT] = sorted(set((idx % n + n).tolist()))
    return out


def eigen_sensitivity(sigma, k: int, i: int, j: int, gap_tol: float = 1e-8) -> float:
    """Analytic derivative of the ``k``-th largest eigenvalue w.r.t. entry ``(i, j)``.

    All indices are 1-based. Raises :class:`DegenerateEigenvalue` when the
    eigenvalue is not separated from its neighbours by more than ``gap_tol``.
    """
    spec = sigma if isinstance(sigma, EigenSpectrum) else eigen(sigma)
    lam = spec.eigenvalues
    p = len(lam)
    if not (1 <= k <= p and 1 <= i <= p and 1 <= j <= p):
        raise IndexOutOfRange(f"indices (k={k}, i={i}, j={j}) outside 1..{p}")
    gaps = [abs(lam[k - 1] - lam[q]) for q in (k - 2, k) if 0 <= q < p]
    if gaps and min(gaps) <= gap_tol:
        raise DegenerateEigenvalue(f"eigenvalue {k} is not simple (gap {min(gaps):.3g})")
    v = spec.eigenvectors[:, k - 1]
    return float(v[i - 1] * v[j - 1])


def locate(
    spectrum: EigenSpectrum,
    mp: MpReference,
    tick: int,
    confidence_level: float = 0.95,
    vars_per_device: int = 7,
    index_map: AugmentedIndexMap | None = None,
) -> LocationReport:
    """Indicator, threshold, flagged rows and device mapping for one window."""
    eta = eta_indicator(spectrum, mp)
    th = eta_threshold(eta, confidence_level)
    rows = flag_rows(eta, th)
    if index_map is None:
        devices = rows_to_devices([r - 1 for r in rows], vars_per_device)
        return LocationReport(tick, eta, th, rows, devices, z_for_confidence(confidence_level),
                              confidence_level)
    cands = map_augmented_indices(rows, index_map)
    devices = sorted({d for c in cands.values() for d in rows_to_devices([r - 1 for r in c], vars_per_device)})
    return LocationReport(tick, eta, th, rows, devices, z_for_confidence(confidence_level),
                          confidence_level, augmented_candidates=cands, mapping_rule=index_map.rule)
