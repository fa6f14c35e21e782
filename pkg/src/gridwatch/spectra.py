"""Window standardization, covariance spectra and the two reference laws.

Everything here is a pure function of its inputs plus an explicit seed.
Windows are ``p x t`` arrays: rows are measured variables, columns are
sampling instants.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import (
    ConvergenceFailure,
    EmptySpectrum,
    InvalidRatio,
    ShapeMismatch,
    ZeroVarianceRow,
)

RowLabel = tuple[int, str]

COVARIANCE = "covariance"
RING_PRODUCT = "ring_product"


@dataclass(frozen=True)
class RawWindow:
    """A ``p x t`` slice of the data matrix ending at ``end_tick`` (1-based ticks)."""

    values: np.ndarray
    start_tick: int
    end_tick: int
    row_labels: list[RowLabel] = field(default_factory=list)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 2:
            raise ShapeMismatch(f"window must be 2-D, got shape {values.shape}")
        p, t = values.shape
        if p < 1 or t < 2:
            raise ShapeMismatch(f"window needs p >= 1 and t >= 2, got {p}x{t}")
        if p > t:
            raise InvalidRatio(f"p/t = {p}/{t} > 1; both reference laws need c in (0, 1]")
        if self.end_tick - self.start_tick + 1 != t:
            raise ShapeMismatch(
                f"tick span {self.start_tick}..{self.end_tick} does not match {t} columns"
            )
        labels = list(self.row_labels) or [(i, "") for i in range(p)]
        if len(labels) != p:
            raise ShapeMismatch(f"{len(labels)} row labels for {p} rows")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "row_labels", labels)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


@dataclass(frozen=True)
class StandardizedWindow:
    """Window whose rows have mean 0 and population standard deviation 1."""

    values: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


@dataclass(frozen=True)
class CovarianceMatrix:
    values: np.ndarray

    @property
    def p(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class EigenSpectrum:
    """Eigenvalues sorted descending (by modulus for ring products).

    ``eigenvectors`` column ``k`` pairs with ``eigenvalues[k]``; it is ``None``
    for ring-product spectra.
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray | None
    source_kind: str = COVARIANCE

    def __len__(self) -> int:
        return len(self.eigenvalues)


@dataclass(frozen=True)
class MpReference:
    """Marchenko-Pastur law for ``(1/t) X X^H`` with ratio ``c = p/t``.

    When ``c > 1`` (only reachable through ``allow_singular``) the law has an
    atom of mass ``1 - 1/c`` at zero; :meth:`pdf` and :meth:`cdf` describe the
    continuous part only, whose total mass is then ``1/c``.
    """

    c: float
    sigma2: float
    a: float
    b: float

    @property
    def atom(self) -> float:
        return max(0.0, 1.0 - 1.0 / self.c)

    def pdf(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        inside = (x > self.a) & (x < self.b) & (x > 0)
        xi = x[inside]
        out[inside] = np.sqrt((self.b - xi) * (xi - self.a)) / (
            2.0 * np.pi * self.c * self.sigma2 * xi
        )
        return out

    def cdf(self, x) -> np.ndarray:
        """Mass of the continuous part on ``(-inf, x]``.

        Closed form obtained with ``x = m - r cos(theta)``, ``m = (a+b)/2``,
        ``r = (b-a)/2``.
        """
        x = np.asarray(x, dtype=float)
        c = self.c
        rc = np.sqrt(c)
        m = 0.5 * (self.a + self.b)
        r = 0.5 * (self.b - self.a)
        cos_theta = np.clip((m - x) / r, -1.0, 1.0)
        theta = np.arccos(cos_theta)
        out = (1.0 + c) * theta + 2.0 * rc * np.sin(theta)
        if c != 1.0:
            ratio = (1.0 + rc) / abs(1.0 - rc)
            out -= 2.0 * abs(1.0 - c) * np.arctan(ratio * np.tan(theta / 2.0))
        return out / (2.0 * np.pi * c)

    def mass_between(self, lo, hi) -> np.ndarray:
        return self.cdf(hi) - self.cdf(lo)

    def contains(self, x, tol: float = 0.0) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return (x >= self.a - tol) & (x <= self.b + tol)


@dataclass(frozen=True)
class RingReference:
    c: float
    L: int
    inner_radius: float

    outer_radius: float = 1.0

    def pdf(self, z) -> np.ndarray:
        r = np.abs(np.asarray(z))
        out = np.zeros(r.shape, dtype=float)
        inside = (r >= self.inner_radius) & (r <= self.outer_radius) & (r > 0)
        out[inside] = r[inside] ** (2.0 / self.L - 2.0) / (np.pi * self.c * self.L)
        return out

    def annulus_fraction(self, eigenvalues, tol: float = 0.02) -> float:
        r = np.abs(np.asarray(eigenvalues))
        if r.size == 0:
            raise EmptySpectrum("no eigenvalues")
        ok = (r >= self.inner_radius - tol) & (r <= self.outer_radius + tol)
        return float(np.mean(ok))


@dataclass(frozen=True)
class EsdHistogram:
    bin_edges: np.ndarray
    counts: np.ndarray
    normalized_density: np.ndarray

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.bin_edges)


def _values(x) -> np.ndarray:
    return np.asarray(getattr(x, "values", x), dtype=float)


def standardize(window) -> StandardizedWindow:
    """Shift and scale every row to mean 0, population std 1.

    Raises :class:`ZeroVarianceRow` with the first offending row (0-based).
    """
    x = _values(window)
    mu = x.mean(axis=1, keepdims=True)
    sd = x.std(axis=1, keepdims=True)
    flat = np.flatnonzero(sd.ravel() <= 1e-12)
    if flat.size:
        raise ZeroVarianceRow(int(flat[0]))
    return StandardizedWindow((x - mu) / sd)


def covariance(x) -> CovarianceMatrix:
    xv = _values(x)
    t = xv.shape[1]
    sigma = xv @ xv.T / t
    # exact symmetry so eigh sees a clean input
    sigma = 0.5 * (sigma + sigma.T)
    return CovarianceMatrix(sigma)


def eigen(m) -> EigenSpectrum:
    """Symmetric eigendecomposition, eigenvalues sorted descending."""
    mv = _values(m)
    if mv.ndim != 2 or mv.shape[0] != mv.shape[1]:
        raise ShapeMismatch(f"eigen needs a square matrix, got {mv.shape}")
    if not np.all(np.isfinite(mv)):
        raise ConvergenceFailure("matrix has non-finite entries")
    try:
        w, v = np.linalg.eigh(mv)
    except np.linalg.LinAlgError as exc:
        raise ConvergenceFailure(str(exc)) from exc
    return EigenSpectrum(w[::-1].copy(), v[:, ::-1].copy(), COVARIANCE)


def mp_reference(c: float, sigma2: float = 1.0, allow_singular: bool = False) -> MpReference:
    """Marchenko-Pastur support for ratio ``c`` and entry variance ``sigma2``.

    ``c`` must lie in ``(0, 1]`` unless ``allow_singular`` is set, which the
    dimension-augmented path uses (its ``n**k`` rows may exceed ``t``).
    """
    if not (c > 0) or (c > 1 and not allow_singular) or not np.isfinite(c):
        raise InvalidRatio(f"ratio c={c} outside (0, 1]")
    if not sigma2 > 0:
        raise InvalidRatio(f"variance must be positive, got {sigma2}")
    rc = np.sqrt(c)
    return MpReference(float(c), float(sigma2), sigma2 * (1 - rc) ** 2, sigma2 * (1 + rc) ** 2)


def ring_reference(c: float, L: int = 1) -> RingReference:
    if not (0 < c <= 1):
        raise InvalidRatio(f"ratio c={c} outside (0, 1]")
    if L < 1:
        raise InvalidRatio(f"product length L must be >= 1, got {L}")
    return RingReference(float(c), int(L), float((1.0 - c) ** (L / 2.0)))


def haar_orthogonal(p: int, seed) -> np.ndarray:
    """Haar-distributed ``p x p`` orthogonal matrix (QR with sign-fixed R)."""
    rng = np.random.default_rng(seed)
    q, r = np.linalg.qr(rng.standard_normal((p, p)))
    d = np.sign(np.diag(r))
    d[d == 0] = 1.0
    return q * d


def _psd_sqrt(m: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(0.5 * (m + m.T))
    return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T


def singular_value_equivalent(x, seed) -> np.ndarray:
    """Square matrix ``sqrt(X X^H) U`` sharing the singular values of ``X``."""
    xv = _values(x)
    p, t = xv.shape
    if p > t:
        raise ShapeMismatch(f"singular value equivalent needs p <= t, got {p}x{t}")
    return _psd_sqrt(xv @ xv.T) @ haar_orthogonal(p, seed)


def rescale_rows(z: np.ndarray) -> np.ndarray:
    """Scale each row so its population variance is ``1/p``.

    Rows are not re-centred: subtracting row means deflates ``z`` by a rank-one
    term that drags a few percent of eigenvalues inside the inner ring.
    """
    p = z.shape[0]
    sd = z.std(axis=1, keepdims=True)
    return z / (np.sqrt(p) * sd)


def ring_product(windows: Sequence, L: int = 1, seed=None) -> EigenSpectrum:
    """Eigenvalues of the rescaled product of ``L`` singular value equivalents."""
    if len(windows) != L:
        raise ShapeMismatch(f"expected {L} windows, got {len(windows)}")
    mats = [_values(w) for w in windows]
    shape = mats[0].shape
    if any(m.shape != shape for m in mats):
        raise ShapeMismatch("all windows in a ring product must share one shape")
    seeds = np.random.SeedSequence(seed).spawn(L)
    z = singular_value_equivalent(mats[0], seeds[0])
    for m, s in zip(mats[1:], seeds[1:]):
        z = z @ singular_value_equivalent(m, s)
    zhat = rescale_rows(z)
    try:
        ev = np.linalg.eigvals(zhat)
    except np.linalg.LinAlgError as exc:
        raise ConvergenceFailure(str(exc)) from exc
    order = np.argsort(-np.abs(ev), kind="stable")
    return EigenSpectrum(ev[order], None, RING_PRODUCT)


def esd_histogram(spectrum, bins: int = 50) -> EsdHistogram:
    """Density-normalized histogram over ``[min, max]`` of the spectrum.

    Ring spectra are histogrammed by modulus.
    """
    ev = np.asarray(getattr(spectrum, "eigenvalues", spectrum))
    if ev.size == 0:
        raise EmptySpectrum("cannot histogram an empty spectrum")
    if bins < 5:
        raise ValueError(f"need at least 5 bins, got {bins}")
    vals = np.abs(ev) if np.iscomplexobj(ev) else ev.astype(float)
    counts, edges = np.histogram(vals, bins=bins, range=(vals.min(), vals.max()))
    density = counts / (counts.sum() * np.diff(edges))
    return EsdHistogram(edges, counts, density)


def mp_l1_distance(eigenvalues, mp: MpReference, bins: int = 50, zero_tol: float = 1e-9) -> float:
    """L1 distance between the binned ESD and the MP law.

    Each bin's empirical mass is compared with the exact MP mass on that bin;
    MP mass falling outside the histogram range counts in full. For ``c > 1``
    the eigenvalues below ``zero_tol * max`` are matched against the atom at
    zero and the remainder against the continuous part.
    """
    ev = np.asarray(eigenvalues, dtype=float)
    if ev.size == 0:
        raise EmptySpectrum("no eigenvalues")
    atom_term = 0.0
    n = ev.size
    if mp.c > 1:
        zero = ev <= zero_tol * max(float(ev.max()), 1.0)
        atom_term = abs(zero.mean() - mp.atom)
        ev = ev[~zero]
        if ev.size == 0:
            return atom_term + (1.0 - mp.atom)
    hist = esd_histogram(ev, bins)
    emp_mass = hist.counts / n
    theo = mp.mass_between(hist.bin_edges[:-1], hist.bin_edges[1:])
    continuous = 1.0 - mp.atom
    return float(np.abs(emp_mass - theo).sum() + max(continuous - theo.sum(), 0.0) + atom_term)
