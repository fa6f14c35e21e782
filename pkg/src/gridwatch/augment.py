"""Tensor-product dimension increase for low-dimensional windows.

A ``p x t`` window with ``p = n*k`` is split into ``k`` contiguous row blocks
of length ``n``. Column ``j`` of the output is the Kronecker product of the
``k`` blocks of column ``j``, so the output has ``n**k`` rows. Tensor index
``(a-1)*n + b`` (1-based) pairs row ``a`` of block one with row ``b`` of block
two.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeMismatch
from .spectra import CovarianceMatrix, _values

MAX_TENSOR_DIM = 10**5


@dataclass(frozen=True)
class AugmentConfig:
    n: int
    k: int = 2
    tau: float | tuple[float, ...] = 1.0
    # scale each column block to Euclidean norm sqrt(n) before the product
    normalize: bool = True

    def __post_init__(self):
        if self.n < 1 or self.k < 1:
            raise ConfigError(f"augment needs n >= 1 and k >= 1, got n={self.n} k={self.k}")
        if self.n**self.k > MAX_TENSOR_DIM:
            raise ConfigError(f"n**k = {self.n ** self.k} exceeds the {MAX_TENSOR_DIM} guard")

    @property
    def dim(self) -> int:
        return self.n**self.k

    def weights(self, t: int) -> np.ndarray:
        return _tau_weights(self.tau, t)


def _tau_weights(tau, t: int) -> np.ndarray:
    tau = np.asarray(tau, dtype=float)
    if tau.ndim == 0:
        return np.full(t, float(tau))
    if tau.shape != (t,):
        raise ShapeMismatch(f"tau has {tau.size} weights for {t} columns")
    return tau


def tensor_columns(x, cfg: AugmentConfig) -> np.ndarray:
    """``n**k x t`` matrix whose columns are Kronecker products of column blocks."""
    xv = _values(x)
    p, t = xv.shape
    n, k = cfg.n, cfg.k
    if p != n * k:
        raise ShapeMismatch(f"window has {p} rows, augmentation needs n*k = {n * k}")
    blocks = [xv[i * n:(i + 1) * n] for i in range(k)]
    if cfg.normalize:
        scaled = []
        for b in blocks:
            norms = np.linalg.norm(b, axis=0, keepdims=True)
            norms[norms == 0] = 1.0
            scaled.append(b * (np.sqrt(n) / norms))
        blocks = scaled
    out = blocks[0]
    for b in blocks[1:]:
        out = np.einsum("it,jt->ijt", out, b).reshape(-1, t)
    return out


def augmented_covariance(xt, tau=1.0) -> CovarianceMatrix:
    """``(1/t) * sum_a tau_a x_a x_a^H`` over the tensor columns."""
    xv = _values(xt)
    t = xv.shape[1]
    m = (xv * _tau_weights(tau, t)) @ xv.T / t
    return CovarianceMatrix(0.5 * (m + m.T))
