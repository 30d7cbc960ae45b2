"""Gaussian reference statistics and Mahalanobis scoring.

Fits the in-distribution sample mean and covariance once, then scores a
query x as sqrt((x - mu)^T (Sigma + eps*I)^{-1} (x - mu)) via a cached
Cholesky factor. Higher scores are further from the reference
distribution. Only a single global Gaussian is fit; reports downstream
record that choice.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from .embeddings import EmbeddingMatrix
from .errors import DataError, FormatError, NumericalError, ParameterError

STATS_MAGIC = b"SSDM"
STATS_VERSION = 1
_STATS_HEADER = struct.Struct("<4sBId")

SYMMETRY_TOLERANCE = 1e-9


@dataclass(frozen=True)
class GaussianStats:
    """Mean, regularized covariance, and its lower Cholesky factor."""

    mu: np.ndarray
    sigma: np.ndarray
    epsilon: float
    factor: np.ndarray

    @classmethod
    def from_moments(cls, mu: np.ndarray, sigma: np.ndarray, epsilon: float) -> "GaussianStats":
        mu = np.ascontiguousarray(mu, dtype=np.float64)
        sigma = np.ascontiguousarray(sigma, dtype=np.float64)
        if mu.ndim != 1 or sigma.shape != (mu.size, mu.size):
            raise ParameterError(f"moment shapes disagree: mu {mu.shape}, sigma {sigma.shape}")
        if not (np.isfinite(mu).all() and np.isfinite(sigma).all()):
            raise DataError("moments contain non-finite values")
        if epsilon < 0:
            raise ParameterError(f"epsilon must be >= 0, got {epsilon}")
        if np.abs(sigma - sigma.T).max() > SYMMETRY_TOLERANCE:
            raise DataError("covariance is not symmetric")
        regularized = sigma + epsilon * np.eye(mu.size)
        try:
            factor = np.linalg.cholesky(regularized)
        except np.linalg.LinAlgError as exc:
            raise NumericalError(
                f"covariance factorization failed at epsilon={epsilon!r}; "
                "increase the regularization strength"
            ) from exc
        for arr in (mu, sigma, factor):
            arr.setflags(write=False)
        return cls(mu=mu, sigma=sigma, epsilon=float(epsilon), factor=factor)

    @property
    def d(self) -> int:
        return self.mu.size


def default_epsilon(sigma: np.ndarray) -> float:
    """Scale-aware diagonal loading: 1e-3 * trace(Sigma) / d."""
    d = sigma.shape[0]
    return 1e-3 * float(np.trace(sigma)) / d


def fit_gaussian(train: EmbeddingMatrix, epsilon: float | None = None) -> GaussianStats:
    """Estimate mu and the unbiased (n-1) covariance of the reference rows.

    ``epsilon`` defaults to ``default_epsilon``; embeddings often have
    d > n, which makes the raw covariance singular.
    """
    if train.n < 2:
        raise ParameterError(f"covariance needs at least 2 samples, got {train.n}")
    mu = train.data.mean(axis=0)
    centered = train.data - mu
    sigma = centered.T @ centered / (train.n - 1)
    sigma = 0.5 * (sigma + sigma.T)
    if epsilon is None:
        epsilon = default_epsilon(sigma)
    return GaussianStats.from_moments(mu, sigma, epsilon)


def _as_query_rows(queries, d: int) -> np.ndarray:
    if isinstance(queries, EmbeddingMatrix):
        arr = queries.data
    else:
        arr = np.asarray(queries, dtype=np.float64)
        if arr.ndim == 1:
            arr = arr[None, :]
    if arr.ndim != 2 or (arr.size and arr.shape[1] != d):
        raise ParameterError(f"query shape {arr.shape} does not match dimension {d}")
    if arr.size and not np.isfinite(arr).all():
        raise DataError("queries contain non-finite values")
    return arr


def mahalanobis_score(query: np.ndarray, stats: GaussianStats) -> float:
    """Mahalanobis distance of one query from the reference statistics."""
    return float(mahalanobis_score_batch(np.asarray(query, dtype=np.float64)[None, :], stats)[0])


def mahalanobis_score_batch(queries, stats: GaussianStats) -> np.ndarray:
    """Elementwise Mahalanobis distances, order preserving.

    Solved column by column against the cached triangular factor; each
    query's result is independent of the others.
    """
    arr = _as_query_rows(queries, stats.d)
    if arr.shape[0] == 0:
        return np.empty(0, dtype=np.float64)
    solved = solve_triangular(stats.factor, (arr - stats.mu).T, lower=True)
    return np.sqrt(np.einsum("dn,dn->n", solved, solved))


def save_gaussian_stats(stats: GaussianStats, path: str | os.PathLike) -> None:
    """Persist mu, sigma, and epsilon; the factor is recomputed on load."""
    header = _STATS_HEADER.pack(STATS_MAGIC, STATS_VERSION, stats.d, stats.epsilon)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(stats.mu.astype("<f8").tobytes())
        fh.write(stats.sigma.astype("<f8").tobytes())


def load_gaussian_stats(path: str | os.PathLike) -> GaussianStats:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _STATS_HEADER.size:
        raise FormatError(f"{path}: file shorter than stats header")
    magic, version, d, epsilon = _STATS_HEADER.unpack_from(blob)
    if magic != STATS_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {STATS_MAGIC!r}")
    if version != STATS_VERSION:
        raise FormatError(f"{path}: unsupported stats version {version}")
    expected = _STATS_HEADER.size + 8 * d + 8 * d * d
    if len(blob) != expected:
        raise FormatError(f"{path}: payload size {len(blob)} != expected {expected}")
    offset = _STATS_HEADER.size
    mu = np.frombuffer(blob, dtype="<f8", count=d, offset=offset).copy()
    offset += 8 * d
    sigma = np.frombuffer(blob, dtype="<f8", count=d * d, offset=offset).reshape(d, d).copy()
    return GaussianStats.from_moments(mu, sigma, epsilon)
