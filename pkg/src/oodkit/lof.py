"""Local Outlier Factor in novelty mode.

The model is fit once on in-distribution reference embeddings and then
scores arbitrary query embeddings: a query's score is the mean local
reachability density (lrd) of its K nearest reference points divided by
the query's own lrd. Scores near 1 indicate the query sits in reference
density; scores well above 1 indicate it does not.

Definitions follow the canonical density-ratio formulation:

    k-distance(o)   distance from o to its K-th nearest other reference point
    reach(p, o)     max(k-distance(o), d(p, o))
    lrd(p)          1 / mean_{o in kNN(p)} reach(p, o)
    score(q)        mean_{o in kNN(q)} lrd(o) / lrd(q)

Reference points exclude themselves from their own neighborhoods; queries
are external and exclude nothing. Neighbor ties are broken toward the
lower reference index, and all reach distances are clamped below by
``REACH_FLOOR`` so K-fold duplicate reference points cannot produce
infinite densities.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass

import numpy as np

from .embeddings import METRICS, EmbeddingMatrix, pairwise_distances
from .errors import (
    DataError,
    DegenerateDataError,
    DomainError,
    FormatError,
    ParameterError,
)

REACH_FLOOR = 1e-12

MODEL_MAGIC = b"LOFM"
MODEL_VERSION = 1
_METRIC_CODE = {"euclidean": 0, "cosine": 1}
_CODE_METRIC = {v: k for k, v in _METRIC_CODE.items()}
_MODEL_HEADER = struct.Struct("<4sBBIII")


@dataclass(frozen=True)
class NeighborList:
    """K nearest reference points for one query: indices plus sorted distances."""

    indices: np.ndarray
    distances: np.ndarray


@dataclass(frozen=True)
class LofModel:
    """Fitted K-neighborhood structure over the reference embeddings."""

    train: EmbeddingMatrix
    k: int
    metric: str
    kdist: np.ndarray
    lrd: np.ndarray
    neighbor_indices: np.ndarray
    neighbor_distances: np.ndarray

    @property
    def n(self) -> int:
        return self.train.n

    @property
    def d(self) -> int:
        return self.train.d


@dataclass(frozen=True)
class TrainNeighborCache:
    """Reference-vs-reference distances, fully sorted once.

    Building this is the expensive part of a fit; ``model_for_k`` then
    derives a model for any K by slicing, so a K-sweep over one reference
    set reuses the same sorted structure and reproduces standalone fits
    bit for bit.
    """

    train: EmbeddingMatrix
    metric: str
    sorted_indices: np.ndarray
    sorted_distances: np.ndarray

    @classmethod
    def build(
        cls,
        train: EmbeddingMatrix,
        metric: str,
        workers: int | None = None,
    ) -> "TrainNeighborCache":
        if metric not in METRICS:
            raise ParameterError(f"unknown metric {metric!r}, expected one of {METRICS}")
        if train.n < 2:
            raise ParameterError(f"LOF needs at least 2 reference points, got {train.n}")
        dist = pairwise_distances(train.data, train.data, metric, workers=workers)
        np.fill_diagonal(dist, np.inf)
        order = np.argsort(dist, axis=1, kind="stable")[:, : train.n - 1]
        sorted_dist = np.take_along_axis(dist, order, axis=1)
        if float(sorted_dist[:, -1].max()) == 0.0:
            raise DegenerateDataError(
                "all reference points are identical; LOF densities are undefined"
            )
        order = np.ascontiguousarray(order)
        sorted_dist = np.ascontiguousarray(sorted_dist)
        order.setflags(write=False)
        sorted_dist.setflags(write=False)
        return cls(train=train, metric=metric, sorted_indices=order, sorted_distances=sorted_dist)

    def model_for_k(self, k: int) -> LofModel:
        n = self.train.n
        if k < 1:
            raise ParameterError(f"K must be >= 1, got {k}")
        if k >= n:
            raise ParameterError(f"K must be < n (self is excluded); got K={k}, n={n}")
        idx = np.ascontiguousarray(self.sorted_indices[:, :k])
        nd = np.ascontiguousarray(self.sorted_distances[:, :k])
        kdist = nd[:, -1].copy()
        reach = np.maximum(kdist[idx], nd)
        lrd = 1.0 / np.maximum(reach, REACH_FLOOR).mean(axis=1)
        for arr in (idx, nd, kdist, lrd):
            arr.setflags(write=False)
        return LofModel(
            train=self.train,
            k=int(k),
            metric=self.metric,
            kdist=kdist,
            lrd=lrd,
            neighbor_indices=idx,
            neighbor_distances=nd,
        )


@dataclass(frozen=True)
class QueryNeighborCache:
    """Query-vs-reference distances, fully sorted once per query row."""

    sorted_indices: np.ndarray
    sorted_distances: np.ndarray

    @classmethod
    def build(
        cls,
        queries: np.ndarray,
        train: EmbeddingMatrix,
        metric: str,
        workers: int | None = None,
    ) -> "QueryNeighborCache":
        dist = pairwise_distances(queries, train.data, metric, workers=workers)
        order = np.argsort(dist, axis=1, kind="stable")
        sorted_dist = np.take_along_axis(dist, order, axis=1)
        return cls(sorted_indices=order, sorted_distances=sorted_dist)

    def scores_for(self, model: LofModel) -> np.ndarray:
        k = model.k
        idx = self.sorted_indices[:, :k]
        nd = self.sorted_distances[:, :k]
        reach = np.maximum(model.kdist[idx], nd)
        lrd_q = 1.0 / np.maximum(reach, REACH_FLOOR).mean(axis=1)
        return model.lrd[idx].mean(axis=1) / lrd_q


def _as_query_array(queries, d: int) -> np.ndarray:
    if isinstance(queries, EmbeddingMatrix):
        arr = queries.data
    else:
        arr = np.asarray(queries, dtype=np.float64)
        if arr.ndim == 1:
            arr = arr[None, :]
    if arr.ndim != 2 or (arr.size and arr.shape[1] != d):
        raise ParameterError(f"query shape {arr.shape} does not match model dimension {d}")
    if arr.size and not np.isfinite(arr).all():
        raise DataError("queries contain non-finite values")
    return arr


def knn_query(query: np.ndarray, train: EmbeddingMatrix, k: int, metric: str) -> NeighborList:
    """Exact K nearest reference points of one query vector.

    Queries are external to the reference set, so a query equal to a
    reference point finds that point at distance zero. Ties at the K-th
    distance are broken toward the lower reference index.
    """
    if k < 1:
        raise ParameterError(f"K must be >= 1, got {k}")
    if k > train.n:
        raise ParameterError(f"K must be <= n; got K={k}, n={train.n}")
    arr = _as_query_array(query, train.d)
    if arr.shape[0] != 1:
        raise ParameterError("knn_query takes a single vector")
    row = pairwise_distances(arr, train.data, metric)[0]
    order = np.argsort(row, kind="stable")[:k]
    return NeighborList(indices=order.astype(np.int64), distances=row[order])


def fit_lof(
    train: EmbeddingMatrix,
    k: int,
    metric: str = "cosine",
    workers: int | None = None,
) -> LofModel:
    """Fit the K-neighborhood structure on the reference embeddings.

    Requires 1 <= K < n since reference points exclude themselves from
    their neighborhoods. Rejects an all-duplicate reference set, whose
    densities are undefined.
    """
    if k < 1:
        raise ParameterError(f"K must be >= 1, got {k}")
    if k >= train.n:
        raise ParameterError(f"K must be < n (self is excluded); got K={k}, n={train.n}")
    return TrainNeighborCache.build(train, metric, workers=workers).model_for_k(k)


def reach_dist(p_to_o_distance: float, kdist_o: float) -> float:
    """Reachability distance: max of the point pair distance and kdist(o)."""
    return max(float(p_to_o_distance), float(kdist_o))


def lof_score(query: np.ndarray, model: LofModel) -> float:
    """Score one query vector; higher means more out-of-distribution."""
    return float(lof_score_batch(np.asarray(query, dtype=np.float64)[None, :], model)[0])


def lof_score_batch(
    queries,
    model: LofModel,
    workers: int | None = None,
) -> np.ndarray:
    """Score each query row against the fitted model, order preserving.

    Every query is computed independently on fixed-shape blocks, so the
    output is bitwise identical for any worker count.
    """
    arr = _as_query_array(queries, model.d)
    if arr.shape[0] == 0:
        return np.empty(0, dtype=np.float64)
    if model.metric == "cosine":
        norms = np.linalg.norm(arr, axis=1)
        if (norms == 0.0).any():
            row = int(np.flatnonzero(norms == 0.0)[0])
            raise DomainError(f"cosine metric undefined: zero query vector at row {row}")
    cache = QueryNeighborCache.build(arr, model.train, model.metric, workers=workers)
    return cache.scores_for(model)


def save_lof_model(model: LofModel, path: str | os.PathLike) -> None:
    """Persist the model to a self-describing binary container (bit-exact)."""
    header = _MODEL_HEADER.pack(
        MODEL_MAGIC,
        MODEL_VERSION,
        _METRIC_CODE[model.metric],
        model.k,
        model.n,
        model.d,
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(model.train.data.astype("<f8").tobytes())
        fh.write(model.kdist.astype("<f8").tobytes())
        fh.write(model.lrd.astype("<f8").tobytes())
        fh.write(model.neighbor_indices.astype("<u4").tobytes())
        fh.write(model.neighbor_distances.astype("<f8").tobytes())


def load_lof_model(path: str | os.PathLike) -> LofModel:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _MODEL_HEADER.size:
        raise FormatError(f"{path}: file shorter than model header")
    magic, version, metric_code, k, n, d = _MODEL_HEADER.unpack_from(blob)
    if magic != MODEL_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {MODEL_MAGIC!r}")
    if version != MODEL_VERSION:
        raise FormatError(f"{path}: unsupported model version {version}")
    if metric_code not in _CODE_METRIC:
        raise FormatError(f"{path}: unknown metric code {metric_code}")
    expected = _MODEL_HEADER.size + 8 * n * d + 8 * n + 8 * n + 4 * n * k + 8 * n * k
    if len(blob) != expected:
        raise FormatError(f"{path}: payload size {len(blob)} != expected {expected}")
    offset = _MODEL_HEADER.size
    train = np.frombuffer(blob, dtype="<f8", count=n * d, offset=offset).reshape(n, d)
    offset += 8 * n * d
    kdist = np.frombuffer(blob, dtype="<f8", count=n, offset=offset).copy()
    offset += 8 * n
    lrd = np.frombuffer(blob, dtype="<f8", count=n, offset=offset).copy()
    offset += 8 * n
    idx = np.frombuffer(blob, dtype="<u4", count=n * k, offset=offset).reshape(n, k)
    idx = idx.astype(np.int64)
    offset += 4 * n * k
    nd = np.frombuffer(blob, dtype="<f8", count=n * k, offset=offset).reshape(n, k).copy()
    for arr in (kdist, lrd, idx, nd):
        arr.setflags(write=False)
    return LofModel(
        train=EmbeddingMatrix(train),
        k=int(k),
        metric=_CODE_METRIC[metric_code],
        kdist=kdist,
        lrd=lrd,
        neighbor_indices=idx,
        neighbor_distances=nd,
    )
