"""Embedding matrices: in-memory model, file formats, and distance kernels.

The binary embedding file starts with the magic bytes ``OODE``, a u8 format
version (1), little-endian u32 row and column counts, then the matrix as
row-major little-endian IEEE-754 float32. The CSV format is one row per
sample, comma-separated decimal reals, no header. Values are held and
computed in float64 regardless of on-disk precision.
"""

from __future__ import annotations

import os
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .errors import DataError, DomainError, FormatError, ParameterError

EMBEDDING_MAGIC = b"OODE"
EMBEDDING_VERSION = 1
METRICS = ("cosine", "euclidean")

NORM_TOLERANCE = 1e-6
_HEADER = struct.Struct("<4sBII")
_BLOCK_ROWS = 256


@dataclass(frozen=True)
class EmbeddingMatrix:
    """N x D matrix of feature vectors, one embedding per row.

    Rows must be finite. When ``normalized`` is set, every row must have
    unit L2 norm within ``NORM_TOLERANCE``. The backing array is made
    read-only, so instances are safe to share across threads.
    """

    data: np.ndarray
    normalized: bool = False

    def __post_init__(self):
        arr = np.ascontiguousarray(self.data, dtype=np.float64)
        if arr.ndim != 2:
            raise DataError(f"embedding data must be 2-D, got shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise DataError(f"embedding matrix must be at least 1x1, got {arr.shape}")
        finite_rows = np.isfinite(arr).all(axis=1)
        if not finite_rows.all():
            row = int(np.flatnonzero(~finite_rows)[0])
            raise DataError(f"non-finite value in embedding row {row}")
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)
        if self.normalized:
            norms = np.linalg.norm(arr, axis=1)
            off = np.abs(norms - 1.0) > NORM_TOLERANCE
            if off.any():
                row = int(np.flatnonzero(off)[0])
                raise DataError(
                    f"normalized flag set but row {row} has L2 norm {norms[row]!r}"
                )

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def d(self) -> int:
        return self.data.shape[1]

    def row(self, i: int) -> np.ndarray:
        return self.data[i]


def _reject_zero_rows(arr: np.ndarray) -> None:
    norms = np.linalg.norm(arr, axis=1)
    zero = norms == 0.0
    if zero.any():
        row = int(np.flatnonzero(zero)[0])
        raise DataError(f"zero embedding vector at row {row}")


def load_embeddings(path: str | os.PathLike, format: str = "binary") -> EmbeddingMatrix:
    """Load an embedding matrix from ``path``.

    ``format`` is ``"binary"`` (OODE container) or ``"csv"``. Non-finite
    entries and zero rows are rejected with the offending row index;
    cosine geometry is undefined on zero vectors, so they never enter
    the pipeline.
    """
    if format == "binary":
        arr = _read_binary(path)
    elif format == "csv":
        arr = _read_csv(path)
    else:
        raise ParameterError(f"unknown embedding format {format!r}")
    matrix = EmbeddingMatrix(arr)
    _reject_zero_rows(matrix.data)
    return matrix


def save_embeddings(matrix: EmbeddingMatrix, path: str | os.PathLike, format: str = "binary") -> None:
    """Write ``matrix`` to ``path`` in the binary or CSV format.

    The binary format stores float32; values outside float32 precision are
    rounded on write.
    """
    if format == "binary":
        payload = matrix.data.astype("<f4").tobytes()
        header = _HEADER.pack(EMBEDDING_MAGIC, EMBEDDING_VERSION, matrix.n, matrix.d)
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(payload)
    elif format == "csv":
        lines = [",".join(repr(float(v)) for v in row) for row in matrix.data]
        with open(path, "w", encoding="ascii", newline="\n") as fh:
            fh.write("\n".join(lines) + "\n")
    else:
        raise ParameterError(f"unknown embedding format {format!r}")


def _read_binary(path) -> np.ndarray:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _HEADER.size:
        raise FormatError(f"{path}: file shorter than embedding header")
    magic, version, n, d = _HEADER.unpack_from(blob)
    if magic != EMBEDDING_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {EMBEDDING_MAGIC!r}")
    if version != EMBEDDING_VERSION:
        raise FormatError(f"{path}: unsupported embedding format version {version}")
    if n < 1 or d < 1:
        raise FormatError(f"{path}: header declares empty matrix ({n}x{d})")
    expected = _HEADER.size + 4 * n * d
    if len(blob) != expected:
        raise FormatError(
            f"{path}: payload is {len(blob) - _HEADER.size} bytes, expected {4 * n * d}"
        )
    flat = np.frombuffer(blob, dtype="<f4", offset=_HEADER.size)
    return flat.astype(np.float64).reshape(n, d)


def _read_csv(path) -> np.ndarray:
    rows: list[list[float]] = []
    width = None
    with open(path, "r", encoding="ascii") as fh:
        for lineno, line in enumerate(fh):
            stripped = line.strip()
            if not stripped:
                continue
            cells = stripped.split(",")
            if width is None:
                width = len(cells)
            elif len(cells) != width:
                raise DataError(
                    f"{path}: row {len(rows)} has {len(cells)} values, expected {width}"
                )
            try:
                rows.append([float(c) for c in cells])
            except ValueError as exc:
                raise DataError(f"{path}: row {len(rows)}: {exc}") from exc
    if not rows:
        raise DataError(f"{path}: no embedding rows found")
    return np.array(rows, dtype=np.float64)


def l2_normalize(matrix: EmbeddingMatrix) -> EmbeddingMatrix:
    """Scale every row to unit L2 norm and set the ``normalized`` flag."""
    norms = np.linalg.norm(matrix.data, axis=1)
    zero = norms == 0.0
    if zero.any():
        row = int(np.flatnonzero(zero)[0])
        raise DataError(f"cannot normalize zero embedding vector at row {row}")
    return EmbeddingMatrix(matrix.data / norms[:, None], normalized=True)


def cosine_distance(z1: np.ndarray, z2: np.ndarray) -> float:
    """Cosine distance 1 - cos(z1, z2), in [0, 2].

    Zero on positive scalar multiples, 1 on orthogonal vectors, 2 on
    antipodal ones. Raises on zero vectors, where the angle is undefined.
    """
    a = np.asarray(z1, dtype=np.float64)
    b = np.asarray(z2, dtype=np.float64)
    if a.ndim != 1 or b.ndim != 1 or a.shape != b.shape:
        raise ParameterError(f"vectors must share one dimension, got {a.shape} and {b.shape}")
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise DomainError("cosine distance is undefined for zero vectors")
    value = 1.0 - float(np.dot(a, b)) / (na * nb)
    return float(min(max(value, 0.0), 2.0))


def resolve_workers(workers: int | None = None) -> int:
    """Worker count for batched kernels; the OODKIT_THREADS env var caps it."""
    count = 1 if workers is None else max(1, int(workers))
    cap = os.environ.get("OODKIT_THREADS")
    if cap:
        count = min(count, max(1, int(cap)))
    return count


def pairwise_distances(
    a: np.ndarray,
    b: np.ndarray,
    metric: str,
    workers: int | None = None,
) -> np.ndarray:
    """Exact pairwise distances between rows of ``a`` and rows of ``b``.

    Computed in fixed row blocks so results are bitwise identical for any
    worker count: every pair is evaluated independently, and the blocking
    depends only on the shape of ``a``. Cosine values are clamped to [0, 2]
    against sub-ulp excursions.
    """
    if metric not in METRICS:
        raise ParameterError(f"unknown metric {metric!r}, expected one of {METRICS}")
    a = np.ascontiguousarray(a, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ParameterError(f"dimension mismatch: {a.shape} vs {b.shape}")
    if metric == "cosine":
        _reject_zero_rows_domain(a, "left")
        _reject_zero_rows_domain(b, "right")
    out = np.empty((a.shape[0], b.shape[0]), dtype=np.float64)
    blocks = range(0, a.shape[0], _BLOCK_ROWS)

    def fill(start: int) -> None:
        stop = min(start + _BLOCK_ROWS, a.shape[0])
        block = cdist(a[start:stop], b, metric)
        if metric == "cosine":
            np.clip(block, 0.0, 2.0, out=block)
        out[start:stop] = block

    n_workers = resolve_workers(workers)
    if n_workers <= 1 or a.shape[0] <= _BLOCK_ROWS:
        for start in blocks:
            fill(start)
    else:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            list(pool.map(fill, blocks))
    return out


def _reject_zero_rows_domain(arr: np.ndarray, side: str) -> None:
    norms = np.linalg.norm(arr, axis=1)
    zero = norms == 0.0
    if zero.any():
        row = int(np.flatnonzero(zero)[0])
        raise DomainError(f"cosine metric undefined: zero vector at {side} row {row}")
