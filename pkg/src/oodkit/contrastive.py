"""Normalized temperature-scaled contrastive loss with analytic gradients.

A batch holds 2N embedding rows where rows (2i, 2i+1) are two augmented
views of sample i. Each row is an anchor whose positive is its paired
view and whose negatives are the remaining 2N-2 rows; similarities are
cosine, scaled by a temperature, and pushed through a softmax
cross-entropy. The gradient is exact, including the Jacobian of the
per-row normalization, which makes it verifiable against central finite
differences and orthogonal to each row (rescaling a row cannot change
its cosine similarities).

A deliberately small one-hidden-layer encoder plus plain gradient
descent lets the whole learn-features-then-score pipeline run on
synthetic data in seconds.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass

import numpy as np

from .errors import (
    DataError,
    DomainError,
    FormatError,
    ParameterError,
    TrainingError,
)

DEFAULT_TEMPERATURE = 0.5

PARAMS_MAGIC = b"TOYE"
PARAMS_VERSION = 1
_PARAMS_HEADER = struct.Struct("<4sBIII")


@dataclass(frozen=True)
class ViewBatch:
    """2N x D embedding rows, views of sample i at rows (2i, 2i+1)."""

    z: np.ndarray
    temperature: float = DEFAULT_TEMPERATURE

    def __post_init__(self):
        arr = np.ascontiguousarray(self.z, dtype=np.float64)
        if arr.ndim != 2:
            raise DataError(f"batch must be 2-D, got shape {arr.shape}")
        if arr.shape[0] % 2 != 0 or arr.shape[0] < 4:
            raise ParameterError(
                f"batch needs an even row count >= 4 (N >= 2 pairs), got {arr.shape[0]}"
            )
        if not np.isfinite(arr).all():
            raise DataError("batch contains non-finite values")
        norms = np.linalg.norm(arr, axis=1)
        if (norms == 0.0).any():
            row = int(np.flatnonzero(norms == 0.0)[0])
            raise DomainError(f"zero embedding at batch row {row}")
        if not self.temperature > 0:
            raise ParameterError(f"temperature must be > 0, got {self.temperature}")
        arr.setflags(write=False)
        object.__setattr__(self, "z", arr)

    @property
    def n_pairs(self) -> int:
        return self.z.shape[0] // 2


def cosine_similarity_matrix(z: np.ndarray) -> np.ndarray:
    """All-pairs cosine similarities with an exact unit diagonal."""
    arr = np.asarray(z, dtype=np.float64)
    norms = np.linalg.norm(arr, axis=1)
    if (norms == 0.0).any():
        row = int(np.flatnonzero(norms == 0.0)[0])
        raise DomainError(f"zero embedding at row {row}")
    unit = arr / norms[:, None]
    sim = unit @ unit.T
    np.fill_diagonal(sim, 1.0)
    return sim


def _loss_terms(z: np.ndarray, tau: float):
    norms = np.linalg.norm(z, axis=1)
    unit = z / norms[:, None]
    logits = (unit @ unit.T) / tau
    np.fill_diagonal(logits, -np.inf)
    row_max = logits.max(axis=1)
    lse = row_max + np.log(np.exp(logits - row_max[:, None]).sum(axis=1))
    anchors = np.arange(z.shape[0])
    positives = anchors ^ 1
    per_anchor = lse - logits[anchors, positives]
    return per_anchor, logits, lse, unit, norms, positives


def nt_xent_loss(batch: ViewBatch) -> float:
    """Mean contrastive cross-entropy over all 2N anchors (log-sum-exp stabilized)."""
    per_anchor, *_ = _loss_terms(batch.z, batch.temperature)
    return float(per_anchor.mean())


def nt_xent_grad(batch: ViewBatch) -> np.ndarray:
    """Exact gradient of ``nt_xent_loss`` with respect to the batch rows."""
    z = batch.z
    tau = batch.temperature
    _, logits, lse, unit, norms, positives = _loss_terms(z, tau)
    two_n = z.shape[0]
    probs = np.exp(logits - lse[:, None])
    np.fill_diagonal(probs, 0.0)
    target = np.zeros_like(probs)
    target[np.arange(two_n), positives] = 1.0
    sim_grad = (probs - target) / (two_n * tau)
    unit_grad = (sim_grad + sim_grad.T) @ unit
    radial = np.einsum("ij,ij->i", unit_grad, unit)
    return (unit_grad - radial[:, None] * unit) / norms[:, None]


@dataclass
class ToyEncoderParams:
    """Weights of a one-hidden-layer tanh encoder x -> embedding."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    def __post_init__(self):
        for name in ("w1", "b1", "w2", "b2"):
            arr = np.ascontiguousarray(getattr(self, name), dtype=np.float64)
            if not np.isfinite(arr).all():
                raise DataError(f"encoder parameter {name} contains non-finite values")
            setattr(self, name, arr)
        if self.w1.ndim != 2 or self.w2.ndim != 2 or self.w1.shape[1] != self.w2.shape[0]:
            raise ParameterError("encoder weight shapes are inconsistent")
        if self.b1.shape != (self.w1.shape[1],) or self.b2.shape != (self.w2.shape[1],):
            raise ParameterError("encoder bias shapes are inconsistent")

    @classmethod
    def initialize(
        cls, input_dim: int, hidden_dim: int, embed_dim: int, seed: int
    ) -> "ToyEncoderParams":
        rng = np.random.default_rng(seed)
        return cls(
            w1=rng.normal(scale=1.0 / np.sqrt(input_dim), size=(input_dim, hidden_dim)),
            b1=np.zeros(hidden_dim),
            w2=rng.normal(scale=1.0 / np.sqrt(hidden_dim), size=(hidden_dim, embed_dim)),
            b2=np.zeros(embed_dim),
        )

    def copy(self) -> "ToyEncoderParams":
        return ToyEncoderParams(
            self.w1.copy(), self.b1.copy(), self.w2.copy(), self.b2.copy()
        )

    @property
    def input_dim(self) -> int:
        return self.w1.shape[0]

    @property
    def hidden_dim(self) -> int:
        return self.w1.shape[1]

    @property
    def embed_dim(self) -> int:
        return self.w2.shape[1]


def encode(params: ToyEncoderParams, x: np.ndarray) -> np.ndarray:
    """Map input rows through the encoder: tanh(x W1 + b1) W2 + b2."""
    arr = np.asarray(x, dtype=np.float64)
    hidden = np.tanh(arr @ params.w1 + params.b1)
    return hidden @ params.w2 + params.b2


@dataclass(frozen=True)
class TrainingResult:
    """Final encoder parameters plus the per-epoch mean loss curve."""

    params: ToyEncoderParams
    epoch_losses: tuple[float, ...]


def train_toy_encoder(
    samples: np.ndarray,
    noise_scale: float,
    params: ToyEncoderParams,
    lr: float,
    epochs: int,
    batch_n: int,
    tau: float = DEFAULT_TEMPERATURE,
    seed: int = 0,
) -> TrainingResult:
    """Mini-batch gradient descent on the contrastive loss.

    Two views of each sample are drawn as the sample plus isotropic
    Gaussian noise of ``noise_scale``. Deterministic given the seed; the
    input ``params`` are never mutated. Trailing mini-batches with fewer
    than 2 samples are dropped (a pair has no negatives to contrast).
    """
    data = np.asarray(samples, dtype=np.float64)
    if data.ndim != 2 or data.shape[0] < 2:
        raise ParameterError(f"need at least 2 training samples, got shape {data.shape}")
    if lr < 0:
        raise ParameterError(f"learning rate must be >= 0, got {lr}")
    if epochs < 1:
        raise ParameterError(f"epochs must be >= 1, got {epochs}")
    if batch_n < 2:
        raise ParameterError(f"batch size must be >= 2, got {batch_n}")

    rng = np.random.default_rng(seed)
    current = params.copy()
    curve: list[float] = []
    for epoch in range(epochs):
        order = rng.permutation(data.shape[0])
        batch_losses: list[float] = []
        for start in range(0, data.shape[0], batch_n):
            chosen = order[start : start + batch_n]
            if chosen.size < 2:
                continue
            x = data[chosen]
            views = np.empty((2 * chosen.size, data.shape[1]), dtype=np.float64)
            views[0::2] = x + rng.normal(scale=noise_scale, size=x.shape)
            views[1::2] = x + rng.normal(scale=noise_scale, size=x.shape)

            hidden = np.tanh(views @ current.w1 + current.b1)
            z = hidden @ current.w2 + current.b2
            batch = ViewBatch(z, temperature=tau)
            loss = nt_xent_loss(batch)
            if not np.isfinite(loss):
                last = epoch - 1 if not batch_losses else epoch
                raise TrainingError(
                    f"loss diverged at epoch {epoch}; last finite epoch was {last}",
                    last_finite_epoch=last,
                )
            z_grad = nt_xent_grad(batch)
            hidden_grad = (z_grad @ current.w2.T) * (1.0 - hidden * hidden)
            current.w2 -= lr * (hidden.T @ z_grad)
            current.b2 -= lr * z_grad.sum(axis=0)
            current.w1 -= lr * (views.T @ hidden_grad)
            current.b1 -= lr * hidden_grad.sum(axis=0)
            batch_losses.append(loss)
        curve.append(float(np.mean(batch_losses)))
    return TrainingResult(params=current, epoch_losses=tuple(curve))


def write_training_curve(path: str | os.PathLike, losses) -> None:
    """Training curve CSV: ``epoch,mean_loss``, one row per epoch."""
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("epoch,mean_loss\n")
        for epoch, loss in enumerate(losses):
            fh.write(f"{epoch},{float(loss)!r}\n")


def save_encoder_params(params: ToyEncoderParams, path: str | os.PathLike) -> None:
    header = _PARAMS_HEADER.pack(
        PARAMS_MAGIC,
        PARAMS_VERSION,
        params.input_dim,
        params.hidden_dim,
        params.embed_dim,
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(params.w1.astype("<f8").tobytes())
        fh.write(params.b1.astype("<f8").tobytes())
        fh.write(params.w2.astype("<f8").tobytes())
        fh.write(params.b2.astype("<f8").tobytes())


def load_encoder_params(path: str | os.PathLike) -> ToyEncoderParams:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _PARAMS_HEADER.size:
        raise FormatError(f"{path}: file shorter than params header")
    magic, version, d_in, d_hidden, d_out = _PARAMS_HEADER.unpack_from(blob)
    if magic != PARAMS_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {PARAMS_MAGIC!r}")
    if version != PARAMS_VERSION:
        raise FormatError(f"{path}: unsupported params version {version}")
    counts = (d_in * d_hidden, d_hidden, d_hidden * d_out, d_out)
    expected = _PARAMS_HEADER.size + 8 * sum(counts)
    if len(blob) != expected:
        raise FormatError(f"{path}: payload size {len(blob)} != expected {expected}")
    offset = _PARAMS_HEADER.size
    arrays = []
    for count in counts:
        arrays.append(np.frombuffer(blob, dtype="<f8", count=count, offset=offset).copy())
        offset += 8 * count
    return ToyEncoderParams(
        w1=arrays[0].reshape(d_in, d_hidden),
        b1=arrays[1],
        w2=arrays[2].reshape(d_hidden, d_out),
        b2=arrays[3],
    )
