"""AUROC and the experiment runner behind the benchmark protocols.

AUROC follows the rank-statistic (Mann-Whitney) form with midrank tie
correction: the probability that a random out-of-distribution score
exceeds a random in-distribution score, ties counted half. The pair
statistic is an exact half-integer in float64, so the returned value is
the correctly rounded true rational and agrees exactly with a
pairwise-counting oracle.

An experiment fits one detector on a filtered reference selection,
scores a filtered ID selection and a filtered probe selection, and
reports AUROC. Cross-site probes are the same code path with the probe
filter pointed at another source's ID test samples.
"""

from __future__ import annotations

import csv
import io
import json
import os
from dataclasses import dataclass, field

import numpy as np

from .embeddings import EmbeddingMatrix
from .errors import DataError, LeakageError, ParameterError
from .lof import (
    LofModel,
    QueryNeighborCache,
    TrainNeighborCache,
    fit_lof,
    lof_score_batch,
)
from .manifest import SampleManifest, SubsetFilter, filter_indices
from .ssd import GaussianStats, fit_gaussian, mahalanobis_score_batch

ORIENTATION = "higher score = more OOD"


@dataclass(frozen=True)
class ScoreSet:
    """Scores of ID test samples and of probe (OOD) samples."""

    id_scores: np.ndarray
    ood_scores: np.ndarray

    def __post_init__(self):
        for name in ("id_scores", "ood_scores"):
            arr = np.ascontiguousarray(getattr(self, name), dtype=np.float64)
            if arr.ndim != 1 or arr.size == 0:
                raise ParameterError(f"{name} must be a non-empty 1-D array")
            if not np.isfinite(arr).all():
                raise DataError(f"{name} contains non-finite values")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)


def _midranks(values: np.ndarray, sorted_values: np.ndarray) -> np.ndarray:
    lo = np.searchsorted(sorted_values, values, side="left")
    hi = np.searchsorted(sorted_values, values, side="right")
    return (lo + 1 + hi) / 2.0


def auroc(scores: ScoreSet) -> float:
    """P(ood > id) + 0.5 * P(ood = id) over all cross pairs.

    Computed from midranks of the pooled scores; the numerator is an
    exact half-integer, so the single final division returns the
    correctly rounded rational value.
    """
    id_s = scores.id_scores
    ood_s = scores.ood_scores
    pooled = np.sort(np.concatenate([id_s, ood_s]), kind="stable")
    rank_sum = float(_midranks(ood_s, pooled).sum())
    m = ood_s.size
    pair_stat = rank_sum - m * (m + 1) / 2.0
    return pair_stat / (id_s.size * m)


def cross_tie_count(scores: ScoreSet) -> int:
    """Number of (ood, id) pairs with exactly equal scores."""
    id_vals, id_counts = np.unique(scores.id_scores, return_counts=True)
    ood_vals, ood_counts = np.unique(scores.ood_scores, return_counts=True)
    shared, id_pos, ood_pos = np.intersect1d(id_vals, ood_vals, return_indices=True)
    return int((id_counts[id_pos] * ood_counts[ood_pos]).sum())


@dataclass(frozen=True)
class DetectorSpec:
    """Which detector to fit: lof(k, metric) or ssd(epsilon)."""

    kind: str
    k: int | None = None
    metric: str | None = None
    epsilon: float | None = None

    def __post_init__(self):
        if self.kind == "lof":
            if self.k is None or self.k < 1:
                raise ParameterError(f"lof detector needs K >= 1, got {self.k}")
            if self.metric not in ("cosine", "euclidean"):
                raise ParameterError(f"lof detector needs a metric, got {self.metric!r}")
        elif self.kind == "ssd":
            if self.epsilon is not None and self.epsilon < 0:
                raise ParameterError(f"ssd epsilon must be >= 0, got {self.epsilon}")
        else:
            raise ParameterError(f"unknown detector kind {self.kind!r}")

    def with_k(self, k: int) -> "DetectorSpec":
        return DetectorSpec(kind=self.kind, k=k, metric=self.metric, epsilon=self.epsilon)

    def label(self) -> str:
        if self.kind == "lof":
            return f"K = {self.k}"
        return "SSD"

    def describe(self) -> dict:
        out: dict = {"kind": self.kind}
        if self.kind == "lof":
            out["k"] = self.k
            out["metric"] = self.metric
        else:
            out["epsilon"] = self.epsilon
        return out


@dataclass(frozen=True)
class ExperimentConfig:
    """One fit-score-evaluate protocol cell."""

    name: str
    detector: DetectorSpec
    fit_filter: SubsetFilter
    id_filter: SubsetFilter
    ood_filter: SubsetFilter
    embeddings_path: str | None = None
    manifest_path: str | None = None

    def describe(self) -> dict:
        return {
            "name": self.name,
            "detector": self.detector.describe(),
            "fit_filter": self.fit_filter.describe(),
            "id_filter": self.id_filter.describe(),
            "ood_filter": self.ood_filter.describe(),
            "embeddings_path": self.embeddings_path,
            "manifest_path": self.manifest_path,
        }


@dataclass(frozen=True)
class EvalReport:
    """Config echo plus AUROC, counts, and score summaries."""

    config: dict
    auroc: float
    n_id: int
    n_ood: int
    id_summary: dict
    ood_summary: dict
    notes: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "auroc": self.auroc,
            "n_id": self.n_id,
            "n_ood": self.n_ood,
            "id_summary": self.id_summary,
            "ood_summary": self.ood_summary,
            "notes": self.notes,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def _summary(values: np.ndarray) -> dict:
    return {
        "min": float(values.min()),
        "median": float(np.median(values)),
        "max": float(values.max()),
    }


def _resolve_selections(config, manifest, embeddings):
    if embeddings.n != len(manifest):
        raise DataError(
            f"embeddings have {embeddings.n} rows but manifest has {len(manifest)} records"
        )
    fit_idx = filter_indices(
        manifest, config.fit_filter.classes, config.fit_filter.sources, config.fit_filter.split
    )
    id_idx = filter_indices(
        manifest, config.id_filter.classes, config.id_filter.sources, config.id_filter.split
    )
    ood_idx = filter_indices(
        manifest, config.ood_filter.classes, config.ood_filter.sources, config.ood_filter.split
    )
    ids = manifest.sample_ids()
    fit_ids = {ids[i] for i in fit_idx}
    eval_overlap = sorted(fit_ids & {ids[i] for i in np.concatenate([id_idx, ood_idx])})
    if eval_overlap:
        raise LeakageError(
            f"{len(eval_overlap)} sample(s) appear in both fit and eval selections, "
            f"e.g. {eval_overlap[:3]}"
        )
    side_overlap = {ids[i] for i in id_idx} & {ids[i] for i in ood_idx}
    if side_overlap:
        raise ParameterError(
            f"{len(side_overlap)} sample(s) appear in both ID and OOD eval selections"
        )
    return fit_idx, id_idx, ood_idx


def _report(config, detector_desc, score_set, notes_extra, fit_n, normalized) -> EvalReport:
    value = auroc(score_set)
    notes = {
        "orientation": ORIENTATION,
        "embeddings_normalized": bool(normalized),
        "n_fit": int(fit_n),
        "cross_ties": cross_tie_count(score_set),
    }
    notes.update(notes_extra)
    cfg = dict(config.describe())
    cfg["detector"] = detector_desc
    return EvalReport(
        config=cfg,
        auroc=value,
        n_id=int(score_set.id_scores.size),
        n_ood=int(score_set.ood_scores.size),
        id_summary=_summary(score_set.id_scores),
        ood_summary=_summary(score_set.ood_scores),
        notes=notes,
    )


def run_experiment(
    config: ExperimentConfig,
    manifest: SampleManifest,
    embeddings: EmbeddingMatrix,
    workers: int | None = None,
) -> EvalReport:
    """Fit the configured detector, score both eval selections, report AUROC.

    Refuses configurations where a sample appears in both the fit and an
    eval selection (leakage) or on both eval sides.
    """
    fit_idx, id_idx, ood_idx = _resolve_selections(config, manifest, embeddings)
    train = EmbeddingMatrix(embeddings.data[fit_idx], normalized=embeddings.normalized)
    spec = config.detector
    if spec.kind == "lof":
        model = fit_lof(train, spec.k, spec.metric, workers=workers)
        id_scores = lof_score_batch(embeddings.data[id_idx], model, workers=workers)
        ood_scores = lof_score_batch(embeddings.data[ood_idx], model, workers=workers)
        detector_desc = spec.describe()
        extra = {}
    else:
        stats = fit_gaussian(train, spec.epsilon)
        id_scores = mahalanobis_score_batch(embeddings.data[id_idx], stats)
        ood_scores = mahalanobis_score_batch(embeddings.data[ood_idx], stats)
        detector_desc = dict(spec.describe())
        detector_desc["epsilon"] = stats.epsilon
        extra = {"gaussian_variant": "single global mean/covariance"}
    score_set = ScoreSet(id_scores, ood_scores)
    return _report(config, detector_desc, score_set, extra, fit_idx.size, embeddings.normalized)


def evaluate_lof_model(
    model: LofModel,
    manifest: SampleManifest,
    embeddings: EmbeddingMatrix,
    config: ExperimentConfig,
    workers: int | None = None,
) -> EvalReport:
    """Like run_experiment but with an already fitted LOF model.

    The config's fit filter declares which samples the model was fit on;
    it is used for the leakage check and echoed in the report.
    """
    fit_idx, id_idx, ood_idx = _resolve_selections(config, manifest, embeddings)
    if model.n != fit_idx.size:
        raise LeakageError(
            f"declared fit selection has {fit_idx.size} samples but model was fit on {model.n}"
        )
    id_scores = lof_score_batch(embeddings.data[id_idx], model, workers=workers)
    ood_scores = lof_score_batch(embeddings.data[ood_idx], model, workers=workers)
    score_set = ScoreSet(id_scores, ood_scores)
    desc = {"kind": "lof", "k": model.k, "metric": model.metric}
    return _report(config, desc, score_set, {}, fit_idx.size, embeddings.normalized)


def evaluate_gaussian_stats(
    stats: GaussianStats,
    manifest: SampleManifest,
    embeddings: EmbeddingMatrix,
    config: ExperimentConfig,
) -> EvalReport:
    """Like run_experiment but with already fitted Gaussian statistics."""
    fit_idx, id_idx, ood_idx = _resolve_selections(config, manifest, embeddings)
    id_scores = mahalanobis_score_batch(embeddings.data[id_idx], stats)
    ood_scores = mahalanobis_score_batch(embeddings.data[ood_idx], stats)
    score_set = ScoreSet(id_scores, ood_scores)
    desc = {"kind": "ssd", "epsilon": stats.epsilon}
    extra = {"gaussian_variant": "single global mean/covariance"}
    return _report(config, desc, score_set, extra, fit_idx.size, embeddings.normalized)


def k_sweep(
    base: ExperimentConfig,
    ks,
    manifest: SampleManifest,
    embeddings: EmbeddingMatrix,
    workers: int | None = None,
) -> list[EvalReport]:
    """One report per K, reusing the sorted distance structure across Ks.

    The cache only reorders work, never changes it: every per-K result is
    identical to the corresponding standalone run.
    """
    if base.detector.kind != "lof":
        raise ParameterError("k_sweep requires a lof detector")
    ks = [int(k) for k in ks]
    if not ks:
        raise ParameterError("k_sweep needs at least one K")
    fit_idx, id_idx, ood_idx = _resolve_selections(base, manifest, embeddings)
    train = EmbeddingMatrix(embeddings.data[fit_idx], normalized=embeddings.normalized)
    metric = base.detector.metric
    train_cache = TrainNeighborCache.build(train, metric, workers=workers)
    id_cache = QueryNeighborCache.build(embeddings.data[id_idx], train, metric, workers=workers)
    ood_cache = QueryNeighborCache.build(embeddings.data[ood_idx], train, metric, workers=workers)
    reports = []
    for k in ks:
        model = train_cache.model_for_k(k)
        score_set = ScoreSet(id_cache.scores_for(model), ood_cache.scores_for(model))
        config = ExperimentConfig(
            name=base.name,
            detector=base.detector.with_k(k),
            fit_filter=base.fit_filter,
            id_filter=base.id_filter,
            ood_filter=base.ood_filter,
            embeddings_path=base.embeddings_path,
            manifest_path=base.manifest_path,
        )
        reports.append(
            _report(config, config.detector.describe(), score_set, {}, fit_idx.size,
                    embeddings.normalized)
        )
    return reports


def write_report(report: EvalReport, path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(report.to_json())


def load_report(path: str | os.PathLike) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def reports_table_csv(report_dicts: list[dict]) -> str:
    """Aggregate reports into a CSV: one row per detector label, one column per config name."""
    columns: list[str] = []
    cells: dict[tuple[str, str], float] = {}
    row_keys: dict[str, tuple] = {}
    for rep in report_dicts:
        name = rep["config"]["name"]
        det = rep["config"]["detector"]
        if det["kind"] == "lof":
            label = f"K = {det['k']}"
            row_keys[label] = (0, int(det["k"]))
        else:
            label = "SSD"
            row_keys[label] = (1, 0)
        if name not in columns:
            columns.append(name)
        cells[(label, name)] = rep["auroc"]
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["detector"] + columns)
    for label in sorted(row_keys, key=row_keys.get):
        writer.writerow([label] + [_cell(cells.get((label, c))) for c in columns])
    return buf.getvalue()


def _cell(value) -> str:
    return "" if value is None else repr(float(value))


def write_reports_table(report_dicts: list[dict], path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(reports_table_csv(report_dicts))
