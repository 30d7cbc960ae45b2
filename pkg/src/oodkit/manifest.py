"""Per-sample metadata: manifest records, CSV I/O, and subset filters.

A manifest row i describes row i of its companion embedding matrix; the
CSV header is ``sample_id,group_id,class,source,split``.
"""

from __future__ import annotations

import csv
import os
from collections.abc import Iterable, Iterator, Mapping
from dataclasses import dataclass

import numpy as np

from .errors import DataError, EmptySelectionError, FormatError

SPLITS = ("train", "val", "test", "unassigned")
MANIFEST_HEADER = ("sample_id", "group_id", "class", "source", "split")


@dataclass(frozen=True)
class SampleRecord:
    sample_id: str
    group_id: str
    class_label: str
    source: str
    split: str = "unassigned"


@dataclass(frozen=True)
class SampleManifest:
    """Immutable list of sample records with leakage-freedom enforced.

    Sample ids are unique and all records sharing a group_id share a
    split, so a lesion can never straddle a train/eval boundary.
    """

    records: tuple[SampleRecord, ...]

    def __post_init__(self):
        records = tuple(self.records)
        object.__setattr__(self, "records", records)
        if not records:
            raise DataError("manifest has no records")
        seen: set[str] = set()
        group_split: dict[str, str] = {}
        for rec in records:
            if rec.sample_id in seen:
                raise DataError(f"duplicate sample_id {rec.sample_id!r}")
            seen.add(rec.sample_id)
            if rec.split not in SPLITS:
                raise DataError(
                    f"sample {rec.sample_id!r} has split {rec.split!r}, expected one of {SPLITS}"
                )
            prev = group_split.setdefault(rec.group_id, rec.split)
            if prev != rec.split:
                raise DataError(
                    f"group {rec.group_id!r} spans splits {prev!r} and {rec.split!r}"
                )

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[SampleRecord]:
        return iter(self.records)

    def classes(self) -> tuple[str, ...]:
        return tuple(sorted({r.class_label for r in self.records}))

    def sources(self) -> tuple[str, ...]:
        return tuple(sorted({r.source for r in self.records}))

    def sample_ids(self) -> tuple[str, ...]:
        return tuple(r.sample_id for r in self.records)

    def with_splits(self, assignment: Mapping[str, str]) -> "SampleManifest":
        """Return a copy whose split column follows ``assignment``."""
        new = []
        for rec in self.records:
            split = assignment.get(rec.sample_id, rec.split)
            new.append(SampleRecord(rec.sample_id, rec.group_id, rec.class_label, rec.source, split))
        return SampleManifest(tuple(new))


@dataclass(frozen=True)
class SubsetFilter:
    """Class/source/split restriction; empty fields mean no restriction."""

    classes: tuple[str, ...] = ()
    sources: tuple[str, ...] = ()
    split: str | None = None

    @classmethod
    def make(
        cls,
        classes: Iterable[str] | None = None,
        sources: Iterable[str] | None = None,
        split: str | None = None,
    ) -> "SubsetFilter":
        return cls(
            classes=tuple(classes) if classes else (),
            sources=tuple(sources) if sources else (),
            split=split,
        )

    def matches(self, rec: SampleRecord) -> bool:
        if self.classes and rec.class_label not in self.classes:
            return False
        if self.sources and rec.source not in self.sources:
            return False
        if self.split is not None and rec.split != self.split:
            return False
        return True

    def describe(self) -> dict:
        return {
            "classes": sorted(self.classes),
            "sources": sorted(self.sources),
            "split": self.split,
        }


def load_manifest(path: str | os.PathLike) -> SampleManifest:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise FormatError(f"{path}: empty manifest file") from None
        if tuple(header) != MANIFEST_HEADER:
            raise FormatError(
                f"{path}: bad manifest header {header!r}, expected {list(MANIFEST_HEADER)}"
            )
        records = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(MANIFEST_HEADER):
                raise DataError(f"{path}: line {lineno} has {len(row)} fields, expected 5")
            records.append(SampleRecord(*row))
    return SampleManifest(tuple(records))


def save_manifest(manifest: SampleManifest, path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(MANIFEST_HEADER)
        for rec in manifest:
            writer.writerow([rec.sample_id, rec.group_id, rec.class_label, rec.source, rec.split])


def filter_indices(
    manifest: SampleManifest,
    classes: Iterable[str] | None = None,
    sources: Iterable[str] | None = None,
    split: str | None = None,
) -> np.ndarray:
    """Row positions of records matching all provided filters.

    Raises EmptySelectionError when nothing matches: experiments must not
    silently run on an empty sample set.
    """
    flt = SubsetFilter.make(classes, sources, split)
    idx = np.array([i for i, rec in enumerate(manifest) if flt.matches(rec)], dtype=np.int64)
    if idx.size == 0:
        raise EmptySelectionError(f"no samples match filter {flt.describe()}")
    return idx


def filter_subset(
    manifest: SampleManifest,
    classes: Iterable[str] | None = None,
    sources: Iterable[str] | None = None,
    split: str | None = None,
) -> SampleManifest:
    """Manifest restricted to records matching all provided filters."""
    idx = filter_indices(manifest, classes, sources, split)
    return SampleManifest(tuple(manifest.records[i] for i in idx))
