"""Leakage-free stratified splitting at group (lesion) granularity.

Whole groups are assigned to train/val/test, so multiple images of one
lesion can never land on different sides of a split. Stratification runs
per (class, source) stratum with largest-remainder apportionment, which
keeps every stratum's realized group counts within one group of the
requested ratios.
"""

from __future__ import annotations

import hashlib
import math
from collections import Counter
from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError
from .manifest import SampleManifest

_SPLIT_NAMES = ("train", "val", "test")


@dataclass(frozen=True)
class SplitAssignment:
    """Deterministic product of (manifest, ratios, seed)."""

    ratios: tuple[float, float, float]
    seed: int
    assignment: dict[str, str]
    warnings: tuple[str, ...] = ()
    stratum_group_counts: dict[tuple[str, str], tuple[int, int, int]] = field(default_factory=dict)


def _majority(values: Sequence[str]) -> tuple[str, bool]:
    counts = Counter(values)
    top = max(counts.values())
    winner = min(v for v, c in counts.items() if c == top)
    return winner, len(counts) > 1


def _largest_remainder(n: int, ratios: Sequence[float]) -> list[int]:
    raw = [n * r for r in ratios]
    base = [math.floor(x) for x in raw]
    remaining = n - sum(base)
    order = sorted(range(len(ratios)), key=lambda k: (-(raw[k] - base[k]), k))
    for k in order[:remaining]:
        base[k] += 1
    return base


def _stratum_rng(seed: int, class_label: str, source: str) -> np.random.Generator:
    digest = hashlib.blake2b(
        f"{class_label}\x1f{source}".encode("utf-8"), digest_size=8
    ).digest()
    return np.random.default_rng([seed & 0xFFFFFFFF, int.from_bytes(digest, "big")])


def stratified_group_split(
    manifest: SampleManifest,
    ratios: Sequence[float],
    seed: int,
) -> SplitAssignment:
    """Assign every group, and hence every sample, to train/val/test.

    A group's stratum is the majority (class, source) over its samples;
    groups with inconsistent class labels are assigned by majority and
    reported in ``warnings``. The result is a pure function of the
    manifest contents, the ratios, and the seed.
    """
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3:
        raise ParameterError(f"expected 3 ratios, got {len(ratios)}")
    if any(r < 0 for r in ratios):
        raise ParameterError(f"ratios must be non-negative, got {ratios}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ParameterError(f"ratios must sum to 1, got sum {sum(ratios)!r}")

    groups: dict[str, list] = {}
    for rec in manifest:
        groups.setdefault(rec.group_id, []).append(rec)

    warnings: list[str] = []
    strata: dict[tuple[str, str], list[str]] = {}
    for gid in sorted(groups):
        recs = groups[gid]
        cls, cls_mixed = _majority([r.class_label for r in recs])
        src, src_mixed = _majority([r.source for r in recs])
        if cls_mixed:
            warnings.append(f"group {gid!r} has inconsistent class labels; using majority {cls!r}")
        if src_mixed:
            warnings.append(f"group {gid!r} has inconsistent sources; using majority {src!r}")
        strata.setdefault((cls, src), []).append(gid)

    assignment: dict[str, str] = {}
    stratum_counts: dict[tuple[str, str], tuple[int, int, int]] = {}
    for key in sorted(strata):
        gids = strata[key]
        rng = _stratum_rng(seed, *key)
        order = np.array(gids, dtype=object)
        rng.shuffle(order)
        counts = _largest_remainder(len(gids), ratios)
        stratum_counts[key] = tuple(counts)
        cursor = 0
        for split_name, count in zip(_SPLIT_NAMES, counts):
            for gid in order[cursor : cursor + count]:
                for rec in groups[gid]:
                    assignment[rec.sample_id] = split_name
            cursor += count

    return SplitAssignment(
        ratios=ratios,
        seed=int(seed),
        assignment=assignment,
        warnings=tuple(warnings),
        stratum_group_counts=stratum_counts,
    )
