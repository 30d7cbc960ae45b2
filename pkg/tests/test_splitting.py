import numpy as np
import pytest

from oodkit import ParameterError, SampleManifest, SampleRecord, stratified_group_split
from oodkit.synthetic import random_manifest


def make_manifest(n_groups, samples_per_group=2, cls="NV", src="HAM"):
    records = []
    for g in range(n_groups):
        for s in range(samples_per_group):
            records.append(
                SampleRecord(f"s{g}_{s}", f"g{g}", cls, src, "unassigned")
            )
    return SampleManifest(tuple(records))


def split_counts(manifest, assignment):
    groups = {}
    for rec in manifest:
        groups[rec.group_id] = assignment.assignment[rec.sample_id]
    counts = {"train": 0, "val": 0, "test": 0}
    for split in groups.values():
        counts[split] += 1
    return counts


def test_ten_groups_exact_counts():
    manifest = make_manifest(10)
    for seed in (0, 1, 2019):
        assignment = stratified_group_split(manifest, (0.8, 0.1, 0.1), seed)
        counts = split_counts(manifest, assignment)
        assert counts == {"train": 8, "val": 1, "test": 1}
        for rec in manifest:
            mate = rec.sample_id.rsplit("_", 1)[0] + "_1"
            assert assignment.assignment[rec.sample_id] == assignment.assignment[mate]


def test_single_group_lands_in_one_split():
    manifest = make_manifest(1, samples_per_group=5)
    assignment = stratified_group_split(manifest, (0.8, 0.05, 0.15), 7)
    values = {assignment.assignment[r.sample_id] for r in manifest}
    assert len(values) == 1


def test_determinism():
    manifest = make_manifest(25)
    a = stratified_group_split(manifest, (0.8, 0.05, 0.15), 42)
    b = stratified_group_split(manifest, (0.8, 0.05, 0.15), 42)
    assert a.assignment == b.assignment
    c = stratified_group_split(manifest, (0.8, 0.05, 0.15), 43)
    assert a.assignment != c.assignment


def test_ratio_validation():
    manifest = make_manifest(4)
    with pytest.raises(ParameterError, match="sum"):
        stratified_group_split(manifest, (0.8, 0.05, 0.05), 0)
    with pytest.raises(ParameterError, match="non-negative"):
        stratified_group_split(manifest, (1.2, -0.1, -0.1), 0)
    with pytest.raises(ParameterError, match="3 ratios"):
        stratified_group_split(manifest, (0.5, 0.5), 0)


def test_majority_class_warning():
    records = (
        SampleRecord("a", "g0", "NV", "HAM", "unassigned"),
        SampleRecord("b", "g0", "NV", "HAM", "unassigned"),
        SampleRecord("c", "g0", "MEL", "HAM", "unassigned"),
        SampleRecord("d", "g1", "NV", "HAM", "unassigned"),
    )
    assignment = stratified_group_split(SampleManifest(records), (0.8, 0.1, 0.1), 0)
    assert any("majority 'NV'" in w for w in assignment.warnings)
    assert len({assignment.assignment[s] for s in ("a", "b", "c")}) == 1


def test_no_group_ever_spans_splits_randomized():
    rng = np.random.default_rng(12345)
    for trial in range(1000):
        manifest = random_manifest(rng)
        seed = int(rng.integers(0, 2**31))
        assignment = stratified_group_split(manifest, (0.8, 0.05, 0.15), seed)
        group_split = {}
        for rec in manifest:
            split = assignment.assignment[rec.sample_id]
            assert group_split.setdefault(rec.group_id, split) == split


def test_stratum_counts_within_one_group():
    rng = np.random.default_rng(99)
    for trial in range(200):
        manifest = random_manifest(rng)
        assignment = stratified_group_split(manifest, (0.8, 0.05, 0.15), trial)
        for key, counts in assignment.stratum_group_counts.items():
            total = sum(counts)
            for count, ratio in zip(counts, (0.8, 0.05, 0.15)):
                assert abs(count - total * ratio) <= 1.0
