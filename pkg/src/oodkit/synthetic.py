"""Synthetic fixtures: desk-scale stand-ins for multi-site dermoscopy data.

Real benchmark embeddings come from GPU-scale encoders over datasets this
repo does not ship. These generators produce small embedding/manifest
pairs with the same structure (diagnostic classes, acquisition sites,
lesion groups, splits) so every protocol is exercisable end to end.
"""

from __future__ import annotations

import numpy as np

from .embeddings import EmbeddingMatrix
from .manifest import SampleManifest, SampleRecord
from .splitting import stratified_group_split

ID_CLASSES = ("NV", "MEL", "BCC", "AK", "BKL", "SCC")
OOD_CLASSES = ("DF", "VASC")
SOURCES = ("HAM", "BCN", "MSK")

_CLASS_WEIGHTS = {
    "NV": 0.30, "MEL": 0.15, "BCC": 0.12, "AK": 0.08,
    "BKL": 0.10, "SCC": 0.05, "DF": 0.10, "VASC": 0.10,
}
_SOURCE_WEIGHTS = {"HAM": 0.50, "BCN": 0.35, "MSK": 0.15}


def make_two_cluster_data(
    n_id: int = 192,
    n_ood: int = 64,
    dim: int = 2,
    separation: float = 6.0,
    spread: float = 0.5,
    seed: int = 2019,
):
    """Two well-separated Gaussian clusters in input space.

    Returns (id_points, ood_points); the first cluster plays the
    in-distribution role, the second the held-out outlier role.
    """
    rng = np.random.default_rng(seed)
    offset = np.zeros(dim)
    offset[0] = separation / 2.0
    id_points = rng.normal(size=(n_id, dim)) * spread + offset
    ood_points = rng.normal(size=(n_ood, dim)) * spread - offset
    return id_points, ood_points


def _class_centers(rng: np.random.Generator, dim: int) -> dict[str, np.ndarray]:
    centers = {}
    for cls in ID_CLASSES:
        vec = rng.normal(size=dim)
        centers[cls] = 3.0 * vec / np.linalg.norm(vec)
    for cls in OOD_CLASSES:
        vec = rng.normal(size=dim)
        centers[cls] = 8.0 * vec / np.linalg.norm(vec)
    return centers


def _source_shifts(rng: np.random.Generator, dim: int) -> dict[str, np.ndarray]:
    bcn = rng.normal(size=dim)
    msk = rng.normal(size=dim)
    return {
        "HAM": np.zeros(dim),
        "BCN": 2.5 * bcn / np.linalg.norm(bcn),
        "MSK": 1.2 * msk / np.linalg.norm(msk),
    }


def make_dermoscopy_fixture(
    seed: int = 2019,
    n_groups: int = 600,
    dim: int = 16,
    ratios=(0.8, 0.05, 0.15),
):
    """Multi-class, multi-site fixture with lesion groups and splits.

    Each lesion group carries 1 to 3 images; image embeddings are the
    class center plus a site shift, per-lesion jitter, and per-image
    noise. DF and VASC centers sit far from the six ID class centers, so
    detectors fit on ID features should separate them. Returns
    (EmbeddingMatrix, SampleManifest) with splits already assigned.
    """
    rng = np.random.default_rng(seed)
    centers = _class_centers(rng, dim)
    shifts = _source_shifts(rng, dim)
    class_names = list(_CLASS_WEIGHTS)
    class_p = np.array([_CLASS_WEIGHTS[c] for c in class_names])
    source_names = list(_SOURCE_WEIGHTS)
    source_p = np.array([_SOURCE_WEIGHTS[s] for s in source_names])

    records = []
    rows = []
    sample_counter = 0
    for g in range(n_groups):
        cls = class_names[rng.choice(len(class_names), p=class_p)]
        src = source_names[rng.choice(len(source_names), p=source_p)]
        group_id = f"lesion_{g:04d}"
        group_jitter = rng.normal(scale=0.4, size=dim)
        for _ in range(int(rng.integers(1, 4))):
            sample_id = f"img_{sample_counter:05d}"
            sample_counter += 1
            records.append(SampleRecord(sample_id, group_id, cls, src, "unassigned"))
            rows.append(centers[cls] + shifts[src] + group_jitter + rng.normal(scale=0.6, size=dim))

    manifest = SampleManifest(tuple(records))
    assignment = stratified_group_split(manifest, ratios, seed)
    manifest = manifest.with_splits(assignment.assignment)
    return EmbeddingMatrix(np.array(rows)), manifest


def make_natural_fixture(
    seed: int = 2019,
    n_id: int = 800,
    n_ood: int = 200,
    dim: int = 16,
    ratios=(0.8, 0.05, 0.15),
):
    """Natural-image style fixture: multimodal ID blob vs a shifted OOD blob.

    ID samples carry class ``cifar`` (ten latent modes, one label) from
    source ``CIFAR10``; OOD samples carry class ``svhn`` from source
    ``SVHN``. Groups are singletons since photos have no lesion identity.
    """
    rng = np.random.default_rng(seed)
    modes = rng.normal(size=(10, dim)) * 2.0
    ood_center = rng.normal(size=dim)
    ood_center = 9.0 * ood_center / np.linalg.norm(ood_center)

    records = []
    rows = []
    for i in range(n_id):
        mode = modes[int(rng.integers(0, len(modes)))]
        sid = f"cifar_{i:05d}"
        records.append(SampleRecord(sid, sid, "cifar", "CIFAR10", "unassigned"))
        rows.append(mode + rng.normal(scale=0.7, size=dim))
    for i in range(n_ood):
        sid = f"svhn_{i:05d}"
        records.append(SampleRecord(sid, sid, "svhn", "SVHN", "unassigned"))
        rows.append(ood_center + rng.normal(scale=0.7, size=dim))

    manifest = SampleManifest(tuple(records))
    assignment = stratified_group_split(manifest, ratios, seed)
    manifest = manifest.with_splits(assignment.assignment)
    return EmbeddingMatrix(np.array(rows)), manifest


def random_manifest(rng: np.random.Generator, max_groups: int = 40) -> SampleManifest:
    """Random small manifest for split property testing."""
    n_groups = int(rng.integers(1, max_groups + 1))
    classes = [f"c{i}" for i in range(int(rng.integers(1, 4)))]
    sources = [f"s{i}" for i in range(int(rng.integers(1, 3)))]
    records = []
    counter = 0
    for g in range(n_groups):
        cls = classes[int(rng.integers(0, len(classes)))]
        src = sources[int(rng.integers(0, len(sources)))]
        for _ in range(int(rng.integers(1, 4))):
            records.append(SampleRecord(f"s{counter:05d}", f"g{g:04d}", cls, src, "unassigned"))
            counter += 1
    return SampleManifest(tuple(records))
