"""Dataset ingestion, split generation, and synthetic community hypergraphs.

A dataset directory holds four text files: ``hypergraph.txt`` (incidence
grammar), ``features.csv`` (n rows of comma-separated floats, no header),
``labels.txt`` (one integer class per line, ``-1`` for unlabeled) and
``splits.txt`` (one of train/val/test/none per line).  Floats round-trip
exactly through save/load.

All randomness in this module flows through numpy's PCG64 generator seeded
explicitly, so a given seed reproduces the same splits and synthetic data
anywhere this generator is available.

Converting third-party benchmark dumps (e.g. pickled incidence dictionaries
with dense feature arrays) is a thin external step: write each hyperedge's
node list as one line of ``hypergraph.txt``, dump the feature matrix row-wise
into ``features.csv``, and emit the provided label vector and split masks
verbatim.  Such converters stay outside this package.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .hypergraph import Hypergraph, load_hypergraph

__all__ = [
    "DatasetError",
    "MissingDatasetFile",
    "DatasetShapeMismatch",
    "UnlabeledTrainNode",
    "Dataset",
    "load_dataset",
    "save_dataset",
    "make_splits",
    "SyntheticSpec",
    "generate_synthetic",
]

SPLIT_NAMES = ("train", "val", "test", "none")


class DatasetError(ValueError):
    """Base class for dataset validation failures."""


class MissingDatasetFile(DatasetError):
    pass


class DatasetShapeMismatch(DatasetError):
    pass


class UnlabeledTrainNode(DatasetError):
    pass


@dataclass(eq=False)
class Dataset:
    hypergraph: Hypergraph
    features: np.ndarray
    labels: np.ndarray
    splits: np.ndarray
    n_classes: int

    def split_indices(self, name: str) -> np.ndarray:
        if name not in SPLIT_NAMES:
            raise ValueError(f"unknown split {name!r}")
        return np.flatnonzero(self.splits == name)

    def validate(self) -> None:
        n = self.hypergraph.n
        if self.features.shape[0] != n:
            raise DatasetShapeMismatch(
                f"features have {self.features.shape[0]} rows but hypergraph has {n} nodes"
            )
        if self.labels.shape[0] != n:
            raise DatasetShapeMismatch(f"labels have {self.labels.shape[0]} entries for {n} nodes")
        if self.splits.shape[0] != n:
            raise DatasetShapeMismatch(f"splits have {self.splits.shape[0]} entries for {n} nodes")
        labeled = self.labels >= 0
        if not labeled.any():
            raise DatasetError("dataset has no labeled nodes")
        if self.labels[labeled].max() >= self.n_classes:
            raise DatasetError("label ids exceed the class count")
        bad = np.flatnonzero((self.splits == "train") & ~labeled)
        if bad.size:
            raise UnlabeledTrainNode(f"train node {int(bad[0])} is unlabeled")


def _require(path: str) -> str:
    if not os.path.isfile(path):
        raise MissingDatasetFile(f"missing dataset file: {path}")
    return path


def load_dataset(directory) -> Dataset:
    """Load and validate a dataset directory."""
    directory = str(directory)
    hg = load_hypergraph(_require(os.path.join(directory, "hypergraph.txt")))

    feat_path = _require(os.path.join(directory, "features.csv"))
    rows = []
    width = None
    with open(feat_path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                vals = [float(tok) for tok in line.split(",")]
            except ValueError:
                raise DatasetError(f"{feat_path}:{lineno}: malformed feature row") from None
            if width is None:
                width = len(vals)
            elif len(vals) != width:
                raise DatasetShapeMismatch(
                    f"{feat_path}:{lineno}: expected {width} columns, got {len(vals)}"
                )
            rows.append(vals)
    features = np.array(rows, dtype=np.float64) if rows else np.zeros((0, 0))

    label_path = _require(os.path.join(directory, "labels.txt"))
    with open(label_path, "r", encoding="utf-8") as f:
        try:
            labels = np.array([int(line.strip()) for line in f if line.strip()], dtype=np.int64)
        except ValueError:
            raise DatasetError(f"{label_path}: malformed label line") from None

    split_path = _require(os.path.join(directory, "splits.txt"))
    with open(split_path, "r", encoding="utf-8") as f:
        names = [line.strip() for line in f if line.strip()]
    for i, s in enumerate(names):
        if s not in SPLIT_NAMES:
            raise DatasetError(f"{split_path}:{i + 1}: unknown split {s!r}")
    splits = np.array(names)

    labeled = labels[labels >= 0]
    n_classes = int(labeled.max()) + 1 if labeled.size else 0
    ds = Dataset(hg, features, labels, splits, n_classes)
    ds.validate()
    return ds


def save_dataset(directory, ds: Dataset) -> None:
    """Write the dataset directory; floats are emitted with exact round-trip repr."""
    directory = str(directory)
    os.makedirs(directory, exist_ok=True)
    with open(os.path.join(directory, "hypergraph.txt"), "w", encoding="utf-8") as f:
        f.write(f"{ds.hypergraph.n} {ds.hypergraph.m}\n")
        for e in ds.hypergraph.edges:
            f.write(" ".join(str(int(i)) for i in e) + "\n")
    with open(os.path.join(directory, "features.csv"), "w", encoding="utf-8") as f:
        for row in ds.features:
            f.write(",".join(repr(float(v)) for v in row) + "\n")
    with open(os.path.join(directory, "labels.txt"), "w", encoding="utf-8") as f:
        for v in ds.labels:
            f.write(f"{int(v)}\n")
    with open(os.path.join(directory, "splits.txt"), "w", encoding="utf-8") as f:
        for s in ds.splits:
            f.write(f"{s}\n")


def make_splits(n: int, fractions=(0.5, 0.25, 0.25), seed: int = 0) -> np.ndarray:
    """Uniformly random disjoint train/val/test assignment, deterministic per seed.

    Counts are ``floor(n * fraction)`` per split; any remainder stays 'none'.
    """
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or any(f < 0 for f in fractions) or sum(fractions) > 1.0 + 1e-12:
        raise ValueError(f"fractions must be three nonnegative values summing to <= 1, got {fractions}")
    rng = np.random.Generator(np.random.PCG64(seed))
    order = rng.permutation(n)
    out = np.array(["none"] * n, dtype="<U5")
    counts = [int(np.floor(n * f)) for f in fractions]
    pos = 0
    for name, k in zip(("train", "val", "test"), counts):
        out[order[pos : pos + k]] = name
        pos += k
    return out


@dataclass
class SyntheticSpec:
    """Community-structured generator settings.

    Each hyperedge draws its members from a single uniformly-chosen community
    with probability ``p_intra``, otherwise uniformly from all nodes.  Node
    features are the community mean (a scaled one-hot direction) plus
    Gaussian noise; labels are the community ids.
    """

    communities: int = 2
    nodes_per_community: int = 100
    num_edges: int = 60
    edge_size_min: int = 4
    edge_size_max: int = 8
    p_intra: float = 1.0
    feature_dim: int = 8
    noise_std: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.communities < 1 or self.nodes_per_community < 1:
            raise ValueError("need at least one community with at least one node")
        if not (0.0 <= self.p_intra <= 1.0):
            raise ValueError(f"p_intra must lie in [0, 1], got {self.p_intra}")
        if self.edge_size_min < 1 or self.edge_size_max < self.edge_size_min:
            raise ValueError("edge sizes must satisfy 1 <= min <= max")
        if self.feature_dim < 1:
            raise ValueError("feature_dim must be >= 1")


def generate_synthetic(spec: SyntheticSpec, split_fractions=(0.5, 0.25, 0.25)) -> Dataset:
    """Deterministic community hypergraph with label-aligned noisy features."""
    rng = np.random.Generator(np.random.PCG64(spec.seed))
    n = spec.communities * spec.nodes_per_community
    labels = np.repeat(np.arange(spec.communities), spec.nodes_per_community)
    means = np.zeros((spec.communities, spec.feature_dim))
    for c in range(spec.communities):
        means[c, c % spec.feature_dim] = 1.0
    features = means[labels] + spec.noise_std * rng.standard_normal((n, spec.feature_dim))

    edges = []
    members = [np.flatnonzero(labels == c) for c in range(spec.communities)]
    for _ in range(spec.num_edges):
        size = int(rng.integers(spec.edge_size_min, spec.edge_size_max + 1))
        if rng.random() < spec.p_intra:
            pool = members[int(rng.integers(spec.communities))]
        else:
            pool = np.arange(n)
        size = min(size, pool.size)
        edges.append(rng.choice(pool, size=size, replace=False).tolist())
    hg = Hypergraph.from_edges(n, edges)
    splits = make_splits(n, split_fractions, seed=spec.seed)
    ds = Dataset(hg, features, labels.astype(np.int64), splits, spec.communities)
    ds.validate()
    return ds
