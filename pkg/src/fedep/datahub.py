"""Dataset ingestion and heterogeneous partitioning across nodes.

Two data sources are supported: IDX binary files (the classic MNIST
container format) and a synthetic Gaussian-blob generator used for
desk-scale experiments. Partitioning draws per-node label proportions from
a symmetric Dirichlet distribution, so a small concentration parameter
yields highly skewed node datasets and a large one approaches IID.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ConsistencyError, FormatError, PartitionError
from .numkit import Rng, sample_gamma_array

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801


@dataclass
class Dataset:
    """Feature matrix in [0, 1], integer labels, and the label alphabet size."""

    features: np.ndarray  # (n_samples, n_features) float64
    labels: np.ndarray  # (n_samples,) int64
    n_classes: int

    def __post_init__(self):
        self.features = np.ascontiguousarray(self.features, dtype=np.float64)
        self.labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2:
            raise ValueError(f"features must be 2-D, got shape {self.features.shape}")
        if self.labels.ndim != 1 or len(self.labels) != len(self.features):
            raise ConsistencyError(
                f"{len(self.features)} feature rows vs {len(self.labels)} labels"
            )
        if self.n_classes < 2:
            raise ValueError("a dataset needs at least 2 classes")
        if not np.all(np.isfinite(self.features)):
            raise ValueError("features contain non-finite values")
        if self.features.size and (self.features.min() < 0.0 or self.features.max() > 1.0):
            raise ValueError("features must be scaled to [0, 1]")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise ValueError("labels must lie in [0, n_classes)")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def subset(self, indices) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(self.features[idx], self.labels[idx], self.n_classes)


def _read_be32(buf: bytes, offset: int) -> int:
    return struct.unpack_from(">I", buf, offset)[0]


def _read_idx(path, expected_magic: int, ndim: int) -> np.ndarray:
    """Parse one IDX file of unsigned bytes with the given magic and rank."""
    with open(path, "rb") as f:
        raw = f.read()
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise FormatError(f"{path}: file too short for an IDX header")
    magic = _read_be32(raw, 0)
    if magic != expected_magic:
        raise FormatError(
            f"{path}: magic 0x{magic:08x} does not match expected 0x{expected_magic:08x}"
        )
    dims = [_read_be32(raw, 4 + 4 * i) for i in range(ndim)]
    count = math.prod(dims)
    payload = raw[header:]
    if len(payload) != count:
        raise FormatError(
            f"{path}: payload holds {len(payload)} bytes, header promises {count}"
        )
    return np.frombuffer(payload, dtype=np.uint8).reshape(dims)


def load_idx_dataset(images_path, labels_path) -> Dataset:
    """Load an image/label IDX pair into a Dataset.

    Pixels are flattened row-major and divided by 255. The label alphabet is
    taken as max(label) + 1. Mismatched image and label counts raise
    ConsistencyError; malformed files raise FormatError without producing a
    partial dataset.
    """
    images = _read_idx(images_path, IDX_IMAGE_MAGIC, ndim=3)
    labels = _read_idx(labels_path, IDX_LABEL_MAGIC, ndim=1)
    if images.shape[0] != labels.shape[0]:
        raise ConsistencyError(
            f"{images.shape[0]} images vs {labels.shape[0]} labels"
        )
    features = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    n_classes = int(labels.max()) + 1 if labels.size else 0
    return Dataset(features, labels.astype(np.int64), n_classes)


def write_idx_images(path, images: np.ndarray) -> None:
    """Write a (n, rows, cols) uint8 array as an IDX image file."""
    arr = np.ascontiguousarray(images, dtype=np.uint8)
    if arr.ndim != 3:
        raise ValueError("images must have shape (n, rows, cols)")
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", IDX_IMAGE_MAGIC, *arr.shape))
        f.write(arr.tobytes())


def write_idx_labels(path, labels: np.ndarray) -> None:
    """Write a 1-D uint8 array as an IDX label file."""
    arr = np.ascontiguousarray(labels, dtype=np.uint8)
    if arr.ndim != 1:
        raise ValueError("labels must be 1-D")
    with open(path, "wb") as f:
        f.write(struct.pack(">II", IDX_LABEL_MAGIC, arr.shape[0]))
        f.write(arr.tobytes())


def make_synthetic(
    rng: Rng,
    n_classes: int,
    n_per_class: int,
    n_features: int,
    cluster_spread: float,
) -> Dataset:
    """Isotropic Gaussian blobs around fixed per-class centers, clipped to [0, 1].

    Class c is centered at 0.7 on features j with j % n_classes == c and at
    0.3 elsewhere, so classes are separable whenever n_features >= n_classes
    and cluster_spread is small. Deterministic given the rng.
    """
    if n_classes < 2 or n_per_class < 1 or n_features < 1:
        raise ValueError("n_classes, n_per_class and n_features must be positive")
    if not np.isfinite(cluster_spread) or cluster_spread < 0.0:
        raise ValueError(f"cluster_spread must be a finite non-negative real, got {cluster_spread!r}")
    centers = np.full((n_classes, n_features), 0.3)
    cols = np.arange(n_features)
    centers[cols % n_classes, cols] = 0.7
    features = np.empty((n_classes * n_per_class, n_features))
    labels = np.empty(n_classes * n_per_class, dtype=np.int64)
    for c in range(n_classes):
        block = slice(c * n_per_class, (c + 1) * n_per_class)
        noise = rng.normal((n_per_class, n_features)) * cluster_spread
        features[block] = centers[c] + noise
        labels[block] = c
    np.clip(features, 0.0, 1.0, out=features)
    return Dataset(features, labels, n_classes)


@dataclass
class GroupSpec:
    """One node group: the fraction of nodes it holds and its Dirichlet alpha."""

    fraction: float
    alpha: float

    def __post_init__(self):
        if not 0.0 < self.fraction <= 1.0:
            raise ValueError(f"group fraction must lie in (0, 1], got {self.fraction}")
        if not np.isfinite(self.alpha) or self.alpha <= 0.0:
            raise ValueError(f"dirichlet alpha must be positive, got {self.alpha}")


@dataclass
class PartitionSpec:
    """Node count plus per-group Dirichlet concentrations."""

    n_nodes: int
    groups: list[GroupSpec] = field(default_factory=list)

    def __post_init__(self):
        if self.n_nodes < 1:
            raise ValueError("n_nodes must be at least 1")
        if not self.groups:
            raise ValueError("at least one group is required")
        total = sum(g.fraction for g in self.groups)
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"group fractions must sum to 1, got {total}")

    @classmethod
    def pure(cls, n_nodes: int, alpha: float) -> "PartitionSpec":
        return cls(n_nodes, [GroupSpec(1.0, alpha)])

    def node_alphas(self) -> np.ndarray:
        """Per-node alpha; group g covers the next ceil(fraction * n) node ids."""
        alphas = np.empty(self.n_nodes)
        start = 0
        for g in self.groups:
            count = min(math.ceil(g.fraction * self.n_nodes), self.n_nodes - start)
            alphas[start : start + count] = g.alpha
            start += count
        if start < self.n_nodes:  # guard against float underfill of the last group
            alphas[start:] = self.groups[-1].alpha
        return alphas


@dataclass
class Partition:
    """Per-node sample indices forming an exact partition of the dataset."""

    assignments: list[np.ndarray]
    n_samples: int

    def __post_init__(self):
        self.assignments = [np.asarray(a, dtype=np.int64) for a in self.assignments]
        merged = np.sort(np.concatenate(self.assignments)) if self.assignments else np.array([])
        if len(merged) != self.n_samples or not np.array_equal(
            merged, np.arange(self.n_samples)
        ):
            raise PartitionError("assignments are not an exact partition of the dataset")
        if any(len(a) == 0 for a in self.assignments):
            raise PartitionError("a node received zero samples")

    @property
    def n_nodes(self) -> int:
        return len(self.assignments)

    def sizes(self) -> list[int]:
        return [len(a) for a in self.assignments]

    def to_json(self) -> str:
        return json.dumps({str(i): a.tolist() for i, a in enumerate(self.assignments)})

    @classmethod
    def from_json(cls, text: str) -> "Partition":
        obj = json.loads(text)
        assignments = [np.asarray(obj[str(i)], dtype=np.int64) for i in range(len(obj))]
        return cls(assignments, sum(len(a) for a in assignments))


def apportion(total: int, weights) -> np.ndarray:
    """Largest-remainder split of ``total`` items proportionally to ``weights``."""
    w = np.asarray(weights, dtype=np.float64)
    if total < 0 or w.size == 0:
        raise ValueError("need a non-negative total and at least one weight")
    s = w.sum()
    shares = np.full(w.size, total / w.size) if s <= 0 else total * w / s
    counts = np.floor(shares).astype(np.int64)
    remainder = int(total - counts.sum())
    if remainder > 0:
        # Ties go to the lowest index: stable sort on negated fractional parts.
        order = np.argsort(-(shares - counts), kind="stable")
        counts[order[:remainder]] += 1
    return counts


def sample_proportions(rng: Rng, alpha: float, k: int) -> np.ndarray:
    """One draw of label proportions from the symmetric Dirichlet(alpha)."""
    if k < 1:
        raise ValueError("k must be at least 1")
    while True:
        g = sample_gamma_array(rng, alpha, k)
        total = g.sum()
        if np.isfinite(total) and total > 0.0:
            return g / total


def dirichlet_variance(alpha: float, k: int) -> float:
    """Variance of one coordinate of a symmetric Dirichlet(alpha) over k classes."""
    if not np.isfinite(alpha) or alpha <= 0.0:
        raise ValueError(f"alpha must be positive, got {alpha!r}")
    if k < 2:
        raise ValueError("k must be at least 2")
    return (k - 1) / (k * k * (k * alpha + 1.0))


def dirichlet_partition(rng: Rng, dataset: Dataset, spec: PartitionSpec) -> Partition:
    """Assign every sample to exactly one node with Dirichlet label skew.

    Each node draws label proportions from Dirichlet(alpha * 1) for its
    group's alpha, receives an equal share of the sample budget (largest
    remainder), and fills it class by class. Exhausted class pools fall back
    to whichever class has the most samples left, so the result is always an
    exact partition. Deterministic given (rng state, dataset, spec).
    """
    n = len(dataset)
    k = spec.n_nodes
    if n < k:
        raise PartitionError(f"cannot split {n} samples across {k} nodes")
    # Shuffle each class pool once, in class order, then draw node proportions
    # in node order; the consumption order is part of the determinism contract.
    pools = []
    for c in range(dataset.n_classes):
        idx = np.flatnonzero(dataset.labels == c)
        pools.append(list(idx[rng.permutation(len(idx))]) if len(idx) else [])
    quotas = apportion(n, np.ones(k))
    alphas = spec.node_alphas()
    targets = [
        apportion(int(quotas[i]), sample_proportions(rng, float(alphas[i]), dataset.n_classes))
        for i in range(k)
    ]
    assignments: list[list[int]] = [[] for _ in range(k)]
    for i in range(k):
        for c in range(dataset.n_classes):
            take = min(int(targets[i][c]), len(pools[c]))
            if take:
                assignments[i].extend(pools[c][:take])
                del pools[c][:take]
    # Top up nodes whose requested classes ran dry, largest pool first.
    for i in range(k):
        while len(assignments[i]) < quotas[i]:
            c = max(range(dataset.n_classes), key=lambda j: len(pools[j]))
            if not pools[c]:
                raise PartitionError("ran out of samples while balancing quotas")
            assignments[i].append(pools[c].pop(0))
    _rebalance_empty_nodes(assignments)
    return Partition([np.asarray(a, dtype=np.int64) for a in assignments], n)


def _rebalance_empty_nodes(assignments: list[list[int]]) -> None:
    for i, a in enumerate(assignments):
        if a:
            continue
        donor = max(range(len(assignments)), key=lambda j: len(assignments[j]))
        if len(assignments[donor]) < 2:
            raise PartitionError(f"node {i} would receive zero samples")
        a.append(assignments[donor].pop())


def split_local_test(
    assignments: list[np.ndarray],
    labels: np.ndarray,
    test_fraction: float = 0.2,
) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Split every node's allocation into train/test with matching proportions.

    The test share of each node is test_fraction of its samples, apportioned
    across its classes by largest remainder and taken from the tail of each
    class's (already shuffled) index list. Nodes too small to give up a test
    sample keep everything in both slices.
    """
    if not 0.0 < test_fraction < 1.0:
        raise ValueError("test_fraction must lie in (0, 1)")
    train_idx, test_idx = [], []
    for node in assignments:
        node = np.asarray(node, dtype=np.int64)
        node_labels = labels[node]
        classes, class_counts = np.unique(node_labels, return_counts=True)
        n_test = int(len(node) * test_fraction + 0.5)
        if n_test == 0 or n_test >= len(node):
            # Degenerate allocation; evaluate on the training samples.
            train_idx.append(node.copy())
            test_idx.append(node.copy())
            continue
        per_class = apportion(n_test, class_counts)
        train_parts, test_parts = [], []
        for c, t in zip(classes, per_class):
            members = node[node_labels == c]
            cut = len(members) - int(t)
            train_parts.append(members[:cut])
            test_parts.append(members[cut:])
        train = np.concatenate([p for p in train_parts if len(p)]) if train_parts else node
        test = np.concatenate([p for p in test_parts if len(p)])
        if len(train) == 0:
            train = node.copy()
        train_idx.append(train)
        test_idx.append(test)
    return train_idx, test_idx
