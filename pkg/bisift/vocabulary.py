"""Visual vocabulary: flat k-means training, quantization and BoVW histograms."""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.spatial.distance import cdist
from sklearn.cluster import kmeans_plusplus

from .descriptor import DESCRIPTOR_DIM, DescriptorSet, DescriptorType
from .errors import DimensionError, InsufficientDataError, InvalidInputError

logger = logging.getLogger(__name__)

# Rows per assignment block (rows x K distance matrix kept in memory at once).
ASSIGN_CHUNK = 4096


@dataclass(frozen=True, eq=False)
class Vocabulary:
    """K centroids in descriptor space; word ids are 1-based."""

    centroids: np.ndarray
    iterations: int = 0
    seed: int = 0
    inertia: Optional[float] = None
    inertia_history: Tuple[float, ...] = ()

    def __post_init__(self):
        centroids = np.asarray(self.centroids)
        if centroids.ndim != 2 or centroids.shape[0] < 1 or centroids.shape[1] != DESCRIPTOR_DIM:
            raise DimensionError(
                f"Vocabulary must be a (K, {DESCRIPTOR_DIM}) matrix with K >= 1, got {centroids.shape}"
            )
        centroids = np.ascontiguousarray(centroids, dtype=np.float32).copy()
        centroids.setflags(write=False)
        object.__setattr__(self, "centroids", centroids)

    @property
    def size(self) -> int:
        return int(self.centroids.shape[0])


@dataclass(frozen=True, eq=False)
class BovwHistogram:
    """L2-normalized visual-word frequencies of one image."""

    image_id: str
    weights: np.ndarray
    raw_count: int

    @property
    def size(self) -> int:
        return int(self.weights.shape[0])


DescriptorPool = Union[np.ndarray, Iterable[DescriptorSet]]


def stack_descriptors(pool: DescriptorPool) -> np.ndarray:
    """Stack a descriptor matrix or raw descriptor sets into one (n, 128) matrix."""
    if isinstance(pool, np.ndarray):
        matrix = pool
    else:
        sets: List[DescriptorSet] = list(pool)
        for descriptor_set in sets:
            if descriptor_set.dtype == DescriptorType.BINARY128:
                raise InvalidInputError(
                    f"Cannot train a vocabulary on binary set {descriptor_set.image_id!r}"
                )
        if not sets:
            return np.zeros((0, DESCRIPTOR_DIM), dtype=np.float64)
        matrix = np.vstack([s.values.astype(np.float64) for s in sets])
    if matrix.ndim != 2 or matrix.shape[1] != DESCRIPTOR_DIM:
        raise DimensionError(
            f"Expected an (n, {DESCRIPTOR_DIM}) descriptor matrix, got shape {matrix.shape}"
        )
    return matrix


def _assign(samples: np.ndarray, centroids: np.ndarray, workers: int) -> Tuple[np.ndarray, np.ndarray]:
    """Nearest centroid (lowest index on ties) and squared distance for every sample."""
    spans = [(lo, min(lo + ASSIGN_CHUNK, samples.shape[0])) for lo in range(0, samples.shape[0], ASSIGN_CHUNK)]

    def block(span: Tuple[int, int]) -> Tuple[np.ndarray, np.ndarray]:
        lo, hi = span
        d2 = cdist(samples[lo:hi], centroids, "sqeuclidean")
        labels = np.argmin(d2, axis=1)
        return labels, d2[np.arange(hi - lo), labels]

    if workers > 1 and len(spans) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(block, spans))
    else:
        parts = [block(span) for span in spans]
    return np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts])


def _update(samples: np.ndarray, labels: np.ndarray, d2: np.ndarray, k: int) -> np.ndarray:
    """Cluster means, summed per cluster in ascending sample order; empty clusters reseeded."""
    order = np.argsort(labels, kind="stable")
    present, starts = np.unique(labels[order], return_index=True)
    sums = np.add.reduceat(samples[order], starts, axis=0)
    counts = np.diff(np.append(starts, labels.shape[0]))

    centroids = np.zeros((k, samples.shape[1]), dtype=np.float64)
    centroids[present] = sums / counts[:, None]

    empty = np.setdiff1d(np.arange(k), present)
    if empty.size:
        remaining = d2.copy()
        for cluster in empty:
            farthest = int(np.argmax(remaining))
            centroids[cluster] = samples[farthest]
            remaining[farthest] = -1.0
        logger.debug(f"Reseeded {empty.size} empty cluster(s)")
    return centroids


def train_kmeans(
    descriptors: DescriptorPool,
    k: int,
    max_iters: int = 50,
    seed: int = 42,
    sample_cap: Optional[int] = None,
    workers: int = 1,
) -> Vocabulary:
    """Learn a K-word vocabulary with Lloyd's algorithm and k-means++ seeding.

    Stops after ``max_iters`` assignment passes or when no assignment changes.

    Args:
        descriptors: Descriptor sets or matrices pooled into one training sample
        k: Number of visual words
        max_iters: Upper bound on assignment passes
        seed: Seed for subsampling and k-means++ seeding
        sample_cap: Pools larger than this are subsampled uniformly; None keeps all
        workers: Threads for the assignment step

    Returns:
        The trained vocabulary with its seed and iteration count

    Raises:
        InvalidInputError: If ``k`` or ``max_iters`` is below 1
        InsufficientDataError: If the sample holds fewer than ``k`` distinct descriptors
    """
    if k < 1:
        raise InvalidInputError(f"Vocabulary size must be at least 1, got: {k}")
    if max_iters < 1:
        raise InvalidInputError(f"max_iters must be at least 1, got: {max_iters}")

    samples = stack_descriptors(descriptors).astype(np.float64)
    if samples.shape[0] < k:
        raise InsufficientDataError(
            f"Need at least {k} descriptors to learn {k} words, got {samples.shape[0]}"
        )

    rng = np.random.default_rng(seed)
    if sample_cap is not None and samples.shape[0] > sample_cap:
        keep = np.sort(rng.choice(samples.shape[0], size=sample_cap, replace=False))
        samples = samples[keep]
        logger.info(f"Subsampled training pool to {sample_cap} descriptors")

    distinct = np.unique(samples, axis=0).shape[0]
    if distinct < k:
        raise InsufficientDataError(
            f"Need at least {k} distinct descriptors to learn {k} words, got {distinct}"
        )

    centroids, _ = kmeans_plusplus(samples, n_clusters=k, random_state=seed)
    centroids = np.asarray(centroids, dtype=np.float64)

    history: List[float] = []
    previous: Optional[np.ndarray] = None
    converged = False
    iterations = 0
    for iterations in range(1, max_iters + 1):
        labels, d2 = _assign(samples, centroids, workers)
        history.append(float(d2.sum()))
        logger.debug(f"k-means iteration {iterations}: inertia {history[-1]:.6g}")
        if previous is not None and np.array_equal(labels, previous):
            converged = True
            break
        centroids = _update(samples, labels, d2, k)
        previous = labels

    if not converged:
        _, d2 = _assign(samples, centroids, workers)
        history.append(float(d2.sum()))

    logger.info(
        f"Trained {k}-word vocabulary on {samples.shape[0]} descriptors: "
        f"{iterations} iteration(s), inertia {history[-1]:.6g}, converged={converged}"
    )
    return Vocabulary(
        centroids=centroids,
        iterations=iterations,
        seed=seed,
        inertia=history[-1],
        inertia_history=tuple(history),
    )


def quantize_many(values: np.ndarray, vocabulary: Vocabulary) -> np.ndarray:
    """1-based visual word of every row of ``values``; ties go to the lowest word id."""
    matrix = np.asarray(values, dtype=np.float64)
    if matrix.ndim != 2 or matrix.shape[1] != DESCRIPTOR_DIM:
        raise DimensionError(
            f"Expected an (n, {DESCRIPTOR_DIM}) descriptor matrix, got shape {matrix.shape}"
        )
    centroids = vocabulary.centroids.astype(np.float64)
    words = np.empty(matrix.shape[0], dtype=np.int64)
    for lo in range(0, matrix.shape[0], ASSIGN_CHUNK):
        block = cdist(matrix[lo:lo + ASSIGN_CHUNK], centroids, "euclidean")
        words[lo:lo + ASSIGN_CHUNK] = np.argmin(block, axis=1) + 1
    return words


def quantize(descriptor: np.ndarray, vocabulary: Vocabulary) -> int:
    """Visual word in [1, K] of one descriptor."""
    return int(quantize_many(np.asarray(descriptor)[None, :], vocabulary)[0])


def word_counts(descriptor_set: DescriptorSet, vocabulary: Vocabulary) -> np.ndarray:
    """Un-normalized word occurrence counts (K components summing to the keypoint count)."""
    if descriptor_set.dtype == DescriptorType.BINARY128:
        raise InvalidInputError(
            f"Cannot quantize binary descriptor set {descriptor_set.image_id!r}"
        )
    if descriptor_set.count == 0:
        return np.zeros(vocabulary.size, dtype=np.int64)
    words = quantize_many(descriptor_set.values, vocabulary)
    return np.bincount(words - 1, minlength=vocabulary.size)


def build_histogram(descriptor_set: DescriptorSet, vocabulary: Vocabulary) -> BovwHistogram:
    """L2-normalized term-frequency histogram; an empty image gives the zero vector."""
    counts = word_counts(descriptor_set, vocabulary).astype(np.float64)
    norm = np.linalg.norm(counts)
    weights = counts / norm if norm > 0 else counts
    weights.setflags(write=False)
    return BovwHistogram(descriptor_set.image_id, weights, descriptor_set.count)


def build_histograms(sets: Sequence[DescriptorSet], vocabulary: Vocabulary) -> List[BovwHistogram]:
    return [build_histogram(s, vocabulary) for s in sets]
