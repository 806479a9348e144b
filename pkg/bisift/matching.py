"""Image-to-image keypoint matching with the nearest-neighbor ratio test.

A query keypoint matches its nearest reference keypoint when that distance is
strictly below ``ratio`` times the distance to the second-nearest reference
keypoint. Matching is directional (query to reference) and many-to-one.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

from .descriptor import DescriptorSet
from .distance import DistanceKind, pairwise_distances
from .errors import InvalidInputError, SchemeError

logger = logging.getLogger(__name__)

DEFAULT_RATIO = 0.8


@dataclass(frozen=True)
class MatchPair:
    """One accepted correspondence."""

    query_index: int
    ref_index: int
    dist: float
    second_dist: float


@dataclass(frozen=True)
class ImageSimilarity:
    """Aggregate of the accepted matches between two images."""

    match_count: int = 0
    total_dist: float = 0.0


def similarity_score(sim: ImageSimilarity) -> Tuple[int, float]:
    """Sortable score, larger is better: more matches first, then smaller total distance."""
    return (sim.match_count, -sim.total_dist)


def validate_ratio(ratio: float) -> None:
    """Raise if the reliable-match threshold is outside (0, 1]."""
    if not (0.0 < ratio <= 1.0):
        raise InvalidInputError(f"Ratio threshold must be in (0, 1], got: {ratio}")


def _check_representations(query: DescriptorSet, reference: DescriptorSet) -> None:
    if query.dtype != reference.dtype or query.scheme != reference.scheme:
        q_name = query.scheme.value if query.scheme else query.dtype.value
        r_name = reference.scheme.value if reference.scheme else reference.dtype.value
        raise SchemeError(
            f"Cannot match {q_name} image {query.image_id!r} against {r_name} image {reference.image_id!r}"
        )


def _ratio_test(dists: np.ndarray, ratio: float, offset: int) -> List[MatchPair]:
    rows = np.arange(dists.shape[0])
    best = np.argmin(dists, axis=1)
    best_dist = dists[rows, best]
    if dists.shape[1] > 1:
        rest = dists.astype(np.float64, copy=True)
        rest[rows, best] = math.inf
        second = rest.min(axis=1)
    else:
        second = np.full(dists.shape[0], math.inf)

    accepted = best_dist < second * ratio
    return [
        MatchPair(int(i) + offset, int(best[i]), float(best_dist[i]), float(second[i]))
        for i in np.flatnonzero(accepted)
    ]


def match_images(
    query: DescriptorSet,
    reference: DescriptorSet,
    kind: DistanceKind,
    ratio: float = DEFAULT_RATIO,
    workers: int = 1,
) -> Tuple[ImageSimilarity, List[MatchPair]]:
    """Match every query keypoint against the reference image.

    An empty query or reference yields zero matches.

    Args:
        query: Keypoint descriptors of the query image
        reference: Keypoint descriptors of the reference image
        kind: Distance kernel; must fit the representation of both images
        ratio: Reliable-match threshold S in (0, 1]
        workers: Threads over which query rows are split

    Returns:
        The aggregate similarity and the accepted pairs in query-index order

    Raises:
        SchemeError: If the two images use different representations, or ``kind``
            does not apply to them
        InvalidInputError: If ``ratio`` is outside (0, 1]
    """
    kind = DistanceKind(kind)
    validate_ratio(ratio)
    _check_representations(query, reference)
    if query.count == 0 or reference.count == 0:
        # Still reject kinds that do not fit the representation.
        pairwise_distances(query.values[:0], reference.values[:0], kind)
        return ImageSimilarity(), []

    q_values, r_values = query.values, reference.values
    if workers <= 1 or query.count < 2 * workers:
        pairs = _ratio_test(pairwise_distances(q_values, r_values, kind), ratio, 0)
    else:
        bounds = np.linspace(0, query.count, workers + 1).astype(int)
        spans = [(int(lo), int(hi)) for lo, hi in zip(bounds[:-1], bounds[1:]) if hi > lo]

        def block(span: Tuple[int, int]) -> List[MatchPair]:
            lo, hi = span
            return _ratio_test(pairwise_distances(q_values[lo:hi], r_values, kind), ratio, lo)

        with ThreadPoolExecutor(max_workers=workers) as pool:
            pairs = [pair for part in pool.map(block, spans) for pair in part]

    # Sequential sum in query order keeps the total reproducible.
    total = sum(pair.dist for pair in pairs)
    return ImageSimilarity(len(pairs), float(total)), pairs
