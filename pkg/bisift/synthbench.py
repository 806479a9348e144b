"""Synthetic data and benchmarks.

* A timing ladder for nearest-neighbor search over uniformly random descriptors,
  comparing the four distance kernels at growing database sizes.
* A planted near-duplicate corpus: clustered synthetic images plus perturbed copies
  of query images, with matching ground truth.
* A comparison of the retrieval configurations (BoVW alone, BoVW with re-ranking,
  and exhaustive image matching) on such a corpus.
"""

import itertools
import logging
import statistics
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, Field, field_validator

from .binarize import Scheme, binarize
from .descriptor import DESCRIPTOR_DIM, FINGERPRINT_BYTES, DescriptorSet, DescriptorType
from .distance import DistanceKind, NearestNeighbor, nearest_neighbor
from .errors import AuditError, InvalidInputError
from .evaluation import GroundTruth, evaluate
from .matching import DEFAULT_RATIO
from .retrieval import (
    DEFAULT_TOP_X,
    Index,
    RankList,
    Representation,
    RetrievalConfig,
    first_stage_rank,
    full_search_rank,
    query,
)
from .vocabulary import Vocabulary, build_histogram

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

ALL_KINDS = (
    DistanceKind.FLOAT_L2,
    DistanceKind.INT_L2,
    DistanceKind.HAMMING_NAIVE,
    DistanceKind.HAMMING_LOOKUP,
)

# Pairs whose nearest-neighbor answers must agree exactly on integer-derived data.
AUDITED_PAIRS = (
    (DistanceKind.HAMMING_NAIVE, DistanceKind.HAMMING_LOOKUP),
    (DistanceKind.INT_L2, DistanceKind.FLOAT_L2),
)


@dataclass(frozen=True, eq=False)
class SynthDescriptors:
    """The same random descriptors in float, 8-bit and BiSIFT form."""

    float_values: np.ndarray
    int_values: np.ndarray
    fingerprints: np.ndarray

    def __len__(self) -> int:
        return int(self.int_values.shape[0])

    def operand(self, kind: DistanceKind) -> np.ndarray:
        """Rows in the form ``kind`` consumes."""
        if kind is DistanceKind.FLOAT_L2:
            return self.float_values
        if kind is DistanceKind.INT_L2:
            return self.int_values
        return self.fingerprints


def gen_synth_descriptors(n: int, seed: int = 42) -> SynthDescriptors:
    """``n`` descriptors with components uniform in [0, 255], deterministic in ``seed``."""
    if n < 1:
        raise InvalidInputError(f"Descriptor count must be at least 1, got: {n}")
    rng = np.random.default_rng(seed)
    int_values = rng.integers(0, 256, size=(n, DESCRIPTOR_DIM), dtype=np.uint8)
    return SynthDescriptors(
        float_values=int_values.astype(np.float32),
        int_values=int_values,
        fingerprints=binarize(int_values, Scheme.BISIFT),
    )


class SynthConfig(BaseModel):
    """Timing ladder definition."""

    sizes: Tuple[int, ...] = (1_000, 10_000, 100_000, 500_000)
    queries: int = Field(default=10, ge=1)
    repeats: int = Field(default=5, ge=1)
    seed: int = Field(default=42, ge=0)
    kinds: Tuple[DistanceKind, ...] = ALL_KINDS

    @field_validator("sizes")
    @classmethod
    def validate_sizes(cls, v: Tuple[int, ...]) -> Tuple[int, ...]:
        if not v:
            raise ValueError("At least one database size is required")
        if v[0] < 1 or any(b <= a for a, b in zip(v, v[1:])):
            raise ValueError(f"Database sizes must be positive and strictly increasing, got: {v}")
        return v

    @field_validator("kinds")
    @classmethod
    def validate_kinds(cls, v: Tuple[DistanceKind, ...]) -> Tuple[DistanceKind, ...]:
        if not v:
            raise ValueError("At least one distance kind is required")
        return tuple(kind for kind in ALL_KINDS if kind in v)


class TimingCell(BaseModel):
    kind: DistanceKind
    db_size: int
    total_seconds: float = Field(gt=0.0)
    seconds_per_query: float = Field(gt=0.0)
    throughput: float = Field(gt=0.0, description="Database descriptors scanned per second")
    per_query_seconds: Tuple[float, ...]


class TimingReport(BaseModel):
    cells: List[TimingCell]
    queries: int
    repeats: int
    environment: str = "single worker"

    def cell(self, kind: DistanceKind, db_size: int) -> TimingCell:
        for cell in self.cells:
            if cell.kind is DistanceKind(kind) and cell.db_size == db_size:
                return cell
        raise KeyError((kind, db_size))

    @property
    def kinds(self) -> List[DistanceKind]:
        return [k for k in ALL_KINDS if any(c.kind is k for c in self.cells)]

    @property
    def sizes(self) -> List[int]:
        return sorted({c.db_size for c in self.cells})


class GainPoint(BaseModel):
    slower: DistanceKind
    faster: DistanceKind
    db_size: int
    gain: float


_RESOLUTION = time.get_clock_info("perf_counter").resolution


def _time_queries(
    queries: np.ndarray, database: np.ndarray, kind: DistanceKind, repeats: int
) -> Tuple[List[float], List[NearestNeighbor]]:
    """Median seconds per query over ``repeats`` runs, after one untimed warm-up."""
    answers = [nearest_neighbor(q, database, kind) for q in queries]
    samples: List[List[float]] = [[] for _ in range(len(queries))]
    for _ in range(repeats):
        for i, q in enumerate(queries):
            start = time.perf_counter()
            nearest_neighbor(q, database, kind)
            samples[i].append(time.perf_counter() - start)
    medians = [max(statistics.median(s), _RESOLUTION) for s in samples]
    return medians, answers


def _audit(answers: Dict[DistanceKind, List[NearestNeighbor]], db_size: int) -> None:
    for left, right in AUDITED_PAIRS:
        if left not in answers or right not in answers:
            continue
        for i, (a, b) in enumerate(zip(answers[left], answers[right])):
            exact = a == b if left.is_hamming else a.index == b.index
            if not exact:
                raise AuditError(
                    f"{left.value} and {right.value} disagree on query {i} at database size "
                    f"{db_size}: {tuple(a)} vs {tuple(b)}"
                )


def run_timing(cfg: SynthConfig) -> TimingReport:
    """Time single-worker nearest-neighbor search for every kind and ladder rung.

    Every rung scans a prefix of the same seeded database. Kernel answers are
    cross-checked outside the timed region.

    Raises:
        AuditError: If two kernels that must agree return different neighbors
    """
    database = gen_synth_descriptors(max(cfg.sizes), cfg.seed)
    probes = gen_synth_descriptors(cfg.queries, cfg.seed + 1)

    cells: List[TimingCell] = []
    for size in cfg.sizes:
        answers: Dict[DistanceKind, List[NearestNeighbor]] = {}
        for kind in cfg.kinds:
            rows = database.operand(kind)[:size]
            per_query, answers[kind] = _time_queries(probes.operand(kind), rows, kind, cfg.repeats)
            total = sum(per_query)
            cells.append(
                TimingCell(
                    kind=kind,
                    db_size=size,
                    total_seconds=total,
                    seconds_per_query=total / cfg.queries,
                    throughput=size * cfg.queries / total,
                    per_query_seconds=tuple(per_query),
                )
            )
            logger.info(f"{kind.value} @ {size}: {total / cfg.queries:.6f}s per query")
        _audit(answers, size)
    return TimingReport(cells=cells, queries=cfg.queries, repeats=cfg.repeats)


def gain_curves(report: TimingReport) -> List[GainPoint]:
    """Per-query time ratio of every pair of kinds at every rung.

    Pairs follow kernel order (float, integer, naive Hamming, lookup Hamming);
    the earlier kind is the numerator.
    """
    points: List[GainPoint] = []
    for slower, faster in itertools.combinations(report.kinds, 2):
        for size in report.sizes:
            gain = report.cell(slower, size).seconds_per_query / report.cell(faster, size).seconds_per_query
            points.append(GainPoint(slower=slower, faster=faster, db_size=size, gain=gain))
    return points


def storage_footprint() -> Dict[DescriptorType, int]:
    """Bytes per descriptor for every storage type."""
    return {
        DescriptorType.FLOAT32: DESCRIPTOR_DIM * np.dtype(np.float32).itemsize,
        DescriptorType.UINT8: DESCRIPTOR_DIM,
        DescriptorType.BINARY128: FINGERPRINT_BYTES,
    }


def write_timing(path: PathLike, report: TimingReport) -> None:
    lines = ["kind\tdb_size\tseconds_per_query"]
    lines += [f"{c.kind.value}\t{c.db_size}\t{c.seconds_per_query:.9f}" for c in report.cells]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_gain_curves(path: PathLike, points: Sequence[GainPoint]) -> None:
    lines = ["slower\tfaster\tdb_size\tgain"]
    lines += [f"{p.slower.value}\t{p.faster.value}\t{p.db_size}\t{p.gain:.6f}" for p in points]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


class CorpusConfig(BaseModel):
    """Planted near-duplicate corpus parameters (components on the 0-255 scale)."""

    base_images: int = Field(default=200, ge=1)
    queries: int = Field(default=10, ge=1)
    copies_per_query: int = Field(default=5, ge=1)
    keypoints: int = Field(default=80, ge=1)
    noise_sigma: float = Field(default=8.0, ge=0.0)
    dropout: float = Field(default=0.3, ge=0.0, le=1.0)
    distractor_rate: float = Field(default=0.2, ge=0.0)
    pool_size: int = Field(default=500, ge=1, description="Shared keypoint cluster centres")
    jitter: float = Field(default=20.0, ge=0.0, description="Per-image spread around a centre")
    seed: int = Field(default=42, ge=0)
    workers: int = Field(default=1, ge=1)


@dataclass(frozen=True)
class PlantedCorpus:
    """Database images (distractor base images plus planted copies), query images
    and the ground truth linking every query to its copies."""

    database: List[DescriptorSet]
    queries: List[DescriptorSet]
    ground_truth: GroundTruth


def _clustered(rng: np.random.Generator, centres: np.ndarray, count: int, jitter: float) -> np.ndarray:
    picks = rng.integers(0, centres.shape[0], size=count)
    values = centres[picks] + rng.normal(0.0, jitter, size=(count, DESCRIPTOR_DIM))
    return np.clip(np.rint(values), 0, 255).astype(np.uint8)


def perturb_copy(
    original: np.ndarray,
    rng: np.random.Generator,
    centres: np.ndarray,
    cfg: CorpusConfig,
) -> np.ndarray:
    """Noisy copy of an image: drop keypoints, add component noise, inject distractors.

    With zero noise, dropout and distractor rate the copy equals the original.
    """
    n = original.shape[0]
    dropped = int(round(cfg.dropout * n))
    keep = np.ones(n, dtype=bool)
    if dropped:
        keep[rng.choice(n, size=dropped, replace=False)] = False
    kept = original[keep]

    if cfg.noise_sigma > 0 and kept.shape[0]:
        noisy = kept.astype(np.float64) + rng.normal(0.0, cfg.noise_sigma, size=kept.shape)
        kept = np.clip(np.rint(noisy), 0, 255).astype(np.uint8)

    distractors = int(round(cfg.distractor_rate * n))
    if distractors:
        kept = np.vstack([kept, _clustered(rng, centres, distractors, cfg.jitter)])
    return kept


def gen_planted_corpus(cfg: Optional[CorpusConfig] = None) -> PlantedCorpus:
    """Generate a seeded planted corpus.

    Base images draw keypoints around shared cluster centres. Each query image is
    generated the same way and planted in the database as ``copies_per_query``
    perturbed copies. Every query forms its own theme in the ground truth.
    """
    cfg = cfg or CorpusConfig()
    centres = np.random.default_rng([cfg.seed, 0]).uniform(0.0, 255.0, size=(cfg.pool_size, DESCRIPTOR_DIM))

    def base_image(i: int) -> DescriptorSet:
        rng = np.random.default_rng([cfg.seed, 1, i])
        return DescriptorSet(f"base-{i:05d}", _clustered(rng, centres, cfg.keypoints, cfg.jitter))

    def query_image(q: int) -> DescriptorSet:
        rng = np.random.default_rng([cfg.seed, 2, q])
        return DescriptorSet(f"query-{q:03d}", _clustered(rng, centres, cfg.keypoints, cfg.jitter))

    def copies(q: int, original: DescriptorSet) -> List[DescriptorSet]:
        return [
            DescriptorSet(
                f"copy-{q:03d}-{c:02d}",
                perturb_copy(original.values, np.random.default_rng([cfg.seed, 3, q, c]), centres, cfg),
            )
            for c in range(cfg.copies_per_query)
        ]

    with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
        bases = list(pool.map(base_image, range(cfg.base_images)))
        queries = list(pool.map(query_image, range(cfg.queries)))
        planted = list(pool.map(copies, range(cfg.queries), queries))

    themes = {
        f"scene-{q:03d}": {queries[q].image_id: frozenset(c.image_id for c in planted[q])}
        for q in range(cfg.queries)
    }
    database = bases + [copy for group in planted for copy in group]
    logger.info(
        f"Planted corpus: {len(database)} database image(s), {len(queries)} query image(s)"
    )
    return PlantedCorpus(database=database, queries=queries, ground_truth=GroundTruth(themes=themes))


class ComparisonRow(BaseModel):
    configuration: str
    mean_ap: float
    seconds_per_query: float


class ComparisonReport(BaseModel):
    rows: List[ComparisonRow]

    def row(self, configuration: str) -> ComparisonRow:
        for row in self.rows:
            if row.configuration == configuration:
                return row
        raise KeyError(configuration)


CONFIGURATIONS: Tuple[Tuple[str, Optional[Representation], bool], ...] = (
    ("bovw", None, True),
    ("bovw+sift", Representation.SIFT, True),
    ("bovw+bisift", Representation.BISIFT, True),
    ("bovw+percell", Representation.PERCELL, True),
    ("sift", Representation.SIFT, False),
    ("bisift", Representation.BISIFT, False),
    ("percell", Representation.PERCELL, False),
)


def _bovw_only(raw: DescriptorSet, index: Index) -> RankList:
    start = time.perf_counter()
    first = first_stage_rank(build_histogram(raw, index.vocabulary), index)
    return RankList(first.query_id, first.entries, elapsed=time.perf_counter() - start)


def compare_configurations(
    corpus: PlantedCorpus,
    vocabulary: Vocabulary,
    top_x: int = DEFAULT_TOP_X,
    ratio: float = DEFAULT_RATIO,
    workers: int = 1,
    configurations: Optional[Sequence[str]] = None,
) -> ComparisonReport:
    """mAP and mean per-query time of every retrieval configuration on a corpus.

    ``bovw`` ranks by histograms only, ``bovw+<rep>`` re-ranks the top ``top_x``
    by matching ``<rep>`` keypoints, and a bare ``<rep>`` matches the query
    against every database image.
    """
    wanted = set(configurations) if configurations is not None else None
    indexes: Dict[Representation, Index] = {}

    def index_for(representation: Representation) -> Index:
        if representation not in indexes:
            indexes[representation] = Index.build(corpus.database, vocabulary, representation)
        return indexes[representation]

    rows: List[ComparisonRow] = []
    for name, representation, first_stage in CONFIGURATIONS:
        if wanted is not None and name not in wanted:
            continue
        index = index_for(representation or Representation.BISIFT)
        if representation is None:
            lists = [_bovw_only(raw, index) for raw in corpus.queries]
        elif first_stage:
            config = RetrievalConfig(top_x=top_x, ratio=ratio, representation=representation, workers=workers)
            lists = [query(raw, index, config) for raw in corpus.queries]
        else:
            lists = [
                full_search_rank(representation.represent(raw), index, ratio=ratio, workers=workers)
                for raw in corpus.queries
            ]
        report = evaluate(lists, corpus.ground_truth, cutoffs=(1,))
        seconds = sum(rank_list.elapsed or 0.0 for rank_list in lists) / max(len(lists), 1)
        rows.append(ComparisonRow(configuration=name, mean_ap=report.mean_ap, seconds_per_query=seconds))
        logger.info(f"{name}: mAP {report.mean_ap:.4f}, {seconds:.6f}s per query")
    return ComparisonReport(rows=rows)


def write_comparison(path: PathLike, report: ComparisonReport) -> None:
    lines = ["configuration\tmap\tseconds_per_query"]
    lines += [f"{r.configuration}\t{r.mean_ap:.6f}\t{r.seconds_per_query:.6f}" for r in report.rows]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
