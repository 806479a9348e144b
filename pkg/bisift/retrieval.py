"""Two-stage copy retrieval: BoVW first-stage ranking, then re-ranking of the top-X
candidates by image-to-image keypoint matching.

An :class:`Index` keeps, for every database image, its L2-normalized BoVW
histogram and its per-keypoint representation (raw SIFT, BiSIFT or per-cell
fingerprints). Indexes persist as a manifest pointing into raw descriptor files;
histograms and fingerprints are rebuilt on load.
"""

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, Field, model_validator

from .binarize import Scheme, binarize_set
from .descriptor import DescriptorSet, DescriptorType
from .distance import DistanceKind
from .errors import FormatError, InvalidInputError, SchemeError, VocabularyMismatchError
from .matching import DEFAULT_RATIO, ImageSimilarity, match_images, validate_ratio
from .storage import Manifest, ManifestEntry, load_vocabulary, read_manifest, read_records
from .vocabulary import BovwHistogram, Vocabulary, build_histogram

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

DEFAULT_TOP_X = 30


class Representation(str, Enum):
    """Per-keypoint representation used for image-to-image matching."""

    SIFT = "sift"
    BISIFT = "bisift"
    PERCELL = "percell"

    @property
    def scheme(self) -> Optional[Scheme]:
        if self is Representation.SIFT:
            return None
        return Scheme(self.value)

    @property
    def default_kind(self) -> DistanceKind:
        if self is Representation.SIFT:
            return DistanceKind.FLOAT_L2
        return DistanceKind.HAMMING_LOOKUP

    def represent(self, raw: DescriptorSet) -> DescriptorSet:
        """Turn a raw descriptor set into this representation."""
        if raw.dtype == DescriptorType.BINARY128:
            raise InvalidInputError(f"Image {raw.image_id!r} must be given as raw descriptors")
        if self is Representation.SIFT:
            return raw
        return binarize_set(raw, self.scheme)


class Stage(str, Enum):
    FIRST = "first"
    RERANKED = "reranked"
    FULL = "full"


class RetrievalConfig(BaseModel):
    """Parameters of one retrieval run."""

    top_x: int = Field(default=DEFAULT_TOP_X, ge=1, description="Candidates re-ranked by matching")
    ratio: float = Field(default=DEFAULT_RATIO, gt=0.0, le=1.0, description="Ratio-test threshold")
    representation: Representation = Representation.BISIFT
    kind: Optional[DistanceKind] = None
    workers: int = Field(default=1, ge=1)

    @model_validator(mode="after")
    def check_kind(self) -> "RetrievalConfig":
        if self.kind is None:
            self.kind = self.representation.default_kind
        binary = self.representation is not Representation.SIFT
        if self.kind.is_hamming != binary:
            raise ValueError(
                f"Distance kind {self.kind.value} does not apply to {self.representation.value} descriptors"
            )
        return self


class RankEntry(NamedTuple):
    image_id: str
    score: float
    stage: Stage
    similarity: Optional[ImageSimilarity] = None


@dataclass(frozen=True)
class RankList:
    """Ordered results for one query.

    ``elapsed`` is the wall time of the search in seconds; it is never persisted.
    """

    query_id: str
    entries: Tuple[RankEntry, ...]
    elapsed: Optional[float] = field(default=None, compare=False)

    def __post_init__(self):
        entries = tuple(self.entries)
        ids = [entry.image_id for entry in entries]
        if len(set(ids)) != len(ids):
            raise InvalidInputError(f"Rank list for {self.query_id!r} repeats an image id")
        object.__setattr__(self, "entries", entries)

    @property
    def image_ids(self) -> List[str]:
        return [entry.image_id for entry in self.entries]

    def __len__(self) -> int:
        return len(self.entries)


@dataclass(frozen=True, eq=False)
class Index:
    """In-memory, immutable retrieval index."""

    image_ids: Tuple[str, ...]
    histograms: np.ndarray
    fingerprints: Tuple[DescriptorSet, ...]
    vocabulary: Vocabulary
    representation: Representation
    _positions: Dict[str, int] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if len(set(self.image_ids)) != len(self.image_ids):
            raise InvalidInputError("Index image ids must be unique")
        if not (len(self.image_ids) == self.histograms.shape[0] == len(self.fingerprints)):
            raise InvalidInputError("Index histograms and fingerprints must cover every image")
        self.histograms.setflags(write=False)
        self._positions.update({image_id: i for i, image_id in enumerate(self.image_ids)})

    @classmethod
    def build(
        cls,
        sets: Sequence[DescriptorSet],
        vocabulary: Vocabulary,
        representation: Representation = Representation.BISIFT,
    ) -> "Index":
        """Index raw descriptor sets: one histogram and one fingerprint set per image."""
        representation = Representation(representation)
        histograms = [build_histogram(s, vocabulary) for s in sets]
        matrix = (
            np.vstack([h.weights for h in histograms])
            if histograms
            else np.zeros((0, vocabulary.size), dtype=np.float64)
        )
        fingerprints = tuple(representation.represent(s) for s in sets)
        logger.info(
            f"Indexed {len(sets)} image(s) with a {vocabulary.size}-word vocabulary "
            f"and {representation.value} keypoints"
        )
        return cls(
            image_ids=tuple(s.image_id for s in sets),
            histograms=matrix,
            fingerprints=fingerprints,
            vocabulary=vocabulary,
            representation=representation,
        )

    def __len__(self) -> int:
        return len(self.image_ids)

    def fingerprint(self, image_id: str) -> DescriptorSet:
        return self.fingerprints[self._positions[image_id]]


def first_stage_rank(q: BovwHistogram, index: Index) -> RankList:
    """Rank every indexed image by Euclidean distance between histograms.

    Ascending distance; equal distances are ordered by image id.

    Raises:
        VocabularyMismatchError: If the histogram length differs from the index vocabulary
    """
    if q.size != index.vocabulary.size:
        raise VocabularyMismatchError(
            f"Query histogram has {q.size} words, index vocabulary has {index.vocabulary.size}"
        )
    diff = index.histograms - q.weights[None, :]
    dists = np.sqrt(np.sum(diff * diff, axis=1))
    order = sorted(range(len(index)), key=lambda i: (float(dists[i]), index.image_ids[i]))
    entries = [RankEntry(index.image_ids[i], float(dists[i]), Stage.FIRST) for i in order]
    return RankList(q.image_id, tuple(entries))


def _check_query_representation(q_fp: DescriptorSet, index: Index) -> None:
    if q_fp.scheme != index.representation.scheme:
        found = q_fp.scheme.value if q_fp.scheme else q_fp.dtype.value
        raise SchemeError(
            f"Query {q_fp.image_id!r} is {found}; the index holds {index.representation.value} keypoints"
        )


def _match_all(
    q_fp: DescriptorSet,
    image_ids: Sequence[str],
    index: Index,
    kind: DistanceKind,
    ratio: float,
    workers: int,
) -> List[ImageSimilarity]:
    def score(image_id: str) -> ImageSimilarity:
        return match_images(q_fp, index.fingerprint(image_id), kind, ratio)[0]

    if workers > 1 and len(image_ids) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(score, image_ids))
    return [score(image_id) for image_id in image_ids]


def rerank_top_x(
    first: RankList,
    q_fp: DescriptorSet,
    index: Index,
    top_x: int = DEFAULT_TOP_X,
    ratio: float = DEFAULT_RATIO,
    kind: Optional[DistanceKind] = None,
    workers: int = 1,
) -> RankList:
    """Re-order the first ``top_x`` entries by keypoint-matching similarity.

    The re-ranked block is sorted by match count (descending), then total match
    distance (ascending), then first-stage rank. Entries past ``top_x`` follow in
    their original order.

    Args:
        first: First-stage rank list of the query
        q_fp: Query keypoints in the representation of the index
        index: Index whose images are matched
        top_x: Number of leading entries to re-rank
        ratio: Reliable-match threshold S in (0, 1]
        kind: Distance kernel; defaults to the one of the index representation
        workers: Threads for image matching

    Returns:
        A rank list with the re-ranked head followed by the untouched tail

    Raises:
        InvalidInputError: If ``top_x`` < 1 or ``ratio`` is outside (0, 1]
        SchemeError: If the query representation differs from the index
    """
    if top_x < 1:
        raise InvalidInputError(f"top_x must be at least 1, got: {top_x}")
    validate_ratio(ratio)
    _check_query_representation(q_fp, index)
    kind = DistanceKind(kind) if kind is not None else index.representation.default_kind

    head = first.entries[:top_x]
    tail = first.entries[top_x:]
    similarities = _match_all(q_fp, [e.image_id for e in head], index, kind, ratio, workers)

    order = sorted(
        range(len(head)),
        key=lambda i: (-similarities[i].match_count, similarities[i].total_dist, i),
    )
    reranked = [
        RankEntry(head[i].image_id, float(similarities[i].match_count), Stage.RERANKED, similarities[i])
        for i in order
    ]
    logger.debug(f"Re-ranked {len(head)} candidate(s) for {first.query_id!r}")
    return RankList(first.query_id, tuple(reranked) + tuple(tail), elapsed=first.elapsed)


def full_search_rank(
    q_fp: DescriptorSet,
    index: Index,
    kind: Optional[DistanceKind] = None,
    ratio: float = DEFAULT_RATIO,
    workers: int = 1,
) -> RankList:
    """Rank the whole database by image-to-image matching alone (no BoVW stage).

    Ties on similarity are ordered by image id.
    """
    validate_ratio(ratio)
    _check_query_representation(q_fp, index)
    kind = DistanceKind(kind) if kind is not None else index.representation.default_kind

    start = time.perf_counter()
    similarities = _match_all(q_fp, index.image_ids, index, kind, ratio, workers)
    order = sorted(
        range(len(index)),
        key=lambda i: (-similarities[i].match_count, similarities[i].total_dist, index.image_ids[i]),
    )
    entries = [
        RankEntry(index.image_ids[i], float(similarities[i].match_count), Stage.FULL, similarities[i])
        for i in order
    ]
    return RankList(q_fp.image_id, tuple(entries), elapsed=time.perf_counter() - start)


def query(raw: DescriptorSet, index: Index, config: Optional[RetrievalConfig] = None) -> RankList:
    """Answer one query image: first-stage ranking, then top-X re-ranking."""
    config = config or RetrievalConfig(representation=index.representation)
    if config.representation is not index.representation:
        raise SchemeError(
            f"Configured for {config.representation.value} keypoints; "
            f"the index holds {index.representation.value}"
        )
    start = time.perf_counter()
    first = first_stage_rank(build_histogram(raw, index.vocabulary), index)
    final = rerank_top_x(
        first,
        index.representation.represent(raw),
        index,
        top_x=config.top_x,
        ratio=config.ratio,
        kind=config.kind,
        workers=config.workers,
    )
    elapsed = time.perf_counter() - start
    logger.debug(f"Query {raw.image_id!r} answered in {elapsed:.6f}s")
    return RankList(final.query_id, final.entries, elapsed=elapsed)


def build_manifest(
    descriptor_files: Sequence[PathLike],
    vocabulary_file: PathLike,
    representation: Representation = Representation.BISIFT,
) -> Manifest:
    """Manifest entries for every image record of the given raw descriptor files."""
    entries: List[ManifestEntry] = []
    for path in descriptor_files:
        for offset, descriptor_set in read_records(path):
            if descriptor_set.dtype == DescriptorType.BINARY128:
                raise InvalidInputError(f"{path} holds fingerprints; index raw descriptors instead")
            entries.append(ManifestEntry(descriptor_set.image_id, str(path), offset))
    return Manifest(
        entries=entries,
        vocabulary=str(vocabulary_file),
        representation=Representation(representation).value,
    )


def _resolve(base: Path, value: str) -> Path:
    path = Path(value)
    return path if path.is_absolute() else base / path


def load_index(manifest_path: PathLike) -> Index:
    """Rebuild an index from its manifest.

    Relative paths in the manifest are resolved against the manifest's directory.

    Raises:
        FormatError: Manifest lacks a vocabulary, or an entry does not point at a record
    """
    manifest_path = Path(manifest_path)
    manifest = read_manifest(manifest_path)
    if manifest.vocabulary is None:
        raise FormatError(f"{manifest_path} does not name a vocabulary")
    base = manifest_path.parent
    vocabulary = load_vocabulary(_resolve(base, manifest.vocabulary))
    representation = Representation(manifest.representation or Representation.BISIFT.value)

    records: Dict[str, Dict[int, DescriptorSet]] = {}
    sets: List[DescriptorSet] = []
    for entry in manifest.entries:
        if entry.descriptor_file not in records:
            loaded = read_records(_resolve(base, entry.descriptor_file))
            records[entry.descriptor_file] = dict(loaded)
        found = records[entry.descriptor_file].get(entry.offset)
        if found is None or found.image_id != entry.image_id:
            raise FormatError(
                f"No record for image {entry.image_id!r} at offset {entry.offset} of {entry.descriptor_file}"
            )
        sets.append(found)
    return Index.build(sets, vocabulary, representation)


def write_rank_lists(path: PathLike, rank_lists: Sequence[RankList]) -> None:
    """Write rank lists as ``query_id, rank, image_id, score, stage`` TSV rows."""
    lines = []
    for rank_list in rank_lists:
        for rank, entry in enumerate(rank_list.entries, start=1):
            lines.append(
                f"{rank_list.query_id}\t{rank}\t{entry.image_id}\t{entry.score:.6f}\t{entry.stage.value}"
            )
    Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")


def read_rank_lists(path: PathLike) -> List[RankList]:
    """Read a rank-list TSV; lists come back in first-appearance order of their query.

    Raises:
        FormatError: Malformed row or ranks out of sequence
    """
    grouped: Dict[str, List[RankEntry]] = {}
    text = Path(path).read_text(encoding="utf-8")
    for number, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 5:
            raise FormatError(f"{path}:{number}: expected 5 tab-separated fields, got {len(parts)}")
        query_id, rank, image_id, score, stage = parts
        entries = grouped.setdefault(query_id, [])
        try:
            position, entry = int(rank), RankEntry(image_id, float(score), Stage(stage))
        except ValueError as e:
            raise FormatError(f"{path}:{number}: {e}") from e
        if position != len(entries) + 1:
            raise FormatError(f"{path}:{number}: rank {rank} out of sequence for {query_id!r}")
        entries.append(entry)
    return [RankList(query_id, tuple(entries)) for query_id, entries in grouped.items()]
