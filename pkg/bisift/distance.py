"""Distance kernels for float, integer and binary descriptors.

Four strategies are provided: Euclidean distance on float descriptors summed in
double precision, Euclidean distance on 8-bit descriptors widened to integers, a naive
Hamming distance that compares unpacked bit vectors, and a Hamming distance that XORs
16-bit chunks and sums a 65,536-entry population-count table.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from enum import Enum
from typing import List, NamedTuple, Tuple, Union

import numpy as np

from .binarize import BinaryFingerprint, Scheme
from .descriptor import DESCRIPTOR_DIM, FINGERPRINT_BYTES, DescriptorSet
from .errors import DimensionError, EmptyDatabaseError, SchemeError

logger = logging.getLogger(__name__)

# Rows per chunk for row-vs-database scans; bounds temporaries on large databases.
SCAN_CHUNK = 1 << 16
# Element budget for (queries x references x width) blocks in pairwise scans.
BLOCK_BUDGET = 1 << 22


class DistanceKind(str, Enum):
    """The four benchmarked distance strategies."""

    FLOAT_L2 = "float-l2"
    INT_L2 = "int-l2"
    HAMMING_NAIVE = "hamming-naive"
    HAMMING_LOOKUP = "hamming-lookup"

    @property
    def is_hamming(self) -> bool:
        return self in (DistanceKind.HAMMING_NAIVE, DistanceKind.HAMMING_LOOKUP)


def _build_popcount_table() -> np.ndarray:
    values = np.arange(1 << 16, dtype="<u2").view(np.uint8).reshape(-1, 2)
    table = np.unpackbits(values, axis=1).sum(axis=1).astype(np.uint8)
    table.setflags(write=False)
    return table


# Built once at import; read-only afterwards.
POPCOUNT16 = _build_popcount_table()


class NearestNeighbor(NamedTuple):
    index: int
    distance: float
    second_distance: float


Query = Union[np.ndarray, BinaryFingerprint]
Database = Union[np.ndarray, DescriptorSet]


def euclidean(d_q: np.ndarray, d_r: np.ndarray) -> float:
    """Euclidean distance between two descriptors, evaluated in double precision.

    Raises:
        DimensionError: If the descriptors differ in shape
    """
    a = np.asarray(d_q, dtype=np.float64)
    b = np.asarray(d_r, dtype=np.float64)
    if a.ndim != 1 or a.shape != b.shape:
        raise DimensionError(
            f"Cannot compare descriptors of shapes {a.shape} and {b.shape}"
        )
    diff = a - b
    return float(np.sqrt(np.sum(diff * diff)))


def _check_schemes(a: BinaryFingerprint, b: BinaryFingerprint) -> None:
    if a.scheme is not b.scheme:
        raise SchemeError(
            f"Cannot compare {a.scheme.value} and {b.scheme.value} fingerprints"
        )


def hamming_naive(a: BinaryFingerprint, b: BinaryFingerprint) -> int:
    """Number of differing bits, counted over the unpacked bit vectors."""
    _check_schemes(a, b)
    return int(np.count_nonzero(a.unpacked() != b.unpacked()))


def hamming_lookup(a: BinaryFingerprint, b: BinaryFingerprint) -> int:
    """Number of differing bits via eight 16-bit table lookups."""
    _check_schemes(a, b)
    chunks = np.bitwise_xor(a.bits.view("<u2"), b.bits.view("<u2"))
    return int(POPCOUNT16[chunks].sum(dtype=np.int64))


def _query_array(query: Query, kind: DistanceKind) -> Tuple[np.ndarray, Union[Scheme, None]]:
    if isinstance(query, BinaryFingerprint):
        if not kind.is_hamming:
            raise SchemeError(f"{kind.value} cannot be applied to binary fingerprints")
        return query.bits, query.scheme

    vector = np.asarray(query)
    if kind.is_hamming:
        if vector.shape != (FINGERPRINT_BYTES,) or vector.dtype != np.uint8:
            raise SchemeError(f"{kind.value} needs a {FINGERPRINT_BYTES}-byte fingerprint")
        return vector, None
    if vector.shape != (DESCRIPTOR_DIM,):
        raise DimensionError(
            f"Descriptor must have {DESCRIPTOR_DIM} components, got shape {vector.shape}"
        )
    return vector, None


def _database_array(database: Database, kind: DistanceKind) -> Tuple[np.ndarray, Union[Scheme, None]]:
    if isinstance(database, DescriptorSet):
        values, scheme = database.values, database.scheme
    else:
        values, scheme = np.asarray(database), None

    if values.ndim != 2:
        raise DimensionError(f"Database must be a 2-D matrix, got shape {values.shape}")
    if kind.is_hamming:
        if values.shape[1] != FINGERPRINT_BYTES or values.dtype != np.uint8:
            raise SchemeError(f"{kind.value} needs packed {FINGERPRINT_BYTES}-byte fingerprints")
    elif scheme is not None or values.shape[1] != DESCRIPTOR_DIM:
        raise SchemeError(f"{kind.value} needs {DESCRIPTOR_DIM}-D descriptors")
    return values, scheme


def prepare_operands(query: Query, database: Database, kind: DistanceKind) -> Tuple[np.ndarray, np.ndarray]:
    """Validate a query/database pair for ``kind`` and cast to the kernel's dtype.

    Raises:
        SchemeError: If the representations do not fit ``kind`` or each other
        DimensionError: If a descriptor has the wrong length
    """
    kind = DistanceKind(kind)
    q, q_scheme = _query_array(query, kind)
    db, db_scheme = _database_array(database, kind)
    if q_scheme is not None and db_scheme is not None and q_scheme is not db_scheme:
        raise SchemeError(
            f"Query scheme {q_scheme.value} does not match database scheme {db_scheme.value}"
        )
    return cast_for_kind(q, kind), cast_for_kind(db, kind)


def cast_for_kind(values: np.ndarray, kind: DistanceKind) -> np.ndarray:
    """Convert a descriptor array to the element type ``kind`` operates on."""
    if kind is DistanceKind.FLOAT_L2:
        return np.ascontiguousarray(values, dtype=np.float32)
    if kind is DistanceKind.INT_L2:
        if values.dtype != np.uint8:
            raise SchemeError("int-l2 needs 8-bit integer descriptors")
        return values
    if kind is DistanceKind.HAMMING_LOOKUP:
        return np.ascontiguousarray(values).view("<u2")
    return values


def _scan(q: np.ndarray, db: np.ndarray, kind: DistanceKind) -> np.ndarray:
    """Distances from one prepared query to every row of a prepared database chunk."""
    if kind is DistanceKind.FLOAT_L2:
        diff = db.astype(np.float64) - q.astype(np.float64)
        return np.sqrt(np.sum(diff * diff, axis=1))
    if kind is DistanceKind.INT_L2:
        diff = db.astype(np.int32) - q.astype(np.int32)
        return np.sqrt(np.sum(diff * diff, axis=1).astype(np.float64))
    if kind is DistanceKind.HAMMING_NAIVE:
        q_bits = np.unpackbits(q, bitorder="little")
        db_bits = np.unpackbits(db, axis=1, bitorder="little")
        return np.count_nonzero(db_bits != q_bits, axis=1).astype(np.int64)
    return POPCOUNT16[np.bitwise_xor(db, q)].sum(axis=1, dtype=np.int64)


def scan_distances(q: np.ndarray, db: np.ndarray, kind: DistanceKind) -> np.ndarray:
    """Distances from a prepared query to a prepared database, chunked over rows."""
    kind = DistanceKind(kind)
    if db.shape[0] <= SCAN_CHUNK:
        return _scan(q, db, kind)
    parts = [_scan(q, db[start:start + SCAN_CHUNK], kind) for start in range(0, db.shape[0], SCAN_CHUNK)]
    return np.concatenate(parts)


def distances(query: Query, database: Database, kind: DistanceKind) -> np.ndarray:
    """Distances from ``query`` to every element of ``database``."""
    kind = DistanceKind(kind)
    q, db = prepare_operands(query, database, kind)
    return scan_distances(q, db, kind)


def pairwise_distances(queries: Database, references: Database, kind: DistanceKind) -> np.ndarray:
    """Full (|queries| x |references|) distance matrix, computed in row blocks."""
    kind = DistanceKind(kind)
    q_values, q_scheme = _database_array(queries, kind)
    r_values, r_scheme = _database_array(references, kind)
    if q_scheme is not None and r_scheme is not None and q_scheme is not r_scheme:
        raise SchemeError(
            f"Cannot match {q_scheme.value} fingerprints against {r_scheme.value} fingerprints"
        )

    m, n = q_values.shape[0], r_values.shape[0]
    out_dtype = np.int64 if kind.is_hamming else np.float64
    if m == 0 or n == 0:
        return np.zeros((m, n), dtype=out_dtype)

    q = cast_for_kind(q_values, kind)
    r = cast_for_kind(r_values, kind)
    if kind is DistanceKind.HAMMING_NAIVE:
        q = np.unpackbits(q, axis=1, bitorder="little")
        r = np.unpackbits(r, axis=1, bitorder="little")
    elif kind is DistanceKind.INT_L2:
        q = q.astype(np.int32)
        r = r.astype(np.int32)
    elif kind is DistanceKind.FLOAT_L2:
        q = q.astype(np.float64)
        r = r.astype(np.float64)

    rows = max(1, BLOCK_BUDGET // (n * q.shape[1]))
    out = np.empty((m, n), dtype=out_dtype)
    for start in range(0, m, rows):
        block = q[start:start + rows, None, :]
        if kind is DistanceKind.HAMMING_LOOKUP:
            out[start:start + rows] = POPCOUNT16[np.bitwise_xor(block, r[None])].sum(axis=2, dtype=np.int64)
        elif kind is DistanceKind.HAMMING_NAIVE:
            out[start:start + rows] = np.count_nonzero(block != r[None], axis=2)
        else:
            diff = block - r[None]
            out[start:start + rows] = np.sqrt(np.sum(diff * diff, axis=2).astype(np.float64))
    return out


def _number(value, kind: DistanceKind):
    if math.isinf(value):
        return math.inf
    return int(value) if kind.is_hamming else float(value)


def best_two(dists: np.ndarray, offset: int = 0) -> List[Tuple[float, int]]:
    """The smallest and second-smallest (distance, index) pairs, ties to lowest index."""
    if dists.shape[0] == 0:
        return []
    best = int(np.argmin(dists))
    found = [(dists[best], best + offset)]
    if dists.shape[0] > 1:
        rest = dists.astype(np.float64, copy=True)
        rest[best] = math.inf
        second = int(np.argmin(rest))
        found.append((dists[second], second + offset))
    return found


def _merge(candidates: List[Tuple[float, int]], kind: DistanceKind) -> NearestNeighbor:
    ordered = sorted(candidates, key=lambda item: (float(item[0]), item[1]))
    best_distance, best_index = ordered[0]
    second = ordered[1][0] if len(ordered) > 1 else math.inf
    return NearestNeighbor(int(best_index), _number(best_distance, kind), _number(second, kind))


def nearest_neighbor(query: Query, database: Database, kind: DistanceKind, workers: int = 1) -> NearestNeighbor:
    """Nearest and second-nearest database entries for ``query``.

    The second distance is taken over a different index, so duplicates yield 0.
    A single-element database reports ``math.inf`` as second distance.

    Raises:
        EmptyDatabaseError: If the database is empty
        SchemeError: If ``kind`` does not fit the operands
    """
    kind = DistanceKind(kind)
    q, db = prepare_operands(query, database, kind)
    size = db.shape[0]
    if size == 0:
        raise EmptyDatabaseError("Nearest-neighbor search over an empty database")

    if workers <= 1 or size < 2 * workers:
        return _merge(best_two(scan_distances(q, db, kind)), kind)

    bounds = np.linspace(0, size, workers + 1).astype(int)
    spans = [(int(lo), int(hi)) for lo, hi in zip(bounds[:-1], bounds[1:]) if hi > lo]

    def local(span: Tuple[int, int]) -> List[Tuple[float, int]]:
        lo, hi = span
        return best_two(scan_distances(q, db[lo:hi], kind), offset=lo)

    with ThreadPoolExecutor(max_workers=workers) as pool:
        candidates = [pair for part in pool.map(local, spans) for pair in part]
    return _merge(candidates, kind)
