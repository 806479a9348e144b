"""On-disk formats: descriptor files, vocabulary files, index manifests and
TEXMEX ``.fvecs``/``.bvecs`` import.

Descriptor file (little-endian)::

    magic "BSFT" | version u16 = 1 | dtype u8 | reserved u8 = 0 | image count u32
    per image: id length u16 | id UTF-8 | descriptor count u32 | row-major payload

dtype 0 is float32 x 128, 1 is uint8 x 128 and 2 is 16-byte packed fingerprints.

Vocabulary file (little-endian)::

    magic "BVOC" | version u16 = 1 | K u32 | dim u32 = 128 | float32 K x 128 |
    seed u64 | iterations u32
"""

import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np

from .binarize import Scheme
from .descriptor import DESCRIPTOR_DIM, FINGERPRINT_BYTES, DescriptorSet, DescriptorType
from .errors import CorruptionError, DimensionError, FormatError, InvalidInputError
from .vocabulary import Vocabulary

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

DESCRIPTOR_MAGIC = b"BSFT"
VOCABULARY_MAGIC = b"BVOC"
FORMAT_VERSION = 1

_FILE_HEADER = struct.Struct("<4sHBBI")
_ID_LENGTH = struct.Struct("<H")
_COUNT = struct.Struct("<I")
_VOCAB_HEADER = struct.Struct("<4sHII")
_VOCAB_FOOTER = struct.Struct("<QI")

_ROW_LAYOUT = {
    DescriptorType.FLOAT32: (np.dtype("<f4"), DESCRIPTOR_DIM),
    DescriptorType.UINT8: (np.dtype("u1"), DESCRIPTOR_DIM),
    DescriptorType.BINARY128: (np.dtype("u1"), FINGERPRINT_BYTES),
}


def _row_bytes(dtype: DescriptorType) -> int:
    element, width = _ROW_LAYOUT[dtype]
    return element.itemsize * width


def _encode_id(image_id: str) -> bytes:
    encoded = image_id.encode("utf-8")
    if len(encoded) > 0xFFFF:
        raise InvalidInputError(f"Image id is {len(encoded)} bytes long; the limit is 65535")
    return encoded


def encode_descriptor_sets(
    sets: Sequence[DescriptorSet], dtype: Optional[DescriptorType] = None
) -> Tuple[bytes, List[int]]:
    """Serialize descriptor sets; returns the file bytes and each image record's offset.

    Raises:
        InvalidInputError: If the sets mix storage types
    """
    types = {s.dtype for s in sets}
    if len(types) > 1:
        raise InvalidInputError(
            f"Descriptor file cannot mix types: {sorted(t.value for t in types)}"
        )
    file_type = types.pop() if types else DescriptorType(dtype or DescriptorType.FLOAT32)
    element, width = _ROW_LAYOUT[file_type]

    chunks = [_FILE_HEADER.pack(DESCRIPTOR_MAGIC, FORMAT_VERSION, file_type.code, 0, len(sets))]
    offsets: List[int] = []
    position = _FILE_HEADER.size
    for descriptor_set in sets:
        offsets.append(position)
        encoded = _encode_id(descriptor_set.image_id)
        payload = np.ascontiguousarray(descriptor_set.values, dtype=element).tobytes()
        record = b"".join([
            _ID_LENGTH.pack(len(encoded)),
            encoded,
            _COUNT.pack(descriptor_set.count),
            payload,
        ])
        chunks.append(record)
        position += len(record)
    return b"".join(chunks), offsets


def save_descriptors(
    path: PathLike, sets: Sequence[DescriptorSet], dtype: Optional[DescriptorType] = None
) -> List[int]:
    """Write a descriptor file; returns the byte offset of every image record."""
    data, offsets = encode_descriptor_sets(sets, dtype)
    Path(path).write_bytes(data)
    logger.info(f"Wrote {len(sets)} image(s) to {path}")
    return offsets


def _read_header(data: bytes) -> Tuple[DescriptorType, int]:
    if data[:4] != DESCRIPTOR_MAGIC:
        raise FormatError(f"Not a descriptor file: bad magic {data[:4]!r}")
    if len(data) < _FILE_HEADER.size:
        raise CorruptionError("Truncated descriptor file header", len(data))
    _, version, code, reserved, count = _FILE_HEADER.unpack_from(data, 0)
    if version != FORMAT_VERSION:
        raise FormatError(f"Unsupported descriptor file version {version}")
    if reserved != 0:
        raise FormatError(f"Reserved header byte must be 0, got {reserved}")
    try:
        file_type = DescriptorType.from_code(code)
    except ValueError as e:
        raise FormatError(str(e)) from e
    return file_type, count


def _need(data: bytes, offset: int, size: int, what: str) -> None:
    if offset + size > len(data):
        raise CorruptionError(
            f"Truncated {what}: need {size} byte(s), {len(data) - offset} left", offset
        )


def _read_record(
    data: bytes, offset: int, file_type: DescriptorType, scheme: Scheme
) -> Tuple[DescriptorSet, int]:
    _need(data, offset, _ID_LENGTH.size, "image id length")
    (id_length,) = _ID_LENGTH.unpack_from(data, offset)
    offset += _ID_LENGTH.size

    _need(data, offset, id_length, "image id")
    try:
        image_id = data[offset:offset + id_length].decode("utf-8")
    except UnicodeDecodeError as e:
        raise CorruptionError(f"Image id is not valid UTF-8: {e}", offset) from e
    offset += id_length

    _need(data, offset, _COUNT.size, "descriptor count")
    (count,) = _COUNT.unpack_from(data, offset)
    offset += _COUNT.size

    element, width = _ROW_LAYOUT[file_type]
    payload_size = count * _row_bytes(file_type)
    _need(data, offset, payload_size, f"payload of image {image_id!r}")
    if count:
        values = np.frombuffer(data, dtype=element, count=count * width, offset=offset).reshape(count, width)
    else:
        values = np.zeros((0, width), dtype=element)
    offset += payload_size

    if file_type == DescriptorType.BINARY128:
        return DescriptorSet(image_id, values, scheme=scheme), offset
    return DescriptorSet(image_id, values), offset


def read_records(path: PathLike, scheme: Scheme = Scheme.BISIFT) -> List[Tuple[int, DescriptorSet]]:
    """Every (record offset, descriptor set) pair of a descriptor file, in file order.

    Binary files do not record their scheme; ``scheme`` tags the loaded fingerprints.

    Raises:
        FormatError: Bad magic, version or dtype
        CorruptionError: Truncated or trailing payload
    """
    data = Path(path).read_bytes()
    file_type, count = _read_header(data)
    records: List[Tuple[int, DescriptorSet]] = []
    offset = _FILE_HEADER.size
    for _ in range(count):
        start = offset
        descriptor_set, offset = _read_record(data, offset, file_type, Scheme(scheme))
        records.append((start, descriptor_set))
    if offset != len(data):
        raise CorruptionError(f"{len(data) - offset} unexpected trailing byte(s)", offset)
    return records


def load_descriptors(path: PathLike, scheme: Scheme = Scheme.BISIFT) -> List[DescriptorSet]:
    """Load all descriptor sets of a file, preserving file order.

    Args:
        path: Descriptor file to read
        scheme: Fingerprint scheme assigned to binary sets; ignored for raw files

    Returns:
        One descriptor set per image record

    Raises:
        FormatError: If the file is not a descriptor file of a supported version
        CorruptionError: If a record is truncated or bytes trail the last record
    """
    sets = [descriptor_set for _, descriptor_set in read_records(path, scheme)]
    logger.debug(f"Loaded {len(sets)} image(s) from {path}")
    return sets


def descriptor_file_type(path: PathLike) -> DescriptorType:
    """Storage type declared in a descriptor file header."""
    with Path(path).open("rb") as handle:
        header = handle.read(_FILE_HEADER.size)
    return _read_header(header)[0]


def save_vocabulary(path: PathLike, vocabulary: Vocabulary) -> None:
    """Write a vocabulary file."""
    data = b"".join([
        _VOCAB_HEADER.pack(VOCABULARY_MAGIC, FORMAT_VERSION, vocabulary.size, DESCRIPTOR_DIM),
        np.ascontiguousarray(vocabulary.centroids, dtype="<f4").tobytes(),
        _VOCAB_FOOTER.pack(vocabulary.seed, vocabulary.iterations),
    ])
    Path(path).write_bytes(data)
    logger.info(f"Wrote {vocabulary.size}-word vocabulary to {path}")


def load_vocabulary(path: PathLike) -> Vocabulary:
    """Read a vocabulary file.

    Raises:
        FormatError: Bad magic or version
        DimensionError: Centroid dimension other than 128
        CorruptionError: Truncated payload or footer, or trailing bytes
    """
    data = Path(path).read_bytes()
    if data[:4] != VOCABULARY_MAGIC:
        raise FormatError(f"Not a vocabulary file: bad magic {data[:4]!r}")
    _need(data, 0, _VOCAB_HEADER.size, "vocabulary header")
    _, version, k, dim = _VOCAB_HEADER.unpack_from(data, 0)
    if version != FORMAT_VERSION:
        raise FormatError(f"Unsupported vocabulary file version {version}")
    if dim != DESCRIPTOR_DIM:
        raise DimensionError(f"Vocabulary dimension must be {DESCRIPTOR_DIM}, got {dim}")
    if k < 1:
        raise FormatError("Vocabulary must hold at least one centroid")

    offset = _VOCAB_HEADER.size
    payload = k * dim * 4
    _need(data, offset, payload, "centroid payload")
    centroids = np.frombuffer(data, dtype="<f4", count=k * dim, offset=offset).reshape(k, dim)
    offset += payload

    _need(data, offset, _VOCAB_FOOTER.size, "vocabulary footer")
    seed, iterations = _VOCAB_FOOTER.unpack_from(data, offset)
    offset += _VOCAB_FOOTER.size
    if offset != len(data):
        raise CorruptionError(f"{len(data) - offset} unexpected trailing byte(s)", offset)
    return Vocabulary(centroids=centroids, iterations=iterations, seed=seed)


class ManifestEntry(NamedTuple):
    image_id: str
    descriptor_file: str
    offset: int


@dataclass
class Manifest:
    """Index manifest: one line per image plus ``#`` header lines."""

    entries: List[ManifestEntry] = field(default_factory=list)
    vocabulary: Optional[str] = None
    representation: Optional[str] = None


def _check_field(value: str, what: str) -> None:
    if "\t" in value or "\n" in value or "\r" in value:
        raise InvalidInputError(f"{what} may not contain tabs or newlines: {value!r}")


def write_manifest(path: PathLike, manifest: Manifest) -> None:
    lines = []
    if manifest.vocabulary is not None:
        lines.append(f"# vocabulary\t{manifest.vocabulary}")
    if manifest.representation is not None:
        lines.append(f"# representation\t{manifest.representation}")
    for entry in manifest.entries:
        _check_field(entry.image_id, "Image id")
        _check_field(entry.descriptor_file, "Descriptor file path")
        lines.append(f"{entry.image_id}\t{entry.descriptor_file}\t{entry.offset}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_manifest(path: PathLike) -> Manifest:
    """Parse an index manifest.

    Raises:
        FormatError: Malformed line
    """
    manifest = Manifest()
    text = Path(path).read_text(encoding="utf-8")
    for number, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        if line.startswith("#"):
            key, _, value = line[1:].strip().partition("\t")
            if key == "vocabulary":
                manifest.vocabulary = value
            elif key == "representation":
                manifest.representation = value
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise FormatError(f"{path}:{number}: expected 3 tab-separated fields, got {len(parts)}")
        try:
            offset = int(parts[2])
        except ValueError as e:
            raise FormatError(f"{path}:{number}: bad offset {parts[2]!r}") from e
        manifest.entries.append(ManifestEntry(parts[0], parts[1], offset))
    return manifest


def load_vecs(path: PathLike, image_id: Optional[str] = None) -> DescriptorSet:
    """Import a TEXMEX ``.fvecs`` (float32) or ``.bvecs`` (uint8) file as one image.

    Each record is an int32 dimension followed by that many components.

    Raises:
        DimensionError: A record's dimension is not 128
        CorruptionError: Truncated record
        FormatError: Unknown extension
    """
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix == ".fvecs":
        element = np.dtype("<f4")
    elif suffix == ".bvecs":
        element = np.dtype("u1")
    else:
        raise FormatError(f"Unknown vector file extension {suffix!r}; expected .fvecs or .bvecs")

    data = path.read_bytes()
    record = 4 + DESCRIPTOR_DIM * element.itemsize
    rows = []
    offset = 0
    while offset < len(data):
        _need(data, offset, 4, "vector dimension")
        dim = int(np.frombuffer(data, dtype="<i4", count=1, offset=offset)[0])
        if dim != DESCRIPTOR_DIM:
            raise DimensionError(f"{path} has a {dim}-D vector at byte offset {offset}")
        _need(data, offset, record, "vector payload")
        rows.append(np.frombuffer(data, dtype=element, count=dim, offset=offset + 4))
        offset += record

    values = np.vstack(rows) if rows else np.zeros((0, DESCRIPTOR_DIM), dtype=element)
    return DescriptorSet(image_id or path.stem, values)
