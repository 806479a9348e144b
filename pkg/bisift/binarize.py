"""Binary fingerprints: whole-vector BiSIFT and the per-cell variant.

Both schemes compare adjacent descriptor components. BiSIFT compares component
``i`` with ``i + 1`` across the whole 128-D vector and yields 127 informative bits;
the padding bit 127 is always 0. PERCELL compares the 8 orientation bins of every
spatial cell circularly (bin 8 against bin 1), giving 8 bits per cell.

Fingerprints are packed into 16 bytes; bit ``i`` is bit ``i % 8`` (least significant
first) of byte ``i // 8``.
"""

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .descriptor import (
    DESCRIPTOR_DIM,
    FINGERPRINT_BYTES,
    GRID,
    ORIENTATION_BINS,
    DescriptorSet,
    DescriptorType,
    check_descriptor,
)
from .errors import DimensionError, InvalidInputError, SchemeError

PADDING_BIT = DESCRIPTOR_DIM - 1


class Scheme(str, Enum):
    """Binarization scheme tag carried by every fingerprint."""

    BISIFT = "bisift"
    PERCELL = "percell"

    @property
    def informative_bits(self) -> int:
        return DESCRIPTOR_DIM - 1 if self is Scheme.BISIFT else DESCRIPTOR_DIM


@dataclass(frozen=True, eq=False)
class BinaryFingerprint:
    """One packed 128-bit fingerprint."""

    bits: np.ndarray
    scheme: Scheme

    def __post_init__(self):
        packed = np.asarray(self.bits)
        if packed.shape != (FINGERPRINT_BYTES,):
            raise DimensionError(
                f"Fingerprint must be {FINGERPRINT_BYTES} bytes, got shape {packed.shape}"
            )
        packed = packed.astype(np.uint8, copy=True)
        if self.scheme is Scheme.BISIFT and packed[-1] & 0x80:
            raise SchemeError("BiSIFT fingerprints must keep padding bit 127 at 0")
        packed.setflags(write=False)
        object.__setattr__(self, "bits", packed)
        object.__setattr__(self, "scheme", Scheme(self.scheme))

    def unpacked(self) -> np.ndarray:
        """The 128 bits as a 0/1 uint8 vector, bit 0 first."""
        return np.unpackbits(self.bits, bitorder="little")

    def __eq__(self, other) -> bool:
        if not isinstance(other, BinaryFingerprint):
            return NotImplemented
        return self.scheme is other.scheme and bytes(self.bits) == bytes(other.bits)

    def __hash__(self) -> int:
        return hash((self.scheme, bytes(self.bits)))


def _as_matrix(values: np.ndarray) -> np.ndarray:
    matrix = np.asarray(values)
    if matrix.ndim != 2 or matrix.shape[1] != DESCRIPTOR_DIM:
        raise DimensionError(
            f"Expected an (n, {DESCRIPTOR_DIM}) descriptor matrix, got shape {matrix.shape}"
        )
    return matrix


def bisift_bits(values: np.ndarray) -> np.ndarray:
    """Unpacked BiSIFT bits: bit i = f_i >= f_{i+1}; bit 127 = 0."""
    matrix = _as_matrix(values)
    bits = np.zeros(matrix.shape, dtype=bool)
    bits[:, :PADDING_BIT] = matrix[:, :-1] >= matrix[:, 1:]
    return bits


def percell_bits(values: np.ndarray) -> np.ndarray:
    """Unpacked per-cell bits: within each cell, bin j >= bin (j mod 8) + 1."""
    matrix = _as_matrix(values)
    cells = matrix.reshape(matrix.shape[0], GRID * GRID, ORIENTATION_BINS)
    bits = cells >= np.roll(cells, -1, axis=2)
    return bits.reshape(matrix.shape[0], DESCRIPTOR_DIM)


def pack_bits(bits: np.ndarray) -> np.ndarray:
    """Pack an (n, 128) 0/1 matrix into (n, 16) little-bit-order bytes."""
    return np.packbits(np.asarray(bits, dtype=bool), axis=1, bitorder="little")


def binarize(values: np.ndarray, scheme: Scheme) -> np.ndarray:
    """Binarize a descriptor matrix into packed fingerprints."""
    scheme = Scheme(scheme)
    bits = bisift_bits(values) if scheme is Scheme.BISIFT else percell_bits(values)
    return pack_bits(bits)


def binarize_bisift(descriptor: np.ndarray) -> BinaryFingerprint:
    """BiSIFT fingerprint of one descriptor."""
    row = check_descriptor(descriptor)[None, :]
    return BinaryFingerprint(binarize(row, Scheme.BISIFT)[0], Scheme.BISIFT)


def binarize_percell(descriptor: np.ndarray) -> BinaryFingerprint:
    """Per-cell fingerprint of one descriptor (16 cells x 8 circular comparisons)."""
    row = check_descriptor(descriptor)[None, :]
    return BinaryFingerprint(binarize(row, Scheme.PERCELL)[0], Scheme.PERCELL)


def binarize_set(descriptor_set: DescriptorSet, scheme: Scheme) -> DescriptorSet:
    """Binarize every descriptor of an image, keeping keypoint order.

    Raises:
        InvalidInputError: If the set is already binary
    """
    if descriptor_set.dtype == DescriptorType.BINARY128:
        raise InvalidInputError(
            f"Descriptor set {descriptor_set.image_id!r} is already binary"
        )
    scheme = Scheme(scheme)
    return DescriptorSet(
        descriptor_set.image_id, binarize(descriptor_set.values, scheme), scheme=scheme
    )
