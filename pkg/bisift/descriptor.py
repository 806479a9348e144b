"""Descriptor types and SIFT-like descriptors computed from normalized patches.

Keypoint detection happens elsewhere: descriptors enter either through
:func:`compute_patch_descriptor` on 41x41 normalized grayscale patches, or through
:func:`bisift.storage.load_descriptors` on externally extracted 128-D features.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from typing import TYPE_CHECKING, Iterable, List, Optional

import numpy as np

from .errors import DimensionError, InvalidInputError

if TYPE_CHECKING:
    from .binarize import Scheme

logger = logging.getLogger(__name__)

DESCRIPTOR_DIM = 128
FINGERPRINT_BYTES = 16
PATCH_SIZE = 41
GRID = 4
ORIENTATION_BINS = 8
CLAMP = 0.2
INT_SCALE = 512


class DescriptorType(str, Enum):
    """Storage type of a descriptor collection; values match the file dtype codes."""

    FLOAT32 = "float32"
    UINT8 = "uint8"
    BINARY128 = "binary128"

    @property
    def code(self) -> int:
        return _TYPE_CODES[self]

    @classmethod
    def from_code(cls, code: int) -> "DescriptorType":
        for member, value in _TYPE_CODES.items():
            if value == code:
                return member
        raise ValueError(f"Unknown descriptor dtype code: {code}")


_TYPE_CODES = {
    DescriptorType.FLOAT32: 0,
    DescriptorType.UINT8: 1,
    DescriptorType.BINARY128: 2,
}


@dataclass(frozen=True, eq=False)
class DescriptorSet:
    """All descriptors of one image, in keypoint order.

    ``values`` is an ``(n, 128)`` float32 or uint8 matrix for raw descriptors, or an
    ``(n, 16)`` uint8 matrix of packed fingerprints when ``scheme`` is set. The
    array is copied and frozen on construction.
    """

    image_id: str
    values: np.ndarray
    scheme: Optional["Scheme"] = None

    def __post_init__(self):
        values = np.asarray(self.values)
        if values.ndim == 1 and values.size == 0:
            width = FINGERPRINT_BYTES if self.scheme is not None else DESCRIPTOR_DIM
            values = values.reshape(0, width)
        if values.ndim != 2:
            raise DimensionError(
                f"Descriptor set {self.image_id!r} must be a 2-D matrix, got shape {values.shape}"
            )

        if self.scheme is not None:
            if values.shape[1] != FINGERPRINT_BYTES:
                raise DimensionError(
                    f"Fingerprints must be {FINGERPRINT_BYTES} bytes wide, got {values.shape[1]}"
                )
            values = values.astype(np.uint8, copy=True)
        else:
            if values.shape[1] != DESCRIPTOR_DIM:
                raise DimensionError(
                    f"Descriptors must have {DESCRIPTOR_DIM} components, got {values.shape[1]}"
                )
            if values.dtype == np.uint8:
                values = values.copy()
            else:
                values = values.astype(np.float32, copy=True)
                if not np.all(np.isfinite(values)) or np.any(values < 0):
                    raise InvalidInputError(
                        f"Descriptor set {self.image_id!r} has negative or non-finite components"
                    )

        values = np.ascontiguousarray(values)
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def count(self) -> int:
        return int(self.values.shape[0])

    @property
    def dtype(self) -> DescriptorType:
        if self.scheme is not None:
            return DescriptorType.BINARY128
        if self.values.dtype == np.uint8:
            return DescriptorType.UINT8
        return DescriptorType.FLOAT32

    def __len__(self) -> int:
        return self.count


def _cell_of_pixel(size: int) -> np.ndarray:
    # Pixel centres (c + 0.5) split into GRID equal spans of the patch width.
    return np.floor((np.arange(size) + 0.5) * GRID / size).astype(np.intp)


def gaussian_window(size: int = PATCH_SIZE) -> np.ndarray:
    """Circular Gaussian weight with sigma = 1.5 x half the patch width."""
    sigma = 1.5 * (size / 2.0)
    centre = (size - 1) / 2.0
    offsets = np.arange(size) - centre
    squared = offsets[:, None] ** 2 + offsets[None, :] ** 2
    return np.exp(-squared / (2.0 * sigma * sigma))


def normalize_sift(raw: np.ndarray, clamp: float = CLAMP, renormalize: bool = True) -> np.ndarray:
    """L2-normalize, clamp every component at ``clamp`` and L2-normalize again.

    A zero vector is returned unchanged. With ``renormalize=False`` the clamped
    intermediate is returned instead of the final descriptor.
    """
    vector = np.asarray(raw, dtype=np.float64)
    norm = np.linalg.norm(vector)
    if norm == 0.0:
        return np.zeros_like(vector)
    vector = np.minimum(vector / norm, clamp)
    if not renormalize:
        return vector
    return vector / np.linalg.norm(vector)


def orientation_histograms(patch: np.ndarray) -> np.ndarray:
    """Raw 4x4x8 Gaussian- and magnitude-weighted orientation histograms, cell-major."""
    pixels = np.asarray(patch, dtype=np.float64)
    if pixels.shape != (PATCH_SIZE, PATCH_SIZE):
        raise DimensionError(
            f"Patch must be {PATCH_SIZE}x{PATCH_SIZE} pixels, got {pixels.shape}"
        )

    # Central differences, replicate border
    padded = np.pad(pixels, 1, mode="edge")
    gx = (padded[1:-1, 2:] - padded[1:-1, :-2]) / 2.0
    gy = (padded[2:, 1:-1] - padded[:-2, 1:-1]) / 2.0

    magnitude = np.hypot(gx, gy)
    theta = np.mod(np.arctan2(gy, gx), 2.0 * math.pi)
    bins = np.floor(theta / (2.0 * math.pi / ORIENTATION_BINS)).astype(np.intp) % ORIENTATION_BINS

    cells = _cell_of_pixel(PATCH_SIZE)
    cell_index = cells[:, None] * GRID + cells[None, :]
    slots = cell_index * ORIENTATION_BINS + bins
    weights = magnitude * gaussian_window(PATCH_SIZE)

    return np.bincount(slots.ravel(), weights=weights.ravel(), minlength=DESCRIPTOR_DIM)


def compute_patch_descriptor(patch: np.ndarray) -> np.ndarray:
    """Compute the 128-D SIFT-like float descriptor of a 41x41 patch.

    Each pixel votes into exactly one spatial cell and one orientation bin
    (hard assignment, no interpolation).

    Raises:
        DimensionError: If the patch is not 41x41
    """
    return normalize_sift(orientation_histograms(patch)).astype(np.float32)


def compute_patch_descriptors(
    patches: Iterable[np.ndarray], image_id: str = "", workers: int = 1
) -> DescriptorSet:
    """Describe many patches of one image, optionally on a thread pool."""
    patch_list: List[np.ndarray] = list(patches)
    if workers > 1 and len(patch_list) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(compute_patch_descriptor, patch_list))
    else:
        rows = [compute_patch_descriptor(patch) for patch in patch_list]

    logger.debug(f"Described {len(rows)} patches for image {image_id!r}")
    if not rows:
        return DescriptorSet(image_id, np.zeros((0, DESCRIPTOR_DIM), dtype=np.float32))
    return DescriptorSet(image_id, np.vstack(rows))


def to_int_descriptor(descriptor: np.ndarray) -> np.ndarray:
    """Map float components to 8-bit integers: ``min(round(512 * f), 255)``.

    Halves round up, so 0.5 / 512 maps to 1. Works on a single descriptor or on a
    matrix of descriptors.
    """
    scaled = np.floor(np.asarray(descriptor, dtype=np.float64) * INT_SCALE + 0.5)
    return np.clip(scaled, 0, 255).astype(np.uint8)


def to_int_set(descriptor_set: DescriptorSet) -> DescriptorSet:
    """Integerize a float descriptor set; uint8 sets are returned as they are."""
    if descriptor_set.dtype == DescriptorType.UINT8:
        return descriptor_set
    if descriptor_set.dtype != DescriptorType.FLOAT32:
        raise InvalidInputError(
            f"Cannot integerize {descriptor_set.dtype.value} set {descriptor_set.image_id!r}"
        )
    return DescriptorSet(descriptor_set.image_id, to_int_descriptor(descriptor_set.values))


def check_descriptor(descriptor: np.ndarray) -> np.ndarray:
    """Return ``descriptor`` as a 1-D array, raising if it is not 128-D."""
    vector = np.asarray(descriptor)
    if vector.shape != (DESCRIPTOR_DIM,):
        raise DimensionError(
            f"Descriptor must have {DESCRIPTOR_DIM} components, got shape {vector.shape}"
        )
    return vector
