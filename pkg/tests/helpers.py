"""Data helpers shared by the test modules."""

import numpy as np

from bisift.descriptor import DESCRIPTOR_DIM, normalize_sift


def random_uint8(shape, seed=0):
    """Uniform 8-bit descriptors; their float images are exact."""
    return np.random.default_rng(seed).integers(0, 256, size=shape, dtype=np.uint8)


def normalized_floats(n, seed=0):
    """Clamped unit-norm descriptors with fractional float32 components."""
    raw = np.random.default_rng(seed).random((n, DESCRIPTOR_DIM))
    return np.array([normalize_sift(row) for row in raw], dtype=np.float32).reshape(n, DESCRIPTOR_DIM)
