"""Tests for descriptor types and patch descriptors."""

import math

import numpy as np
import pytest

from bisift.descriptor import (
    CLAMP,
    DESCRIPTOR_DIM,
    PATCH_SIZE,
    DescriptorSet,
    DescriptorType,
    compute_patch_descriptor,
    compute_patch_descriptors,
    gaussian_window,
    normalize_sift,
    to_int_descriptor,
    to_int_set,
)
from bisift.errors import DimensionError, InvalidInputError
from tests.helpers import normalized_floats


def rotation_fixture():
    """Patch u^2 * v^4 around the centre: no gradient on the centre row and
    column, and no gradient direction on a 45 degree bin boundary."""
    offsets = np.arange(PATCH_SIZE, dtype=np.float64) - PATCH_SIZE // 2
    v, u = np.meshgrid(offsets, offsets, indexing="ij")
    return u ** 2 * v ** 4


def per_pixel_descriptor(patch):
    """Accumulate the 4x4x8 histogram one pixel at a time, then normalize."""
    size = len(patch)
    sigma = 1.5 * (size / 2.0)
    centre = (size - 1) / 2.0
    raw = [0.0] * DESCRIPTOR_DIM

    def at(r, c):
        return float(patch[min(max(r, 0), size - 1)][min(max(c, 0), size - 1)])

    for r in range(size):
        for c in range(size):
            gx = (at(r, c + 1) - at(r, c - 1)) / 2.0
            gy = (at(r + 1, c) - at(r - 1, c)) / 2.0
            theta = math.atan2(gy, gx) % (2.0 * math.pi)
            orientation = int(math.floor(theta / (2.0 * math.pi / 8))) % 8
            cell = int(math.floor((r + 0.5) * 4 / size)) * 4 + int(math.floor((c + 0.5) * 4 / size))
            weight = math.exp(-((r - centre) ** 2 + (c - centre) ** 2) / (2.0 * sigma * sigma))
            raw[cell * 8 + orientation] += math.hypot(gx, gy) * weight

    norm = math.sqrt(sum(v * v for v in raw))
    if norm == 0.0:
        return raw
    clamped = [min(v / norm, CLAMP) for v in raw]
    norm = math.sqrt(sum(v * v for v in clamped))
    return [v / norm for v in clamped]


def step_edge(rising=True):
    """Dark left half, bright right half, split between columns 19 and 20."""
    patch = np.zeros((PATCH_SIZE, PATCH_SIZE))
    patch[:, 20:] = 100.0
    return patch if rising else 100.0 - patch


class TestDescriptorSet:
    """Test cases for DescriptorSet validation."""

    def test_float_set_is_frozen_float32(self):
        """Test that float sets are stored as read-only float32."""
        ds = DescriptorSet("img", np.ones((3, DESCRIPTOR_DIM), dtype=np.float64))

        assert ds.dtype == DescriptorType.FLOAT32
        assert ds.values.dtype == np.float32
        assert ds.count == len(ds) == 3
        with pytest.raises(ValueError):
            ds.values[0, 0] = 5

    def test_uint8_set_keeps_integer_type(self):
        """Test that 8-bit sets stay 8-bit."""
        ds = DescriptorSet("img", np.zeros((2, DESCRIPTOR_DIM), dtype=np.uint8))

        assert ds.dtype == DescriptorType.UINT8

    def test_source_array_is_copied(self):
        """Test that mutating the source does not change the set."""
        source = np.zeros((1, DESCRIPTOR_DIM), dtype=np.uint8)
        ds = DescriptorSet("img", source)
        source[0, 0] = 9

        assert ds.values[0, 0] == 0

    def test_wrong_width_rejected(self):
        """Test that 64-D descriptors are refused."""
        with pytest.raises(DimensionError):
            DescriptorSet("img", np.zeros((2, 64), dtype=np.float32))

    def test_negative_components_rejected(self):
        """Test that negative float components are refused."""
        values = np.zeros((1, DESCRIPTOR_DIM), dtype=np.float32)
        values[0, 5] = -0.1
        with pytest.raises(InvalidInputError):
            DescriptorSet("img", values)

    def test_non_finite_components_rejected(self):
        """Test that NaN components are refused."""
        values = np.zeros((1, DESCRIPTOR_DIM), dtype=np.float32)
        values[0, 0] = np.nan
        with pytest.raises(InvalidInputError):
            DescriptorSet("img", values)

    def test_empty_set(self):
        """Test that an image without keypoints is a valid (0, 128) set."""
        ds = DescriptorSet("empty", np.zeros((0,), dtype=np.float32))

        assert ds.values.shape == (0, DESCRIPTOR_DIM)
        assert ds.count == 0

    def test_dtype_codes(self):
        """Test that dtype codes match the file format."""
        assert [t.code for t in DescriptorType] == [0, 1, 2]
        assert DescriptorType.from_code(2) is DescriptorType.BINARY128
        with pytest.raises(ValueError):
            DescriptorType.from_code(3)


class TestNormalization:
    """Test cases for the normalize-clamp-renormalize step."""

    def test_zero_vector_stays_zero(self):
        """Test that a zero histogram is returned unchanged."""
        assert np.array_equal(normalize_sift(np.zeros(DESCRIPTOR_DIM)), np.zeros(DESCRIPTOR_DIM))

    def test_clamped_intermediate_bounded(self):
        """Test that no clamped component exceeds the clamp value."""
        raw = np.random.default_rng(1).random(DESCRIPTOR_DIM) ** 4
        clamped = normalize_sift(raw, renormalize=False)

        assert clamped.max() <= CLAMP + 1e-12

    def test_unit_norm(self):
        """Test that the final descriptor has unit length."""
        raw = np.random.default_rng(2).random(DESCRIPTOR_DIM)

        assert np.linalg.norm(normalize_sift(raw)) == pytest.approx(1.0)

    def test_single_spike_clamped_then_renormalized(self):
        """Test that one dominant component ends at 1 after clamping and renormalizing."""
        raw = np.zeros(DESCRIPTOR_DIM)
        raw[3] = 10.0

        result = normalize_sift(raw)

        assert result[3] == pytest.approx(1.0)
        assert np.count_nonzero(result) == 1


class TestPatchDescriptor:
    """Test cases for compute_patch_descriptor."""

    def test_wrong_patch_size(self):
        """Test that a non-41x41 patch is refused."""
        with pytest.raises(DimensionError):
            compute_patch_descriptor(np.zeros((32, 32)))

    def test_constant_patch_gives_zero_descriptor(self):
        """Test that a flat patch has no gradient and a zero descriptor."""
        descriptor = compute_patch_descriptor(np.full((PATCH_SIZE, PATCH_SIZE), 128.0))

        assert descriptor.shape == (DESCRIPTOR_DIM,)
        assert descriptor.dtype == np.float32
        assert not descriptor.any()

    def test_textured_patch_is_unit_nonnegative(self):
        """Test that a random patch yields a unit-norm non-negative descriptor."""
        patch = np.random.default_rng(3).random((PATCH_SIZE, PATCH_SIZE)) * 255
        descriptor = compute_patch_descriptor(patch)

        assert descriptor.min() >= 0
        assert np.linalg.norm(descriptor) == pytest.approx(1.0, abs=1e-6)

    def test_affine_brightness_invariance(self):
        """Test that gain and offset changes do not change the descriptor."""
        patch = np.random.default_rng(4).random((PATCH_SIZE, PATCH_SIZE)) * 100

        base = compute_patch_descriptor(patch)
        brighter = compute_patch_descriptor(patch * 2.0 + 10.0)

        np.testing.assert_allclose(base, brighter, atol=1e-6)

    def test_horizontal_ramp_votes_in_bin_zero(self):
        """Test that a left-to-right ramp puts all weight in orientation bin 0."""
        ramp = np.tile(np.arange(PATCH_SIZE, dtype=np.float64), (PATCH_SIZE, 1))
        cells = compute_patch_descriptor(ramp).reshape(16, 8)

        assert cells[:, 1:].sum() == 0
        assert (cells[:, 0] > 0).all()

    def test_rotation_permutes_cells_and_bins(self):
        """Test that a 90 degree rotation permutes cells and shifts bins by two."""
        patch = rotation_fixture()
        before = compute_patch_descriptor(patch).reshape(4, 4, 8)
        after = compute_patch_descriptor(np.rot90(patch)).reshape(4, 4, 8)

        for r in range(4):
            for c in range(4):
                np.testing.assert_allclose(after[r, c], np.roll(before[c, 3 - r], -2), atol=1e-6)

    @pytest.mark.parametrize("seed", range(4))
    def test_equals_per_pixel_accumulation(self, seed):
        """Test the vectorized descriptor against a pixel-by-pixel loop within 1e-6."""
        rng = np.random.default_rng(seed)
        patch = rng.random((PATCH_SIZE, PATCH_SIZE)) * 255.0

        expected = per_pixel_descriptor(patch.tolist())

        np.testing.assert_allclose(compute_patch_descriptor(patch), expected, atol=1e-6, rtol=0)

    @pytest.mark.parametrize("rising, orientation", [(True, 0), (False, 4)])
    def test_vertical_step_edge(self, rising, orientation):
        """Test that a vertical step edge votes only into the horizontal bin of the straddling cells."""
        patch = step_edge(rising)
        cells = compute_patch_descriptor(patch).reshape(4, 4, 8)

        energy = np.zeros((4, 4, 8), dtype=bool)
        energy[:, 1:3, orientation] = True
        assert (cells[energy] > 0).all()
        assert cells[~energy].sum() == 0
        np.testing.assert_allclose(cells.ravel(), per_pixel_descriptor(patch.tolist()), atol=1e-6, rtol=0)

    def test_window_is_centred(self):
        """Test that the Gaussian weight peaks at the patch centre."""
        window = gaussian_window()

        assert np.unravel_index(np.argmax(window), window.shape) == (20, 20)
        assert window[0, 0] == pytest.approx(window[40, 40])

    def test_batch_matches_single_and_workers(self):
        """Test that batch description equals per-patch description, threaded or not."""
        rng = np.random.default_rng(5)
        patches = [rng.random((PATCH_SIZE, PATCH_SIZE)) for _ in range(6)]

        serial = compute_patch_descriptors(patches, "img")
        threaded = compute_patch_descriptors(patches, "img", workers=3)

        assert serial.count == 6
        assert np.array_equal(serial.values, threaded.values)
        assert np.array_equal(serial.values[2], compute_patch_descriptor(patches[2]))


class TestIntegerDescriptor:
    """Test cases for the 8-bit conversion."""

    def test_scaling_and_saturation(self):
        """Test that components map to min(round(512 f), 255)."""
        values = np.array([0.0, 0.1, 0.2, 0.4, 0.5, 1.0])

        assert to_int_descriptor(values).tolist() == [0, 51, 102, 205, 255, 255]

    def test_halves_round_up(self):
        """Test that a component exactly halfway between two steps rounds up."""
        values = np.array([0.5, 1.5, 2.5, 254.5, 255.5]) / 512

        assert to_int_descriptor(values).tolist() == [1, 2, 3, 255, 255]

    def test_error_bound_on_random_descriptors(self):
        """Test that de-integerized components stay within half a step, or saturate at 255."""
        uniform = np.random.default_rng(9).random((1000, DESCRIPTOR_DIM)) * 0.6
        values = np.vstack([normalized_floats(1000, seed=9).astype(np.float64), uniform])

        ints = to_int_descriptor(values)

        saturated = values * 512 >= 255.5
        assert (ints[saturated] == 255).all()
        error = np.abs(ints[~saturated] / 512.0 - values[~saturated])
        assert error.max() <= 1 / (2 * 512) + 1e-12

    def test_int_set_preserves_structure(self):
        """Test that integerizing a set keeps id and count."""
        ds = DescriptorSet("img", np.full((4, DESCRIPTOR_DIM), 0.1, dtype=np.float32))
        converted = to_int_set(ds)

        assert converted.image_id == "img"
        assert converted.dtype == DescriptorType.UINT8
        assert (converted.values == 51).all()
        assert to_int_set(converted) is converted
