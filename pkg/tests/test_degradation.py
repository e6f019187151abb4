"""Degradation pipeline: kernels, stages, sampling, and the pair manifest.

Oracle values were computed independently (direct evaluation of the Gaussian
on the 3x3 grid and normalization by the tap sum 4.897640403536303) and are
frozen here.
"""

import math
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gpen.config import DegradationConfig
from gpen.degradation import (
    DegradationParams,
    add_gaussian_noise,
    convolve2d,
    degrade,
    derive_item_seed,
    downsample,
    fresh_pair,
    gaussian_kernel,
    gaussian_kernel_size,
    item_rng,
    jpeg_roundtrip,
    make_pairs,
    motion_kernel,
    read_manifest,
    sample_params,
    write_manifest,
)
from gpen.image_io import load_image, save_image, to_uint8

from helpers import make_test_images

# frozen oracle: exp(0)=1, exp(-1/2), exp(-1) normalized by their 3x3 sum
G3_CENTER = 0.2041799555716581
G3_EDGE = 0.12384140315297397
G3_CORNER = 0.07511360795411151


def rand_image(shape=(3, 16, 16), seed=0):
    return np.random.default_rng(seed).random(shape).astype(np.float32)


class TestGaussianKernel:
    def test_unit_sigma_3x3_oracle(self):
        k = gaussian_kernel(1.0, 3)
        assert k.shape == (3, 3)
        np.testing.assert_allclose(k[1, 1], G3_CENTER, rtol=1e-12)
        np.testing.assert_allclose(k[0, 1], G3_EDGE, rtol=1e-12)
        np.testing.assert_allclose(k[0, 0], G3_CORNER, rtol=1e-12)

    def test_size_one_is_delta(self):
        np.testing.assert_array_equal(gaussian_kernel(2.5, 1), [[1.0]])

    @given(sigma=st.floats(0.05, 12.0), half=st.integers(0, 8))
    @settings(max_examples=60, deadline=None)
    def test_normalized_and_symmetric(self, sigma, half):
        k = gaussian_kernel(sigma, 2 * half + 1)
        assert abs(k.sum() - 1.0) < 1e-9
        assert (k >= 0).all()
        np.testing.assert_allclose(k, k.T, atol=1e-15)
        np.testing.assert_allclose(k, k[::-1, :], atol=1e-15)

    def test_size_rule(self):
        assert gaussian_kernel_size(0.5) == 5
        assert gaussian_kernel_size(1.0) == 7
        assert gaussian_kernel_size(8.0) == 49

    def test_invalid_arguments(self):
        with pytest.raises(ValueError):
            gaussian_kernel(1.0, 4)
        with pytest.raises(ValueError):
            gaussian_kernel(0.0, 3)
        with pytest.raises(ValueError):
            gaussian_kernel(-1.0, 3)


class TestMotionKernel:
    def test_length_one_is_delta(self):
        for angle in (0.0, 0.3, math.pi / 2):
            k = motion_kernel(1, angle, 3)
            expected = np.zeros((3, 3))
            expected[1, 1] = 1.0
            np.testing.assert_allclose(k, expected, atol=1e-15)

    def test_axis_aligned_rows(self):
        k = motion_kernel(3, 0.0, 3)
        np.testing.assert_allclose(k[1], [1 / 3, 1 / 3, 1 / 3], atol=1e-12)
        np.testing.assert_allclose(k[0], 0.0, atol=1e-12)
        k = motion_kernel(3, math.pi / 2, 3)
        np.testing.assert_allclose(k[:, 1], [1 / 3, 1 / 3, 1 / 3], atol=1e-12)
        np.testing.assert_allclose(k[:, 0], 0.0, atol=1e-12)

    @given(half=st.integers(0, 10), angle=st.floats(0.0, math.pi, exclude_max=True))
    @settings(max_examples=60, deadline=None)
    def test_normalized(self, half, angle):
        length = 2 * half + 1
        k = motion_kernel(length, angle, length + 2)
        assert abs(k.sum() - 1.0) < 1e-9
        assert (k >= 0).all()

    def test_invalid_arguments(self):
        with pytest.raises(ValueError):
            motion_kernel(5, 0.0, 3)  # longer than the kernel
        with pytest.raises(ValueError):
            motion_kernel(3, 0.0, 4)  # even size


class TestConvolve2d:
    def test_delta_kernel_identity(self):
        image = rand_image()
        out = convolve2d(image, np.ones((1, 1)))
        np.testing.assert_array_equal(out, image)

    def test_constant_preserved(self):
        image = np.full((3, 12, 12), 0.37, dtype=np.float32)
        out = convolve2d(image, gaussian_kernel(2.0, 9))
        np.testing.assert_allclose(out, 0.37, atol=1e-6)

    def test_centered_impulse_reproduces_taps(self):
        image = np.zeros((3, 3, 3), dtype=np.float32)
        image[:, 1, 1] = 1.0
        k = gaussian_kernel(1.0, 3)
        out = convolve2d(image, k)
        for ch in range(3):
            # reflect padding only mirrors zero border pixels here
            np.testing.assert_allclose(out[ch], k, atol=1e-7)

    def test_rejects_bad_kernels(self):
        image = rand_image()
        with pytest.raises(ValueError):
            convolve2d(image, np.ones((2, 2)) / 4.0)  # even
        with pytest.raises(ValueError):
            convolve2d(image, np.ones((3, 3)))  # sums to 9
        with pytest.raises(ValueError):
            convolve2d(image[0], np.ones((1, 1)))  # not (3, H, W)


class TestDownsample:
    def test_scale_one_identity(self):
        image = rand_image()
        np.testing.assert_array_equal(downsample(image, 1.0), image)

    def test_2x2_average(self):
        image = np.zeros((3, 2, 2), dtype=np.float32)
        image[:, 0, 1] = 1.0
        image[:, 1, 0] = 1.0
        out = downsample(image, 2.0)
        assert out.shape == (3, 1, 1)
        np.testing.assert_allclose(out, 0.5, atol=1e-7)

    def test_output_side_rounding(self):
        out = downsample(rand_image((3, 64, 64)), 10.0)
        assert out.shape == (3, 6, 6)

    @given(h=st.integers(1, 60), w=st.integers(1, 60), scale=st.floats(1.0, 16.0))
    @settings(max_examples=40, deadline=None)
    def test_size_rule(self, h, w, scale):
        out = downsample(np.zeros((3, h, w), dtype=np.float32), scale)
        # round-half-up, floored at one pixel
        assert out.shape == (3, max(1, int(h / scale + 0.5)), max(1, int(w / scale + 0.5)))

    def test_constant_preserved(self):
        image = np.full((3, 40, 40), 0.62, dtype=np.float32)
        np.testing.assert_allclose(downsample(image, 3.7), 0.62, atol=1e-6)

    def test_invalid_scale(self):
        with pytest.raises(ValueError):
            downsample(rand_image(), 0.5)


class TestNoise:
    def test_sigma_zero_identity(self):
        image = rand_image()
        out = add_gaussian_noise(image, 0.0, np.random.default_rng(0))
        np.testing.assert_array_equal(out, image)

    def test_deterministic(self):
        image = rand_image()
        a = add_gaussian_noise(image, 10.0, np.random.default_rng(3))
        b = add_gaussian_noise(image, 10.0, np.random.default_rng(3))
        np.testing.assert_array_equal(a, b)

    def test_measured_std(self):
        # constant 0.5 keeps clamping out of play at sigma 25
        image = np.full((3, 256, 256), 0.5, dtype=np.float32)
        out = add_gaussian_noise(image, 25.0, np.random.default_rng(11))
        measured = float((out - image).std())
        assert abs(measured - 25.0 / 255.0) / (25.0 / 255.0) < 0.05

    def test_clamped_to_unit_range(self):
        image = rand_image()
        out = add_gaussian_noise(image, 200.0, np.random.default_rng(5))
        assert out.min() >= 0.0 and out.max() <= 1.0

    def test_negative_sigma_rejected(self):
        with pytest.raises(ValueError):
            add_gaussian_noise(rand_image(), -1.0, np.random.default_rng(0))


class TestJpeg:
    def smooth(self):
        yy, xx = np.mgrid[0:32, 0:32] / 31.0
        return np.stack([yy, xx, 0.5 * (yy + xx)]).astype(np.float32)

    def test_shape_and_range(self):
        out = jpeg_roundtrip(self.smooth(), 50)
        assert out.shape == (3, 32, 32)
        assert out.dtype == np.float32
        assert out.min() >= 0.0 and out.max() <= 1.0

    def test_high_quality_close(self):
        image = self.smooth()
        out = jpeg_roundtrip(image, 95)
        assert float(np.abs(out - image).mean()) < 0.05

    def test_low_quality_lossy(self):
        image = rand_image((3, 32, 32))
        hi = jpeg_roundtrip(image, 95)
        lo = jpeg_roundtrip(image, 5)
        assert float(np.abs(lo - image).mean()) > float(np.abs(hi - image).mean())

    def test_deterministic(self):
        image = rand_image((3, 24, 24))
        np.testing.assert_array_equal(jpeg_roundtrip(image, 30), jpeg_roundtrip(image, 30))

    def test_invalid_quality(self):
        for q in (0, 101, -3):
            with pytest.raises(ValueError):
                jpeg_roundtrip(self.smooth(), q)


class TestSampleParams:
    def config(self, resolution=64):
        return DegradationConfig(resolution=resolution)

    def test_ranges(self):
        config = self.config()
        rng = np.random.default_rng(123)
        kinds = set()
        for _ in range(2000):
            p = sample_params(config, rng)
            kinds.add(p.kernel_kind)
            assert 0.0 <= p.sigma <= 25.0
            assert 5 <= p.quality <= 50
            assert 5 <= p.degraded_side <= 8
            assert abs(p.kernel.sum() - 1.0) < 1e-6
            assert p.scale == 64 / p.degraded_side
            if p.kernel_kind == "gaussian":
                assert 0.5 <= p.sigma_blur <= 8.0
                assert p.kernel_size == gaussian_kernel_size(p.sigma_blur)
            else:
                assert p.length % 2 == 1 and 5 <= p.length <= 21
                assert 0.0 <= p.angle < math.pi
                assert p.kernel_size == p.length + 2
        assert kinds == {"gaussian", "motion"}

    def test_deterministic(self):
        config = self.config()
        a = sample_params(config, np.random.default_rng(9))
        b = sample_params(config, np.random.default_rng(9))
        assert a.kernel_kind == b.kernel_kind
        assert a.sigma == b.sigma and a.quality == b.quality and a.scale == b.scale
        np.testing.assert_array_equal(a.kernel, b.kernel)


class TestDegrade:
    def test_identity_params_bitwise(self):
        image = rand_image((3, 32, 32))
        out = degrade(image, DegradationParams.identity(), np.random.default_rng(0))
        np.testing.assert_array_equal(out, image)

    def test_output_size(self):
        image = rand_image((3, 64, 64))
        params = DegradationParams.identity()
        params.scale = 8.0
        out = degrade(image, params, np.random.default_rng(0))
        assert out.shape == (3, 8, 8)

    def test_deterministic(self):
        config = DegradationConfig(resolution=32)
        image = rand_image((3, 32, 32), seed=2)
        outs = []
        for _ in range(2):
            rng = item_rng(777, 0)
            outs.append(degrade(image, sample_params(config, rng), rng))
        np.testing.assert_array_equal(outs[0], outs[1])

    def test_draw_streams_differ(self):
        config = DegradationConfig(resolution=32)
        image = rand_image((3, 32, 32), seed=2)
        outs = []
        for draw in (0, 1):
            rng = item_rng(777, draw)
            outs.append(degrade(image, sample_params(config, rng), rng))
        assert outs[0].shape != outs[1].shape or not np.array_equal(outs[0], outs[1])


class TestMakePairs:
    def write_dataset(self, tmp_path, n=4, resolution=32, seed=0):
        hq_dir = tmp_path / "clean"
        for i, img in enumerate(make_test_images(n, resolution, seed=seed)):
            save_image(img, hq_dir / f"img_{i}.png")
        return hq_dir

    def test_counts_and_files(self, tmp_path):
        hq_dir = self.write_dataset(tmp_path)
        config = DegradationConfig(resolution=32)
        manifest = make_pairs(hq_dir, tmp_path / "out", config, seed=5)
        records, parsed_config = read_manifest(manifest)
        assert len(records) == 4
        assert parsed_config is not None and parsed_config.resolution == 32
        for rec in records:
            assert Path(rec.hq).exists() and Path(rec.lq).exists()
            lq = load_image(rec.lq)
            assert lq.shape == (3, rec.degraded_side, rec.degraded_side)
            assert 0.0 <= rec.sigma <= 25.0
            assert 5 <= rec.quality <= 50

    def test_rerun_byte_identical(self, tmp_path):
        hq_dir = self.write_dataset(tmp_path)
        config = DegradationConfig(resolution=32)
        m1 = make_pairs(hq_dir, tmp_path / "a", config, seed=5)
        m2 = make_pairs(hq_dir, tmp_path / "b", config, seed=5)
        assert m1.read_text() == m2.read_text()
        for rec1, rec2 in zip(read_manifest(m1)[0], read_manifest(m2)[0]):
            assert Path(rec1.lq).read_bytes() == Path(rec2.lq).read_bytes()
            assert Path(rec1.hq).read_bytes() == Path(rec2.hq).read_bytes()

    def test_different_seed_differs(self, tmp_path):
        hq_dir = self.write_dataset(tmp_path)
        config = DegradationConfig(resolution=32)
        m1 = make_pairs(hq_dir, tmp_path / "a", config, seed=5)
        m2 = make_pairs(hq_dir, tmp_path / "b", config, seed=6)
        assert m1.read_text() != m2.read_text()

    def test_unreadable_file_skipped(self, tmp_path):
        hq_dir = self.write_dataset(tmp_path, n=3)
        (hq_dir / "broken.png").write_bytes(b"this is not an image")
        config = DegradationConfig(resolution=32)
        records, _ = read_manifest(make_pairs(hq_dir, tmp_path / "out", config, seed=1))
        assert len(records) == 3

    def test_empty_directory_rejected(self, tmp_path):
        empty = tmp_path / "empty"
        empty.mkdir()
        with pytest.raises(ValueError):
            make_pairs(empty, tmp_path / "out", DegradationConfig(resolution=32), seed=0)

    def test_manifest_roundtrip(self, tmp_path):
        hq_dir = self.write_dataset(tmp_path)
        config = DegradationConfig(resolution=32)
        manifest = make_pairs(hq_dir, tmp_path / "out", config, seed=5)
        records, parsed = read_manifest(manifest)
        again = tmp_path / "copy.txt"
        # writing the same records back and reparsing is lossless
        write_manifest(again, records, parsed)
        back, _ = read_manifest(again)
        for rec1, rec2 in zip(records, back):
            assert rec1.sigma == rec2.sigma
            assert rec1.angle == rec2.angle
            assert rec1.scale == rec2.scale
            assert rec1.seed == rec2.seed
            np.testing.assert_array_equal(rec1.params().kernel, rec2.params().kernel)

    def test_fresh_pair_draw_zero_matches_saved_lq(self, tmp_path):
        hq_dir = self.write_dataset(tmp_path)
        config = DegradationConfig(resolution=32)
        manifest = make_pairs(hq_dir, tmp_path / "out", config, seed=5)
        records, parsed = read_manifest(manifest)
        for rec in records:
            hq = load_image(rec.hq)
            fresh = fresh_pair(rec, hq, parsed, draw=0)
            saved = load_image(rec.lq)
            np.testing.assert_array_equal(to_uint8(fresh), to_uint8(saved))

    def test_item_seeds_stable(self):
        assert derive_item_seed(5, 0) == derive_item_seed(5, 0)
        assert derive_item_seed(5, 0) != derive_item_seed(5, 1)
        assert derive_item_seed(5, 0) != derive_item_seed(6, 0)
