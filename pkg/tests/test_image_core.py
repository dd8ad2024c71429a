import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from epitome_svc.errors import RangeError, ShapeError
from epitome_svc.image_core import (
    UPSAMPLE_TAPS, BlockGrid, PixelRegion, as_plane, crop_to_multiple, downsample_2x,
    extract_patch, load_image, mse, psnr, read_pgm, upsample_2x, upsample_2x_unclamped,
    write_patch, write_pgm,
)

planes = arrays(np.float64, (6, 5), elements=st.floats(0, 255, allow_nan=False))


def loop_mse(a, b):
    total = 0.0
    for i in range(a.shape[0]):
        for j in range(a.shape[1]):
            total += (float(a[i, j]) - float(b[i, j])) ** 2
    return total / a.size


class TestMse:
    def test_identity(self):
        x = np.arange(12.0).reshape(3, 4)
        assert mse(x, x) == 0.0

    def test_single_sample(self):
        assert mse([0.0], [2.0]) == 4.0

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(1)
        a, b = rng.uniform(0, 1, (2, 8, 8))
        assert mse(a, b) == pytest.approx(loop_mse(a, b), abs=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            mse(np.zeros((2, 2)), np.zeros((2, 3)))

    @given(planes, planes)
    def test_symmetry(self, a, b):
        assert mse(a, b) == mse(b, a)


class TestPsnr:
    def test_identical_is_infinite(self):
        x = np.ones((4, 4))
        assert psnr(x, x) == math.inf

    def test_mse_equal_peak_squared_is_zero_db(self):
        a = np.zeros((2, 2))
        b = np.full((2, 2), 255.0)
        assert psnr(a, b) == pytest.approx(0.0, abs=1e-12)

    def test_unit_mse(self):
        a = np.zeros((1, 4))
        b = np.array([[1.0, -1.0, 1.0, -1.0]])
        # 10 * log10(255^2)
        assert psnr(a, b, 255) == pytest.approx(48.1308036, abs=1e-6)

    @given(st.floats(0.01, 100), st.floats(0.01, 100))
    def test_monotone_in_mse(self, e1, e2):
        ref = np.zeros((1, 1))
        p1 = psnr(ref, np.array([[math.sqrt(e1)]]))
        p2 = psnr(ref, np.array([[math.sqrt(e2)]]))
        if e1 < e2:
            assert p1 > p2


class TestUpsample:
    def test_constant_preserved(self):
        out = upsample_2x(np.full((5, 7), 100.0))
        assert out.shape == (10, 14)
        assert np.all(out == 100.0)

    def test_size(self):
        assert upsample_2x(np.zeros((4, 4))).shape == (8, 8)

    def test_impulse_reproduces_taps(self):
        width, j = 16, 8
        row = np.zeros(width)
        row[j] = 64.0
        plane = np.tile(row, (4, 1))
        out = upsample_2x_unclamped(plane)
        assert np.array_equal(out[:, 0::2][0], row)
        # direct convolution oracle for the odd phase, interior outputs only
        for i in range(3, width - 4):
            expected = sum(UPSAMPLE_TAPS[t] * row[i - 3 + t] for t in range(8)) / 64.0
            assert out[0, 2 * i + 1] == pytest.approx(expected, abs=1e-12)
        taps = out[0, 2 * (j - 4) + 1: 2 * (j + 3) + 2: 2]
        assert np.array_equal(taps, UPSAMPLE_TAPS[::-1])
        assert np.array_equal(UPSAMPLE_TAPS, [-1, 4, -11, 40, 40, -11, 4, -1])

    def test_clamped_to_peak(self):
        x = np.zeros((8, 8))
        x[:, 4:] = 255.0
        out = upsample_2x(x)
        assert out.min() >= 0 and out.max() <= 255
        assert upsample_2x_unclamped(x).min() < 0

    @given(planes, planes, st.floats(-3, 3), st.floats(-3, 3))
    @settings(max_examples=30)
    def test_linearity(self, a, b, alpha, beta):
        lhs = upsample_2x_unclamped(alpha * a + beta * b)
        rhs = alpha * upsample_2x_unclamped(a) + beta * upsample_2x_unclamped(b)
        assert np.allclose(lhs, rhs, atol=1e-9)


class TestDownsample:
    def test_constant(self):
        out = downsample_2x(np.full((8, 8), 37.0))
        assert out.shape == (4, 4)
        assert np.allclose(out, 37.0, atol=1e-12)

    def test_odd_dimensions(self):
        with pytest.raises(ShapeError):
            downsample_2x(np.zeros((7, 8)))

    def test_ramp_round_trip(self):
        yy, xx = np.mgrid[:64, :64]
        ramp = 40.0 + 1.5 * xx + 0.75 * yy
        back = upsample_2x(downsample_2x(ramp))
        err = np.abs(back - ramp)[8:-8, 8:-8]
        assert err.max() < 2.0


class TestPatches:
    def test_single_pixel(self):
        p = np.arange(20.0).reshape(4, 5)
        assert extract_patch(p, (0, 0), 1).tolist() == [0.0]

    def test_full_plane(self):
        p = np.arange(16.0).reshape(4, 4)
        assert np.array_equal(extract_patch(p, (0, 0), 4), p.reshape(-1))

    def test_round_trip(self):
        rng = np.random.default_rng(3)
        p = rng.uniform(0, 255, (10, 10))
        vec = rng.uniform(0, 255, 9)
        write_patch(p, (4, 6), vec, 3)
        assert np.array_equal(extract_patch(p, (4, 6), 3), vec)

    def test_out_of_bounds(self):
        with pytest.raises(RangeError):
            extract_patch(np.zeros((4, 4)), (2, 2), 3)


class TestGridAndIO:
    def test_block_grid_raster_order(self):
        g = BlockGrid((16, 24), 8)
        assert len(g) == 6
        assert g.blocks[0] == PixelRegion(0, 0, 8, 8)
        assert g.blocks[3] == PixelRegion(8, 0, 8, 8)
        p = np.arange(16 * 24.0).reshape(16, 24)
        assert np.array_equal(g.block_vectors(p)[4], p[8:16, 8:16].reshape(-1))

    def test_grid_rejects_untiled(self):
        with pytest.raises(ShapeError):
            BlockGrid((10, 16), 8)

    def test_as_plane_length_contract(self):
        assert as_plane(range(6), 2, 3).shape == (2, 3)
        with pytest.raises(ShapeError):
            as_plane(range(5), 2, 3)

    def test_crop(self):
        assert crop_to_multiple(np.zeros((1080, 100)), 16).shape == (1072, 96)

    def test_pgm_round_trip(self, tmp_path):
        p = np.random.default_rng(0).integers(0, 256, (9, 13)).astype(float)
        write_pgm(tmp_path / "a.pgm", p)
        assert np.array_equal(read_pgm(tmp_path / "a.pgm"), p)
        assert np.array_equal(load_image(tmp_path / "a.pgm", 4), p[:8, :12])

    def test_pgm_with_comment(self, tmp_path):
        f = tmp_path / "c.pgm"
        f.write_bytes(b"P5\n# made by hand\n2 1\n255\n" + bytes([7, 9]))
        assert read_pgm(f).tolist() == [[7.0, 9.0]]

    def test_color_png_to_luma(self, tmp_path):
        from PIL import Image
        rgb = np.zeros((2, 2, 3), dtype=np.uint8)
        rgb[..., 0] = 100
        rgb[..., 1] = 200
        Image.fromarray(rgb).save(tmp_path / "c.png")
        luma = load_image(tmp_path / "c.png")
        assert np.allclose(luma, 0.299 * 100 + 0.587 * 200)
