"""Image container, file formats, synthetic generators, and point transforms."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from PIL import Image

from shapetex.errors import (
    EmptyImageError,
    ImageReadError,
    ParameterError,
    UnsupportedImageError,
)
from shapetex.imaging import (
    GrayImage,
    apply_contrast,
    generate_synthetic,
    load_image,
    rescale,
    rotate90,
    save_pgm,
)


class TestGrayImage:
    def test_basic_properties(self):
        img = GrayImage(np.array([[0, 3], [2, 1]]), levels=4)
        assert img.height == 2 and img.width == 2 and img.size == 4
        assert img.values.dtype == np.int32

    def test_values_are_immutable(self):
        img = GrayImage(np.zeros((3, 3), dtype=int), levels=2)
        with pytest.raises(ValueError):
            img.values[0, 0] = 1

    def test_rejects_wrong_dimensionality(self):
        with pytest.raises(ParameterError):
            GrayImage(np.zeros((2, 2, 3), dtype=int))

    def test_rejects_empty(self):
        with pytest.raises(EmptyImageError):
            GrayImage(np.zeros((0, 4), dtype=int))

    def test_rejects_out_of_range_values(self):
        with pytest.raises(ParameterError):
            GrayImage(np.array([[0, 5]]), levels=4)
        with pytest.raises(ParameterError):
            GrayImage(np.array([[-1, 2]]), levels=4)

    def test_rejects_bad_levels(self):
        with pytest.raises(ParameterError):
            GrayImage(np.zeros((2, 2), dtype=int), levels=1)
        with pytest.raises(ParameterError):
            GrayImage(np.zeros((2, 2), dtype=int), levels=100_000)


class TestPgm:
    def test_binary_roundtrip_8bit(self, tmp_path):
        vals = np.arange(12).reshape(3, 4) * 20
        img = GrayImage(vals, levels=256)
        path = tmp_path / "a.pgm"
        save_pgm(img, path)
        back = load_image(path)
        assert np.array_equal(back.values, vals)
        assert back.levels == 256

    def test_binary_roundtrip_16bit(self, tmp_path):
        vals = np.array([[0, 300], [70_000 // 2, 65_535]])
        img = GrayImage(vals, levels=65_536)
        path = tmp_path / "wide.pgm"
        save_pgm(img, path)
        back = load_image(path)
        assert np.array_equal(back.values, vals)
        assert back.levels == 65_536

    def test_ascii_roundtrip(self, tmp_path):
        vals = np.array([[5, 0, 9], [1, 2, 3]])
        path = tmp_path / "a.pgm"
        save_pgm(GrayImage(vals, levels=10), path, ascii_format=True)
        assert path.read_bytes().startswith(b"P2")
        back = load_image(path)
        assert np.array_equal(back.values, vals)
        assert back.levels == 10

    def test_ascii_with_comments(self, tmp_path):
        path = tmp_path / "c.pgm"
        path.write_bytes(b"P2\n# a comment\n2 2\n# another\n7\n0 1\n2 3\n")
        img = load_image(path)
        assert np.array_equal(img.values, [[0, 1], [2, 3]])
        assert img.levels == 8

    def test_truncated_binary_rejected(self, tmp_path):
        path = tmp_path / "t.pgm"
        path.write_bytes(b"P5\n4 4\n255\n" + b"\x00" * 7)
        with pytest.raises(ImageReadError, match="t.pgm"):
            load_image(path)

    def test_value_above_maxval_rejected(self, tmp_path):
        path = tmp_path / "v.pgm"
        path.write_bytes(b"P2\n2 1\n5\n3 6\n")
        with pytest.raises(ImageReadError):
            load_image(path)

    def test_unknown_magic_rejected(self, tmp_path):
        path = tmp_path / "x.pgm"
        path.write_bytes(b"P7\n1 1\n255\n\x00")
        with pytest.raises(UnsupportedImageError):
            load_image(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ImageReadError, match="nope.pgm"):
            load_image(tmp_path / "nope.pgm")


class TestPng:
    def test_grayscale(self, tmp_path):
        vals = np.array([[0, 128], [255, 7]], dtype=np.uint8)
        path = tmp_path / "g.png"
        Image.fromarray(vals, mode="L").save(path)
        img = load_image(path)
        assert np.array_equal(img.values, vals)
        assert img.levels == 256

    def test_rgb_converts_by_luma(self, tmp_path):
        # floor(0.299*200 + 0.587*100 + 0.114*50 + 0.5) = floor(124.7) = 124
        arr = np.zeros((1, 1, 3), dtype=np.uint8)
        arr[0, 0] = (200, 100, 50)
        path = tmp_path / "rgb.png"
        Image.fromarray(arr, mode="RGB").save(path)
        img = load_image(path)
        assert img.values[0, 0] == 124

    def test_16bit(self, tmp_path):
        vals = np.array([[0, 40_000]], dtype=np.uint16)
        path = tmp_path / "w.png"
        Image.fromarray(vals).save(path)
        img = load_image(path)
        assert img.values[0, 1] == 40_000
        assert img.levels == 65_536

    def test_bilevel_mode_rejected(self, tmp_path):
        path = tmp_path / "b.png"
        Image.new("1", (4, 4)).save(path)
        with pytest.raises(UnsupportedImageError):
            load_image(path)

    def test_corrupt_file(self, tmp_path):
        path = tmp_path / "c.png"
        path.write_bytes(b"\x89PNG\r\n\x1a\n" + b"garbage")
        with pytest.raises(ImageReadError):
            load_image(path)


class TestSynthetic:
    def test_deterministic_for_seed(self):
        a = generate_synthetic("blobs", {"width": 32, "height": 32,
                                         "n_blobs": 5, "radius": 4}, seed=3)
        b = generate_synthetic("blobs", {"width": 32, "height": 32,
                                         "n_blobs": 5, "radius": 4}, seed=3)
        c = generate_synthetic("blobs", {"width": 32, "height": 32,
                                         "n_blobs": 5, "radius": 4}, seed=4)
        assert np.array_equal(a.values, b.values)
        assert not np.array_equal(a.values, c.values)

    def test_stripes_band_structure(self):
        img = generate_synthetic("stripes", {"width": 16, "height": 16,
                                             "period": 4})
        v = img.values
        assert (v[0] == v[0, 0]).all() and (v[2] == v[2, 0]).all()
        assert v[0, 0] != v[2, 0]
        assert np.array_equal(v[0], v[4])

    def test_stripes_vertical(self):
        img = generate_synthetic("stripes", {"width": 16, "height": 16,
                                             "period": 4,
                                             "orientation": "vertical"})
        assert (img.values[:, 0] == img.values[0, 0]).all()
        assert img.values[0, 0] != img.values[0, 2]

    def test_checkerboard_parity(self):
        img = generate_synthetic("checkerboard", {"width": 16, "height": 16,
                                                  "cell": 4})
        v = img.values
        assert v[0, 0] == v[4, 4]
        assert v[0, 0] != v[0, 4] and v[0, 0] != v[4, 0]

    def test_nested_squares_explicit_sides(self):
        img = generate_synthetic("nested-squares", {"size": 9,
                                                    "sides": [9, 7, 5]})
        v = img.values
        assert v[0, 0] == 50 and v[1, 1] == 200 and v[4, 4] == 50

    def test_nested_squares_default(self):
        img = generate_synthetic("nested-squares", {"size": 9})
        assert img.height == img.width == 9
        assert len(np.unique(img.values)) == 2

    def test_noise_is_seeded(self):
        p = {"width": 16, "height": 16, "period": 4, "noise": 10}
        a = generate_synthetic("stripes", p, seed=1)
        b = generate_synthetic("stripes", p, seed=1)
        assert np.array_equal(a.values, b.values)
        assert (a.values >= 0).all()

    def test_unknown_kind(self):
        with pytest.raises(ParameterError):
            generate_synthetic("plaid", {"width": 16, "height": 16})

    def test_unknown_parameter(self):
        with pytest.raises(ParameterError):
            generate_synthetic("stripes", {"width": 16, "height": 16,
                                           "period": 4, "wavelength": 2})

    def test_missing_parameter(self):
        with pytest.raises(ParameterError):
            generate_synthetic("stripes", {"width": 16, "height": 16})

    def test_constant_texture_rejected(self):
        with pytest.raises(ParameterError, match="low == high"):
            generate_synthetic("stripes", {"width": 16, "height": 16,
                                           "period": 4, "low": 9, "high": 9})

    def test_small_dims_rejected(self):
        with pytest.raises(ParameterError):
            generate_synthetic("stripes", {"width": 8, "height": 16,
                                           "period": 4})

    def test_bad_period(self):
        with pytest.raises(ParameterError):
            generate_synthetic("stripes", {"width": 16, "height": 16,
                                           "period": 1})


class TestRescale:
    def test_identity(self):
        img = generate_synthetic("stripes", {"width": 16, "height": 16,
                                             "period": 4})
        out = rescale(img, 1.0)
        assert np.array_equal(out.values, img.values)

    def test_output_dimensions(self):
        img = generate_synthetic("checkerboard", {"width": 20, "height": 32,
                                                  "cell": 4})
        out = rescale(img, 0.5)
        assert (out.height, out.width) == (16, 10)
        up = rescale(img, 1.5)
        assert (up.height, up.width) == (48, 30)

    def test_values_stay_in_range(self):
        img = generate_synthetic("blobs", {"width": 24, "height": 24,
                                           "n_blobs": 4, "radius": 5},
                                 seed=9)
        out = rescale(img, 2 ** -0.5)
        assert out.values.min() >= 0
        assert out.values.max() < img.levels
        assert out.levels == img.levels

    def test_factor_bounds(self):
        img = generate_synthetic("stripes", {"width": 16, "height": 16,
                                             "period": 4})
        with pytest.raises(ParameterError):
            rescale(img, 0.05)
        with pytest.raises(ParameterError):
            rescale(img, 5.0)

    def test_too_small_output_rejected(self):
        img = generate_synthetic("stripes", {"width": 16, "height": 16,
                                             "period": 4})
        with pytest.raises(ParameterError):
            rescale(img, 0.25)


class TestContrastAndRotation:
    def test_identity_lut(self):
        img = GrayImage(np.array([[0, 1], [2, 3]]), levels=4)
        out = apply_contrast(img, np.arange(4))
        assert np.array_equal(out.values, img.values)

    def test_affine_lut(self):
        img = GrayImage(np.array([[0, 1], [2, 3]]), levels=4)
        out = apply_contrast(img, 2 * np.arange(4) + 5)
        assert np.array_equal(out.values, [[5, 7], [9, 11]])
        assert out.levels == 12

    def test_non_increasing_lut_rejected(self):
        img = GrayImage(np.array([[0, 1]]), levels=2)
        with pytest.raises(ParameterError):
            apply_contrast(img, np.array([3, 3]))

    def test_wrong_length_lut_rejected(self):
        img = GrayImage(np.array([[0, 1]]), levels=2)
        with pytest.raises(ParameterError):
            apply_contrast(img, np.arange(5))

    def test_rotate90(self):
        img = GrayImage(np.array([[1, 2], [3, 4]]), levels=5)
        once = rotate90(img)
        assert np.array_equal(once.values, [[2, 4], [1, 3]])
        four = rotate90(rotate90(rotate90(once)))
        assert np.array_equal(four.values, img.values)

    def test_rotate_rectangular(self):
        img = GrayImage(np.arange(6).reshape(2, 3), levels=6)
        out = rotate90(img)
        assert (out.height, out.width) == (3, 2)


@settings(max_examples=25, deadline=None)
@given(
    h=st.integers(1, 8),
    w=st.integers(1, 8),
    maxval=st.sampled_from([3, 255, 4000]),
    seed=st.integers(0, 10_000),
)
def test_pgm_roundtrip_property(tmp_path_factory, h, w, maxval, seed):
    rng = np.random.default_rng(seed)
    vals = rng.integers(0, maxval + 1, size=(h, w))
    img = GrayImage(vals, levels=maxval + 1)
    path = tmp_path_factory.mktemp("pgm") / "r.pgm"
    save_pgm(img, path)
    back = load_image(path)
    assert np.array_equal(back.values, vals)
    assert back.levels == maxval + 1
