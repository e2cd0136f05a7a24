import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from iusim.errors import ImageTypeError, ShapeError, SizeError, StructureError, RangeError
from iusim.pfm import (
    ColorSpace,
    Image,
    PfmConfig,
    WaveletPyramid,
    decompose,
    decompose_color,
    decompose_gray,
    dwt2,
    idwt2,
    srgb_to_lab,
)


def reference_lab(rgb):
    """Straight-line sRGB -> XYZ -> Lab for one pixel, D65 white from the published chromaticities."""
    def lin(c):
        return c / 12.92 if c <= 0.04045 else ((c + 0.055) / 1.055) ** 2.4

    r, g, b = (lin(c) for c in rgb)
    x = 0.4124564 * r + 0.3575761 * g + 0.1804375 * b
    y = 0.2126729 * r + 0.7151522 * g + 0.0721750 * b
    z = 0.0193339 * r + 0.1191920 * g + 0.9503041 * b
    xn, yn, zn = 0.95047, 1.0, 1.08883

    def f(t):
        d = 6 / 29
        return t ** (1 / 3) if t > d**3 else t / (3 * d * d) + 4 / 29

    fx, fy, fz = f(x / xn), f(y / yn), f(z / zn)
    return 116 * fy - 16, 500 * (fx - fy), 200 * (fy - fz)


def uniform(rgb, size=8):
    return Image.rgb(np.broadcast_to(np.asarray(rgb, float), (size, size, 3)))


# --- color conversion -------------------------------------------------------

def test_white_and_black():
    for rgb, expected in [((1, 1, 1), (100, 0, 0)), ((0, 0, 0), (0, 0, 0))]:
        L, a, b = srgb_to_lab(uniform(rgb))
        np.testing.assert_allclose([L[0, 0], a[0, 0], b[0, 0]], expected, atol=1e-6)


def test_mid_gray_matches_reference_formula():
    L, a, b = srgb_to_lab(uniform((0.5, 0.5, 0.5)))
    ref_L, _, _ = reference_lab((0.5, 0.5, 0.5))
    # for neutral input Y equals the linearized channel value
    y = ((0.5 + 0.055) / 1.055) ** 2.4
    assert abs(ref_L - (116 * y ** (1 / 3) - 16)) < 1e-5
    assert abs(ref_L - 53.38896) < 1e-4
    assert abs(L[0, 0] - ref_L) < 0.05
    assert abs(a[0, 0]) < 1e-6 and abs(b[0, 0]) < 1e-6


@given(st.floats(0.0, 1.0))
def test_neutral_inputs_have_no_chroma(v):
    _, a, b = srgb_to_lab(uniform((v, v, v)))
    assert np.max(np.abs(a)) < 1e-6 and np.max(np.abs(b)) < 1e-6


@pytest.mark.parametrize("rgb", [(1, 0, 0), (0, 1, 0), (0, 0, 1), (0.2, 0.7, 0.4), (0.9, 0.8, 0.1)])
def test_chromatic_pixels_match_reference(rgb):
    L, a, b = srgb_to_lab(uniform(rgb))
    np.testing.assert_allclose([L[0, 0], a[0, 0], b[0, 0]], reference_lab(rgb), atol=0.05)


def test_srgb_to_lab_rejects_gray():
    with pytest.raises(ImageTypeError):
        srgb_to_lab(Image.gray(np.zeros((8, 8))))


def test_image_validation():
    with pytest.raises(RangeError):
        Image.rgb(np.full((8, 8, 3), 1.5))
    with pytest.raises(SizeError):
        Image.gray(np.zeros((7, 8)))
    with pytest.raises(ShapeError):
        Image(np.zeros((8, 8, 3)), ColorSpace.GRAY)
    im = Image.gray(np.zeros((8, 8)))
    with pytest.raises(ValueError):
        im.pixels[0, 0, 0] = 1.0


# --- wavelets ---------------------------------------------------------------

def test_constant_2x2_single_level():
    pyr = dwt2(np.full((2, 2), 3.0), levels=1)
    assert pyr.approx.shape == (1, 1)
    assert pyr.approx[0, 0] == pytest.approx(6.0)
    for band in pyr.details[0]:
        assert np.all(band == 0)
    np.testing.assert_allclose(idwt2(pyr), np.full((2, 2), 3.0), atol=1e-12)


def test_impulse_matches_direct_filter_bank():
    x = np.zeros((4, 4))
    x[0, 0] = 1.0
    pyr = dwt2(x, levels=2)
    # level 1: the impulse sits in the top-left 2x2 block, every subband gets +-1/2 there
    lh, hl, hh = pyr.details[0]
    for band in (lh, hl, hh):
        expected = np.zeros((2, 2))
        expected[0, 0] = 0.5
        np.testing.assert_allclose(band, expected, atol=1e-15)
    # level 2 input is LL1 = [[0.5, 0], [0, 0]]: another impulse scaled by 1/2
    lh2, hl2, hh2 = pyr.details[1]
    np.testing.assert_allclose([lh2[0, 0], hl2[0, 0], hh2[0, 0]], [0.25, 0.25, 0.25], atol=1e-15)
    assert pyr.approx[0, 0] == pytest.approx(0.25)


def test_impulse_at_odd_position_signs():
    x = np.zeros((4, 4))
    x[1, 1] = 1.0
    lh, hl, hh = dwt2(x, levels=1).details[0]
    # odd row and odd column: the high-pass filter [1, -1]/sqrt2 flips sign once per axis
    assert lh[0, 0] == pytest.approx(-0.5)
    assert hl[0, 0] == pytest.approx(-0.5)
    assert hh[0, 0] == pytest.approx(0.5)


@settings(max_examples=40, deadline=None)
@given(
    st.integers(8, 40),
    st.integers(8, 40),
    st.integers(0, 2**31 - 1),
)
def test_round_trip_and_parseval_any_size(h, w, seed):
    x = np.random.default_rng(seed).standard_normal((h, w))
    pyr = dwt2(x)
    assert np.max(np.abs(idwt2(pyr) - x)) < 1e-10
    if h % 8 == 0 and w % 8 == 0:
        assert abs(pyr.energy() - np.sum(x**2)) <= 1e-6 * np.sum(x**2)


def test_subband_sizes_halve_with_ceiling():
    pyr = dwt2(np.zeros((13, 21)))
    assert pyr.shapes == ((13, 21), (7, 11), (4, 6))
    assert pyr.details[0][0].shape == (7, 11)
    assert pyr.details[2][0].shape == (2, 3)
    assert pyr.approx.shape == (2, 3)


def test_zero_pyramid_gives_zero_plane():
    pyr = dwt2(np.ones((16, 16))).with_approx_zeroed()
    assert np.all(idwt2(pyr) == 0)


def test_dwt_size_and_structure_errors():
    with pytest.raises(SizeError):
        dwt2(np.zeros((7, 16)))
    pyr = dwt2(np.zeros((16, 16)))
    broken = WaveletPyramid(np.zeros((3, 3)), pyr.details, pyr.shapes)
    with pytest.raises(StructureError):
        idwt2(broken)
    with pytest.raises(StructureError):
        idwt2(WaveletPyramid(pyr.approx, pyr.details[:2], pyr.shapes))


# --- PFM maps ---------------------------------------------------------------

def test_mid_gray_maps():
    pfm = decompose_color(uniform((0.5, 0.5, 0.5), 16))
    gr, by, ld, cf = pfm.maps
    np.testing.assert_allclose(gr, 0.5, atol=1e-8)
    np.testing.assert_allclose(by, 0.5, atol=1e-8)
    np.testing.assert_allclose(cf, 0.5, atol=1e-12)
    np.testing.assert_allclose(ld, reference_lab((0.5, 0.5, 0.5))[0] / 100, atol=1e-9)
    assert ld[0, 0] == pytest.approx(0.534, abs=5e-4)


@given(st.floats(0, 1), st.floats(0, 1), st.floats(0, 1))
@settings(max_examples=30)
def test_constant_image_has_flat_detail_map(r, g, b):
    cf = decompose_color(uniform((r, g, b), 12)).maps[3]
    np.testing.assert_allclose(cf, 0.5, atol=1e-12)


def test_red_versus_green():
    red = decompose_color(uniform((1, 0, 0))).maps[0].mean()
    green = decompose_color(uniform((0, 1, 0))).maps[0].mean()
    assert red > 0.5 > green


def test_luminance_maps_recombine_to_lightness(rng):
    # smooth field keeps both maps inside their clamp ranges
    yy, xx = np.mgrid[0:32, 0:32]
    v = 0.4 + 0.2 * np.sin(xx / 5.0) * np.cos(yy / 7.0) + 0.02 * rng.standard_normal((32, 32))
    image = Image.rgb(np.repeat(np.clip(v, 0, 1)[..., None], 3, axis=2))
    _, _, ld, cf = decompose_color(image).maps
    L = srgb_to_lab(image)[0]
    recombined = 100 * ld + 200 * (cf - 0.5)
    assert np.max(np.abs(recombined - L)) <= 1e-4 * np.max(np.abs(L))


def test_gray_bands():
    black = decompose_gray(Image.gray(np.zeros((8, 8))))
    assert np.all(black.maps[0] == 0) and np.all(black.maps[1] == 0)
    white = decompose_gray(Image.gray(np.ones((8, 8))))
    assert np.all(white.maps[1] == 1) and np.all(white.maps[0] == 0)
    checker = np.where((np.add.outer(np.arange(8), np.arange(8)) % 2) == 0, 0.25, 0.75)
    b1, b2, ld, cf = decompose_gray(Image.gray(checker)).maps
    np.testing.assert_array_equal(b1, np.where(checker == 0.25, 0.25, 0.0))
    np.testing.assert_array_equal(b2, np.where(checker == 0.75, 0.75, 0.0))
    assert np.allclose(ld, 0.5)


def test_gray_boundary_goes_to_upper_band():
    b1, b2, _, _ = decompose_gray(Image.gray(np.full((8, 8), 0.5))).maps
    assert np.all(b1 == 0) and np.all(b2 == 0.5)


def test_decompose_gray_rejects_color():
    with pytest.raises(ImageTypeError):
        decompose_gray(uniform((0.1, 0.2, 0.3)))


@settings(max_examples=25, deadline=None)
@given(arrays(np.float64, (9, 11, 3), elements=st.floats(0, 1)), st.booleans())
def test_maps_bounded_ordered_and_deterministic(px, gray):
    image = Image.gray(px[..., 0]) if gray else Image.rgb(px)
    a, b = decompose(image), decompose(image)
    assert a.config is (PfmConfig.GRAY if gray else PfmConfig.COLOR)
    assert a.names == a.config.names and len(a.maps) == 4
    for m, m2 in zip(a.maps, b.maps):
        assert m.shape == (9, 11)
        assert m.min() >= 0 and m.max() <= 1
        assert np.array_equal(m, m2)
