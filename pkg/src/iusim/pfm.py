"""Perceptual feature maps (PFMs).

An image is split into four single-channel maps in [0, 1]:

* color images:  G-R, B-Y (CIE-Lab a and b), L-D and C-F (Haar analysis of L)
* gray images:   BAND1 / BAND2 (lower / upper intensity half), L-D and C-F

L-D is the full-resolution synthesis of the level-3 approximation alone,
C-F the synthesis of all detail subbands alone, so that L-D + C-F == L
before rescaling.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import ImageTypeError, RangeError, ShapeError, SizeError, StructureError

__all__ = [
    "ColorSpace",
    "Image",
    "PfmConfig",
    "PfmSet",
    "WaveletPyramid",
    "srgb_to_lab",
    "srgb_array_to_lab",
    "lab_array_to_srgb",
    "dwt2",
    "idwt2",
    "decompose",
    "decompose_color",
    "decompose_gray",
    "DWT_LEVELS",
]

DWT_LEVELS = 3
MIN_SIZE = 2**DWT_LEVELS


class ColorSpace(enum.Enum):
    SRGB = "SRGB"
    GRAY = "GRAY"


class PfmConfig(enum.Enum):
    COLOR = "COLOR"
    GRAY = "GRAY"

    @property
    def names(self) -> tuple[str, str, str, str]:
        if self is PfmConfig.COLOR:
            return ("GR", "BY", "LD", "CF")
        return ("BAND1", "BAND2", "LD", "CF")

    @property
    def color_space(self) -> ColorSpace:
        return ColorSpace.SRGB if self is PfmConfig.COLOR else ColorSpace.GRAY

    @classmethod
    def for_color_space(cls, cs: ColorSpace) -> "PfmConfig":
        return cls.COLOR if cs is ColorSpace.SRGB else cls.GRAY


@dataclass(frozen=True, eq=False)
class Image:
    """Decoded raster, H x W x C reals in [0, 1]."""

    pixels: np.ndarray
    color_space: ColorSpace

    def __post_init__(self):
        px = np.array(self.pixels, dtype=np.float64)
        if px.ndim == 2:
            px = px[:, :, None]
        if px.ndim != 3:
            raise ShapeError(f"image must be H x W x C, got shape {px.shape}")
        channels = 3 if self.color_space is ColorSpace.SRGB else 1
        if px.shape[2] != channels:
            raise ShapeError(
                f"{self.color_space.value} image needs {channels} channel(s), got {px.shape[2]}"
            )
        if px.shape[0] < MIN_SIZE or px.shape[1] < MIN_SIZE:
            raise SizeError(f"image must be at least {MIN_SIZE}x{MIN_SIZE}, got {px.shape[:2]}")
        if not np.all(np.isfinite(px)) or px.min() < 0.0 or px.max() > 1.0:
            raise RangeError("pixel values must be finite and within [0, 1]")
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)

    @property
    def shape(self) -> tuple[int, int]:
        return self.pixels.shape[0], self.pixels.shape[1]

    @classmethod
    def rgb(cls, pixels) -> "Image":
        return cls(pixels, ColorSpace.SRGB)

    @classmethod
    def gray(cls, pixels) -> "Image":
        return cls(pixels, ColorSpace.GRAY)


# sRGB primaries, D65 (IEC 61966-2-1)
_RGB_TO_XYZ = np.array(
    [
        [0.4124564, 0.3575761, 0.1804375],
        [0.2126729, 0.7151522, 0.0721750],
        [0.0193339, 0.1191920, 0.9503041],
    ]
)
_XYZ_TO_RGB = np.linalg.inv(_RGB_TO_XYZ)
# White point taken as the image of RGB (1,1,1) so neutral colors have exactly zero chroma.
_WHITE = _RGB_TO_XYZ.sum(axis=1)

_DELTA = 6.0 / 29.0


def _srgb_to_linear(c):
    return np.where(c <= 0.04045, c / 12.92, ((c + 0.055) / 1.055) ** 2.4)


def _linear_to_srgb(c):
    c = np.clip(c, 0.0, None)
    return np.where(c <= 0.0031308, 12.92 * c, 1.055 * c ** (1.0 / 2.4) - 0.055)


def _f(t):
    return np.where(t > _DELTA**3, np.cbrt(t), t / (3 * _DELTA**2) + 4.0 / 29.0)


def _f_inv(t):
    return np.where(t > _DELTA, t**3, 3 * _DELTA**2 * (t - 4.0 / 29.0))


def srgb_array_to_lab(rgb: np.ndarray) -> np.ndarray:
    """Convert an (..., 3) sRGB array in [0, 1] to CIE-Lab (..., 3)."""
    rgb = np.asarray(rgb, dtype=np.float64)
    xyz = _srgb_to_linear(rgb) @ _RGB_TO_XYZ.T
    fx, fy, fz = np.moveaxis(_f(xyz / _WHITE), -1, 0)
    lab = np.stack([116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)], axis=-1)
    return lab


def lab_array_to_srgb(lab: np.ndarray) -> np.ndarray:
    """Inverse of :func:`srgb_array_to_lab`; out-of-gamut values are clipped to [0, 1]."""
    lab = np.asarray(lab, dtype=np.float64)
    L, a, b = np.moveaxis(lab, -1, 0)
    fy = (L + 16.0) / 116.0
    f = np.stack([fy + a / 500.0, fy, fy - b / 200.0], axis=-1)
    xyz = _f_inv(f) * _WHITE
    rgb = _linear_to_srgb(xyz @ _XYZ_TO_RGB.T)
    return np.clip(rgb, 0.0, 1.0)


def srgb_to_lab(image: Image) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Return the (L, a, b) planes of an sRGB image. L lies in [0, 100]."""
    if image.color_space is not ColorSpace.SRGB:
        raise ImageTypeError(f"srgb_to_lab needs an SRGB image, got {image.color_space.value}")
    lab = srgb_array_to_lab(image.pixels)
    L = np.clip(lab[..., 0], 0.0, 100.0)
    return L, lab[..., 1], lab[..., 2]


@dataclass(frozen=True, eq=False)
class WaveletPyramid:
    """Multilevel orthonormal Haar decomposition.

    ``details[k]`` holds the (LH, HL, HH) subbands of level ``k + 1`` (finest
    first). ``shapes[k]`` is the size of the signal entering level ``k + 1``;
    odd sizes are padded by half-sample symmetric extension before the split
    and cropped back on synthesis.
    """

    approx: np.ndarray
    details: tuple
    shapes: tuple
    wavelet: str = "haar"

    @property
    def levels(self) -> int:
        return len(self.details)

    def with_details_zeroed(self) -> "WaveletPyramid":
        zeroed = tuple(tuple(np.zeros_like(d) for d in lvl) for lvl in self.details)
        return WaveletPyramid(self.approx, zeroed, self.shapes, self.wavelet)

    def with_approx_zeroed(self) -> "WaveletPyramid":
        return WaveletPyramid(np.zeros_like(self.approx), self.details, self.shapes, self.wavelet)

    def energy(self) -> float:
        total = float(np.sum(self.approx**2))
        for lvl in self.details:
            total += sum(float(np.sum(d**2)) for d in lvl)
        return total


_S = 1.0 / np.sqrt(2.0)


def _split(x: np.ndarray, axis: int):
    even = np.take(x, np.arange(0, x.shape[axis], 2), axis=axis)
    odd = np.take(x, np.arange(1, x.shape[axis], 2), axis=axis)
    return (even + odd) * _S, (even - odd) * _S


def _merge(lo: np.ndarray, hi: np.ndarray, axis: int) -> np.ndarray:
    shape = list(lo.shape)
    shape[axis] *= 2
    out = np.empty(shape, dtype=np.result_type(lo, hi))
    idx_even = [slice(None)] * lo.ndim
    idx_odd = [slice(None)] * lo.ndim
    idx_even[axis] = slice(0, None, 2)
    idx_odd[axis] = slice(1, None, 2)
    out[tuple(idx_even)] = (lo + hi) * _S
    out[tuple(idx_odd)] = (lo - hi) * _S
    return out


def dwt2(plane: np.ndarray, levels: int = DWT_LEVELS) -> WaveletPyramid:
    """Multilevel 2D orthonormal Haar analysis of a single plane."""
    x = np.asarray(plane, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeError(f"dwt2 expects a 2D plane, got shape {x.shape}")
    if levels < 1:
        raise ValueError("levels must be >= 1")
    if min(x.shape) < 2**levels:
        raise SizeError(f"plane {x.shape} too small for {levels} dyadic levels (need >= {2**levels})")
    details = []
    shapes = []
    for _ in range(levels):
        shapes.append(x.shape)
        h, w = x.shape
        if h % 2 or w % 2:
            x = np.pad(x, ((0, h % 2), (0, w % 2)), mode="symmetric")
        lo_r, hi_r = _split(x, 0)
        ll, lh = _split(lo_r, 1)
        hl, hh = _split(hi_r, 1)
        details.append((lh, hl, hh))
        x = ll
    return WaveletPyramid(x, tuple(details), tuple(shapes))


def idwt2(pyramid: WaveletPyramid) -> np.ndarray:
    """Synthesis matching :func:`dwt2`; returns a plane of the original size."""
    if len(pyramid.details) != len(pyramid.shapes) or not pyramid.details:
        raise StructureError("pyramid needs one recorded shape per detail level")
    x = np.asarray(pyramid.approx, dtype=np.float64)
    for (lh, hl, hh), shape in zip(reversed(pyramid.details), reversed(pyramid.shapes)):
        expected = ((shape[0] + 1) // 2, (shape[1] + 1) // 2)
        for band in (x, lh, hl, hh):
            if np.shape(band) != expected:
                raise StructureError(
                    f"subband shape {np.shape(band)} inconsistent with level input {shape}"
                )
        lo_r = _merge(x, lh, 1)
        hi_r = _merge(hl, hh, 1)
        x = _merge(lo_r, hi_r, 0)[: shape[0], : shape[1]]
    return x


@dataclass(frozen=True, eq=False)
class PfmSet:
    """Four same-sized maps in [0, 1], ordered as ``config.names``."""

    config: PfmConfig
    maps: tuple

    def __post_init__(self):
        if len(self.maps) != 4:
            raise StructureError(f"a PFM set holds exactly 4 maps, got {len(self.maps)}")
        shapes = {np.shape(m) for m in self.maps}
        if len(shapes) != 1:
            raise StructureError(f"PFMs must share one shape, got {sorted(shapes)}")

    @property
    def names(self):
        return self.config.names

    @property
    def shape(self) -> tuple[int, int]:
        return np.shape(self.maps[0])

    def items(self):
        return list(zip(self.names, self.maps))

    def stack(self, dtype=np.float32) -> np.ndarray:
        """(4, H, W) array in config order."""
        return np.stack(self.maps).astype(dtype)


def _luminance_maps(L: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    pyr = dwt2(L, DWT_LEVELS)
    coarse = idwt2(pyr.with_details_zeroed())
    fine = idwt2(pyr.with_approx_zeroed())
    ld = np.clip(coarse / 100.0, 0.0, 1.0)
    cf = np.clip(0.5 + fine / 200.0, 0.0, 1.0)
    return ld, cf


def decompose_color(image: Image) -> PfmSet:
    L, a, b = srgb_to_lab(image)
    gr = np.clip((a + 128.0) / 256.0, 0.0, 1.0)
    by = np.clip((b + 128.0) / 256.0, 0.0, 1.0)
    ld, cf = _luminance_maps(L)
    return PfmSet(PfmConfig.COLOR, (gr, by, ld, cf))


def decompose_gray(image: Image) -> PfmSet:
    if image.color_space is not ColorSpace.GRAY:
        raise ImageTypeError(f"decompose_gray needs a GRAY image, got {image.color_space.value}")
    x = image.pixels[:, :, 0]
    band1 = np.where(x < 0.5, x, 0.0)
    band2 = np.where(x >= 0.5, x, 0.0)
    ld, cf = _luminance_maps(100.0 * x)
    return PfmSet(PfmConfig.GRAY, (band1, band2, ld, cf))


def decompose(image: Image) -> PfmSet:
    if image.color_space is ColorSpace.SRGB:
        return decompose_color(image)
    return decompose_gray(image)
