#!/usr/bin/env python3
# -*- coding: utf-8 -*-
import math
import logger
from dataclasses import dataclass, field as dataclass_field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import cv2
import numpy as np

from .common import ColorSpace, GradientVariant, InvalidInputError, InvalidParameterError, ImageIOError

log = logger.get_logger(__name__)

MAX_SOBEL_SIZE = 31

# ITU-R BT.601 full range, channel order Y, Cr, Cb (OpenCV convention)
_LUMA = np.array([0.299, 0.587, 0.114])
_RGB_TO_YCRCB = np.array([
    _LUMA,
    0.713 * (np.array([1.0, 0.0, 0.0]) - _LUMA),
    0.564 * (np.array([0.0, 0.0, 1.0]) - _LUMA),
])
_YCRCB_TO_RGB = np.linalg.inv(_RGB_TO_YCRCB)
_YCRCB_OFFSET = np.array([0.0, 128.0, 128.0])


@dataclass
class RasterImage:
    """Row-major image of shape (height, width, channels), real values on a [0, 255] scale.

    CIELab images keep L in [0, 100] and a, b around zero.
    """

    data: np.ndarray

    def __post_init__(self) -> None:
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim == 2:
            data = data[..., np.newaxis]
        if data.ndim != 3:
            raise InvalidInputError(f'Image must have shape (H, W) or (H, W, C), got {data.shape}')
        if data.shape[0] < 1 or data.shape[1] < 1:
            raise InvalidInputError(f'Image must be nonempty, got {data.shape}')
        if data.shape[2] not in (1, 3):
            raise InvalidInputError(f'Image must have 1 or 3 channels, got {data.shape[2]}')
        self.data = np.ascontiguousarray(data)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> Tuple[int, int]:
        return self.height, self.width


@dataclass
class GradientImage:
    """Per-pixel [Gx, Gy] stack: all x-derivative channels first, then all y-derivative channels.

    Direction-only variants keep int8 signs and a packed code per pixel (see :func:`pack_signs`).
    """

    data: np.ndarray
    variant: GradientVariant = GradientVariant.C
    codes: Optional[np.ndarray] = dataclass_field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        self.variant = GradientVariant(self.variant)
        data = np.asarray(self.data)
        if data.ndim != 3 or data.shape[2] not in (2, 6):
            raise InvalidInputError(f'Gradient image must have shape (H, W, 2|6), got {data.shape}')
        if self.variant.is_direction_only:
            self.data = np.ascontiguousarray(np.sign(data), dtype=np.int8)
            self.codes = pack_signs(self.data)
        else:
            self.data = np.ascontiguousarray(data, dtype=np.float64)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> Tuple[int, int]:
        return self.height, self.width

    @property
    def samples(self) -> np.ndarray:
        """What the matching kernels read: packed codes for direction-only variants, gradients otherwise."""
        return self.data if self.codes is None else self.codes

    def as_float(self) -> np.ndarray:
        return self.data.astype(np.float64)


def pack_signs(signs: np.ndarray) -> np.ndarray:
    """Packs (H, W, C) signs into (H, W, 1) uint16 codes: bit c marks a positive channel c, bit C + c a negative one."""
    channels = signs.shape[2]
    weights = np.left_shift(1, np.arange(channels)).astype(np.uint16)
    positive = ((signs > 0) * weights).sum(axis=2)
    negative = ((signs < 0) * weights).sum(axis=2)
    codes = positive | (negative << channels)
    return np.ascontiguousarray(codes.astype(np.uint16)[..., np.newaxis])


@dataclass
class ImagePyramid:
    levels: List[RasterImage]
    factor: float

    @property
    def count(self) -> int:
        return len(self.levels)


def convert_color_space(img: RasterImage, target: ColorSpace) -> RasterImage:
    """Converts an RGB image (or an already gray image for GRAY) to ``target``.

    Scales: RGB, GRAY and YCrCb share [0, 255] with Cr/Cb neutral at 128; CIELab uses sRGB with a D65 white,
    L in [0, 100].
    """
    target = ColorSpace(target)
    if img.channels == 1:
        if target is ColorSpace.GRAY:
            return RasterImage(img.data.copy())
        raise InvalidInputError(f'Cannot convert a 1-channel image to {target.value}')
    if img.channels != 3:
        raise InvalidInputError(f'Unsupported channel count: {img.channels}')

    rgb = img.data
    if target is ColorSpace.RGB:
        return RasterImage(rgb.copy())
    if target is ColorSpace.GRAY:
        return RasterImage(rgb @ _LUMA)
    if target is ColorSpace.YCRCB:
        return RasterImage(rgb @ _RGB_TO_YCRCB.T + _YCRCB_OFFSET)
    rgb01 = np.clip(rgb / 255.0, 0.0, 1.0).astype(np.float32)
    return RasterImage(cv2.cvtColor(rgb01, cv2.COLOR_RGB2Lab).astype(np.float64))


def convert_to_rgb(img: RasterImage, source: ColorSpace) -> RasterImage:
    """Inverse of :func:`convert_color_space` for the 3-channel spaces."""
    source = ColorSpace(source)
    if img.channels != 3:
        raise InvalidInputError(f'Cannot convert a {img.channels}-channel image from {source.value} to RGB')
    if source is ColorSpace.RGB:
        return RasterImage(img.data.copy())
    if source is ColorSpace.YCRCB:
        return RasterImage((img.data - _YCRCB_OFFSET) @ _YCRCB_TO_RGB.T)
    if source is ColorSpace.CIELAB:
        rgb01 = cv2.cvtColor(img.data.astype(np.float32), cv2.COLOR_Lab2RGB)
        return RasterImage(rgb01.astype(np.float64) * 255.0)
    raise InvalidInputError(f'{source.value} has no inverse conversion')


def sobel_kernels(size: int) -> Tuple[Tuple[np.ndarray, np.ndarray], Tuple[np.ndarray, np.ndarray]]:
    """Returns ((kx_x, kx_y), (ky_x, ky_y)): separable row/column factors of K_x(S) and K_y(S)."""
    if size < 3 or size % 2 == 0 or size > MAX_SOBEL_SIZE:
        raise InvalidParameterError(f'Sobel kernel size must be odd and in [3, {MAX_SOBEL_SIZE}], got {size}')
    kx = cv2.getDerivKernels(1, 0, size, normalize=False, ktype=cv2.CV_64F)
    ky = cv2.getDerivKernels(0, 1, size, normalize=False, ktype=cv2.CV_64F)
    return (kx[0], kx[1]), (ky[0], ky[1])


def _filter_separable(data: np.ndarray, kernel_x: np.ndarray, kernel_y: np.ndarray) -> np.ndarray:
    out = cv2.sepFilter2D(data, cv2.CV_64F, kernel_x, kernel_y, borderType=cv2.BORDER_REPLICATE)
    return out.reshape(data.shape)


def sobel_gradients(img: RasterImage, size: int) -> Tuple[RasterImage, RasterImage]:
    (kx_x, kx_y), (ky_x, ky_y) = sobel_kernels(size)
    gx = _filter_separable(img.data, kx_x, kx_y)
    gy = _filter_separable(img.data, ky_x, ky_y)
    return RasterImage(gx), RasterImage(gy)


def build_gradient_image(gx: RasterImage, gy: RasterImage) -> GradientImage:
    if gx.data.shape != gy.data.shape:
        raise InvalidInputError(f'Gradient shapes differ: {gx.data.shape} vs {gy.data.shape}')
    variant = GradientVariant.G if gx.channels == 1 else GradientVariant.C
    return GradientImage(np.concatenate([gx.data, gy.data], axis=2), variant=variant)


def apply_variant(grad: GradientImage, variant: GradientVariant) -> GradientImage:
    variant = GradientVariant(variant)
    if not variant.is_direction_only:
        return GradientImage(grad.as_float(), variant=variant)
    # x/|x| with 0 -> 0, stored as int8
    return GradientImage(grad.data, variant=variant)


def scaled_size(size: int, factor: float) -> int:
    return max(1, math.ceil(round(size * factor, 9)))


def area_resize(data: np.ndarray, factor: float) -> np.ndarray:
    """Box-averages every channel of an (H, W, C) array to ceil-scaled dimensions."""
    height, width = data.shape[:2]
    dsize = (scaled_size(width, factor), scaled_size(height, factor))
    channels = [cv2.resize(np.ascontiguousarray(data[..., c]), dsize, interpolation=cv2.INTER_AREA)
                for c in range(data.shape[2])]
    return np.dstack(channels)


def downsample(img: RasterImage, factor: float) -> RasterImage:
    if not 0.0 < factor < 1.0:
        raise InvalidParameterError(f'Downsample factor must lie in (0, 1), got {factor}')
    return RasterImage(area_resize(img.data, factor))


def level_shapes(shape: Tuple[int, int], levels: int, factor: float) -> List[Tuple[int, int]]:
    shapes = [tuple(shape)]
    for _ in range(1, levels):
        height, width = shapes[-1]
        shapes.append((scaled_size(height, factor), scaled_size(width, factor)))
    return shapes


def build_image_pyramid(img: RasterImage, levels: int, factor: float) -> ImagePyramid:
    if levels < 2:
        raise InvalidParameterError(f'Pyramid needs at least 2 levels, got {levels}')
    pyramid = [img]
    for level in range(1, levels):
        coarser = downsample(pyramid[-1], factor)
        if coarser.shape == pyramid[-1].shape:
            raise InvalidParameterError(f'Image {img.shape} too small for {levels} levels at factor {factor}')
        pyramid.append(coarser)
        log.debug(f'Pyramid level {level}: {coarser.width}x{coarser.height}')
    return ImagePyramid(levels=pyramid, factor=factor)


def gradient_image(img: RasterImage, space: ColorSpace, variant: GradientVariant, size: int) -> GradientImage:
    converted = convert_color_space(img, space)
    gx, gy = sobel_gradients(converted, size)
    return apply_variant(build_gradient_image(gx, gy), variant)


def build_gradient_pyramid(img: RasterImage,
                           spaces: Sequence[ColorSpace],
                           variant: GradientVariant,
                           size: int,
                           levels: int,
                           factor: float) -> List[GradientImage]:
    variant = GradientVariant(variant)
    spaces = [ColorSpace(space) for space in spaces]
    if len(spaces) != levels:
        raise InvalidParameterError(f'Expected {levels} color spaces, got {len(spaces)}')
    for space in spaces:
        if variant.is_gray != (space is ColorSpace.GRAY):
            raise InvalidParameterError(f'Variant {variant.value} cannot use color space {space.value}')

    pyramid = build_image_pyramid(img, levels, factor)
    return [gradient_image(level_img, space, variant, size) for level_img, space in zip(pyramid.levels, spaces)]


def read_image(path: Union[str, Path]) -> RasterImage:
    """Decodes an 8-bit PNG, PPM or PGM file into RGB (or gray) values in [0, 255]."""
    path = Path(path)
    if not path.is_file():
        raise ImageIOError(f'Image file not found: {path}')
    data = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if data is None:
        raise ImageIOError(f'Cannot decode image: {path}')
    if data.dtype != np.uint8:
        raise ImageIOError(f'Only 8-bit images are supported, {path} is {data.dtype}')
    if data.ndim == 3:
        if data.shape[2] == 4:
            data = cv2.cvtColor(data, cv2.COLOR_BGRA2RGB)
        elif data.shape[2] == 3:
            data = cv2.cvtColor(data, cv2.COLOR_BGR2RGB)
        else:
            raise ImageIOError(f'Unsupported channel count {data.shape[2]} in {path}')
    return RasterImage(data.astype(np.float64))


def write_image(img: RasterImage, path: Union[str, Path]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = np.clip(np.rint(img.data), 0, 255).astype(np.uint8)
    if img.channels == 3:
        data = cv2.cvtColor(data, cv2.COLOR_RGB2BGR)
    else:
        data = data[..., 0]
    if not cv2.imwrite(str(path), data):
        raise ImageIOError(f'Cannot write image: {path}')
