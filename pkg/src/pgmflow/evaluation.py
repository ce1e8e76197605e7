#!/usr/bin/env python3
# -*- coding: utf-8 -*-
import math
import logger
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Tuple, Union

import cv2
import numpy as np

from .common import SerializableBaseModel, InvalidInputError, InvalidParameterError, FlowFormatError
from .imgproc import RasterImage
from .interp import FlowField, MatchSet
from .matcher import CorrespondenceField

log = logger.get_logger(__name__)

FLO_TAG = 202021.25
FLO_HEADER_BYTES = 12
MAX_FLO_PIXELS = 1 << 28
BAD_PIXEL_THRESHOLD = 3.0
COLOR_PERCENTILE = 99

# hue segments of the flow color wheel: red-yellow, yellow-green, green-cyan, cyan-blue, blue-magenta, magenta-red
_WHEEL_SEGMENTS = (15, 6, 4, 11, 13, 6)


class Metrics(SerializableBaseModel):
    aee: float
    bad_ratio: float
    tau: float = BAD_PIXEL_THRESHOLD
    valid_count: int = 0

    @property
    def bad_percent(self) -> float:
        return 100.0 * self.bad_ratio

    def summary(self) -> str:
        return f'AEE {self.aee:.3f}, bad({self.tau:g}px) {self.bad_percent:.2f}%'


@dataclass
class FlowFile:
    flow: FlowField
    path: Path

    @classmethod
    def load(cls, path: Union[str, Path]) -> 'FlowFile':
        return cls(read_flo(path), Path(path))


def read_flo(path: Union[str, Path]) -> FlowField:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < FLO_HEADER_BYTES:
        raise FlowFormatError(f'{path}: truncated header ({len(raw)} bytes)')
    tag = np.frombuffer(raw, '<f4', count=1)[0]
    if tag != np.float32(FLO_TAG):
        raise FlowFormatError(f'{path}: bad magic tag {tag!r}')
    width, height = (int(value) for value in np.frombuffer(raw, '<i4', count=2, offset=4))
    if width < 1 or height < 1 or width * height > MAX_FLO_PIXELS:
        raise FlowFormatError(f'{path}: invalid dimensions {width}x{height}')
    expected = FLO_HEADER_BYTES + 8 * width * height
    if len(raw) != expected:
        raise FlowFormatError(f'{path}: expected {expected} bytes for {width}x{height}, got {len(raw)}')
    data = np.frombuffer(raw, '<f4', offset=FLO_HEADER_BYTES).reshape(height, width, 2)
    try:
        return FlowField(data.astype(np.float32))
    except InvalidInputError as e:
        raise FlowFormatError(f'{path}: {e}')


def write_flo(flow: FlowField, path: Union[str, Path]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = np.array([FLO_TAG], '<f4').tobytes() + np.array([flow.width, flow.height], '<i4').tobytes()
    path.write_bytes(header + flow.data.astype('<f4').tobytes())
    log.info(f'Wrote {flow.width}x{flow.height} flow to {path}')


def endpoint_errors(flow: FlowField, gt: FlowField) -> np.ndarray:
    if flow.shape != gt.shape:
        raise InvalidInputError(f'Flow {flow.shape} and ground truth {gt.shape} differ')
    diff = flow.data.astype(np.float64) - gt.data.astype(np.float64)
    return np.hypot(diff[..., 0], diff[..., 1])


def endpoint_metrics(flow: FlowField, gt: FlowField, mask: Optional[np.ndarray] = None,
                     tau: float = BAD_PIXEL_THRESHOLD) -> Metrics:
    """AEE and the share of pixels with endpoint error above ``tau``; NaN with valid_count 0 for an empty mask."""
    errors = endpoint_errors(flow, gt)
    if mask is not None:
        mask = np.asarray(mask, dtype=np.bool_)
        if mask.shape != errors.shape:
            raise InvalidInputError(f'Mask {mask.shape} does not match flow {errors.shape}')
        errors = errors[mask]
    if errors.size == 0:
        return Metrics(aee=math.nan, bad_ratio=math.nan, tau=tau, valid_count=0)
    return Metrics(aee=float(errors.mean()), bad_ratio=float((errors > tau).mean()), tau=tau,
                   valid_count=int(errors.size))


def field_to_flow(field: CorrespondenceField) -> Tuple[FlowField, np.ndarray]:
    """Real-valued flow with zeros at uninitialized entries, plus the initialized mask."""
    data = np.where(field.valid[..., np.newaxis], field.offsets, 0).astype(np.float32)
    return FlowField(data), field.valid.copy()


def count_wrong_inliers(field: CorrespondenceField, gt: FlowField, mask: np.ndarray,
                        tau: float = BAD_PIXEL_THRESHOLD) -> int:
    """Initialized entries that have no valid ground truth or miss it by more than ``tau``."""
    flow, _ = field_to_flow(field)
    errors = endpoint_errors(flow, gt)
    mask = np.asarray(mask, dtype=np.bool_)
    return int((field.valid & (~mask | (errors > tau))).sum())


def color_wheel() -> np.ndarray:
    columns = []
    for segment, length in enumerate(_WHEEL_SEGMENTS):
        ramp = np.floor(255 * np.arange(length) / length)
        rising = segment % 2 == 0
        block = np.zeros((length, 3))
        main = segment // 2
        # every segment holds one channel at 255 and ramps its neighbor up or down
        if rising:
            block[:, main] = 255
            block[:, (main + 1) % 3] = ramp
        else:
            block[:, (main + 1) % 3] = 255
            block[:, main] = 255 - ramp
        columns.append(block)
    return np.concatenate(columns)


def _colorize(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    wheel = color_wheel()
    count = len(wheel)
    radius = np.hypot(u, v)
    angle = np.arctan2(-v, -u) / np.pi
    position = (angle + 1) / 2 * (count - 1)
    k0 = np.floor(position).astype(np.int64)
    k1 = (k0 + 1) % count
    frac = (position - k0)[..., np.newaxis]
    color = ((1 - frac) * wheel[k0] + frac * wheel[k1]) / 255.0
    inside = (radius <= 1)[..., np.newaxis]
    color = np.where(inside, 1 - radius[..., np.newaxis] * (1 - color), color * 0.75)
    return np.floor(255 * color)


def auto_max_magnitude(flow: FlowField) -> float:
    magnitude = np.percentile(np.hypot(flow.u, flow.v), COLOR_PERCENTILE)
    return float(magnitude) if magnitude > 0 else 1.0


def flow_to_color(flow: FlowField, max_magnitude: Optional[float] = None) -> RasterImage:
    """Color-wheel rendering: hue from direction, saturation from magnitude over ``max_magnitude``."""
    if max_magnitude is None:
        max_magnitude = auto_max_magnitude(flow)
    if max_magnitude <= 0:
        raise InvalidParameterError(f'max_magnitude must be positive, got {max_magnitude}')
    u = flow.u.astype(np.float64) / max_magnitude
    v = flow.v.astype(np.float64) / max_magnitude
    return RasterImage(_colorize(u, v))


def draw_matches(matches: MatchSet, width: int, height: int,
                 max_magnitude: Optional[float] = None) -> RasterImage:
    """3x3 squares at match sources, colored by displacement, on white."""
    canvas = np.full((height, width, 3), 255, np.uint8)
    if len(matches):
        disp = matches.displacements.astype(np.float64)
        if max_magnitude is None:
            max_magnitude = float(np.percentile(np.hypot(disp[:, 0], disp[:, 1]), COLOR_PERCENTILE)) or 1.0
        colors = _colorize(disp[:, 0] / max_magnitude, disp[:, 1] / max_magnitude).astype(np.uint8)
        for (x, y), color in zip(matches.sources.tolist(), colors.tolist()):
            cv2.rectangle(canvas, (x - 1, y - 1), (x + 1, y + 1), color, thickness=-1)
    return RasterImage(canvas)


@dataclass
class Translation:
    tx: float
    ty: float

    def matrix(self, shape: Tuple[int, int]) -> np.ndarray:
        return np.array([[1.0, 0.0, self.tx], [0.0, 1.0, self.ty]])


@dataclass
class AffineMotion:
    """Maps source pixel p to ``A[:, :2] @ p + A[:, 2]``."""

    A: np.ndarray

    def __post_init__(self) -> None:
        self.A = np.asarray(self.A, dtype=np.float64)
        if self.A.shape != (2, 3):
            raise InvalidParameterError(f'Affine motion needs a 2x3 matrix, got {self.A.shape}')
        if abs(np.linalg.det(self.A[:, :2])) < 1e-9:
            raise InvalidParameterError('Affine motion is not invertible')

    @classmethod
    def rotation(cls, degrees: float, center: Tuple[float, float]) -> 'AffineMotion':
        return cls(cv2.getRotationMatrix2D(center, -degrees, 1.0))

    def matrix(self, shape: Tuple[int, int]) -> np.ndarray:
        return self.A


@dataclass
class Rotation:
    """Rotation by ``degrees`` about the image center."""

    degrees: float

    def matrix(self, shape: Tuple[int, int]) -> np.ndarray:
        height, width = shape
        return AffineMotion.rotation(self.degrees, ((width - 1) / 2.0, (height - 1) / 2.0)).A


@dataclass
class PastedOccluder:
    """Translation of the whole image plus a noise square pasted into the first frame only."""

    tx: float
    ty: float
    x: int
    y: int
    size: int = 20

    def matrix(self, shape: Tuple[int, int]) -> np.ndarray:
        return Translation(self.tx, self.ty).matrix(shape)

    def region(self, shape: Tuple[int, int]) -> np.ndarray:
        region = np.zeros(shape, np.bool_)
        region[max(self.y, 0):self.y + self.size, max(self.x, 0):self.x + self.size] = True
        return region


Motion = Union[Translation, AffineMotion, Rotation, PastedOccluder]


def noise_image(height: int, width: int, seed: int = 0, channels: int = 3) -> RasterImage:
    rng = np.random.default_rng(seed)
    return RasterImage(rng.integers(0, 256, size=(height, width, channels)).astype(np.float64))


def synth_pair(base: RasterImage, motion: Motion,
               seed: int = 0) -> Tuple[RasterImage, RasterImage, FlowField, np.ndarray]:
    """Returns (img1, img2, gt, mask) with img2(A p) = img1(p) sampled bilinearly."""
    A = motion.matrix(base.shape)
    height, width = base.shape
    ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
    tx = A[0, 0] * xs + A[0, 1] * ys + A[0, 2]
    ty = A[1, 0] * xs + A[1, 1] * ys + A[1, 2]
    mask = (tx >= 0) & (tx <= width - 1) & (ty >= 0) & (ty <= height - 1)
    if mask.mean() < 0.5:
        raise InvalidParameterError(f'Motion keeps only {mask.mean():.0%} of pixels in bounds')

    inverse = cv2.invertAffineTransform(A)
    map_x = (inverse[0, 0] * xs + inverse[0, 1] * ys + inverse[0, 2]).astype(np.float32)
    map_y = (inverse[1, 0] * xs + inverse[1, 1] * ys + inverse[1, 2]).astype(np.float32)
    source = base.data.astype(np.float32)
    warped = cv2.remap(source, map_x, map_y, interpolation=cv2.INTER_LINEAR, borderMode=cv2.BORDER_REFLECT_101)
    img1 = base.data.copy()
    img2 = warped.reshape(base.data.shape).astype(np.float64)

    if isinstance(motion, PastedOccluder):
        region = motion.region(base.shape)
        patch = noise_image(height, width, seed=seed + 1, channels=base.channels).data
        img1[region] = patch[region]
        mask &= ~region

    gt = FlowField(np.stack([tx - xs, ty - ys], axis=2))
    log.debug(f'Synthesized {width}x{height} pair, {int(mask.sum())} valid ground truth pixels')
    return RasterImage(img1), RasterImage(img2), gt, mask
