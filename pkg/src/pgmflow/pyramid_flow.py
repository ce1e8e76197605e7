#!/usr/bin/env python3
# -*- coding: utf-8 -*-
import math
import logger
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field as dataclass_field
from typing import Optional, List, Tuple

import numpy as np
from numba import njit
from pydantic import Field, model_validator

from .common import (SerializableBaseModel, SerializableDataClass, ColorSpace, GradientVariant, Direction, Ablation,
                     PropagationOrder, InvalidInputError, InvalidParameterError)
from .imgproc import RasterImage, GradientImage, area_resize, build_gradient_pyramid, level_shapes, scaled_size
from .matcher import (CorrespondenceField, MatchParams, basic_gradient_matching, exhaustive_match_smallest,
                      interior_field_costs, unrelated_sample_cost)

log = logger.get_logger(__name__)

FORWARD_SPACES = (ColorSpace.RGB, ColorSpace.CIELAB, ColorSpace.YCRCB)
BACKWARD_SPACES = (ColorSpace.CIELAB, ColorSpace.YCRCB, ColorSpace.RGB)
SEED_REDUCTION_STEPS = 2


def default_spaces(levels: int, variant: GradientVariant, backward: bool = False) -> List[ColorSpace]:
    if GradientVariant(variant).is_gray:
        return [ColorSpace.GRAY] * levels
    table = BACKWARD_SPACES if backward else FORWARD_SPACES
    return [table[level % len(table)] for level in range(levels)]


class PipelineConfig(SerializableBaseModel):
    search_bound: int = Field(default=2, ge=1)
    sobel_size: int = Field(default=5, ge=3)
    levels: int = Field(default=3, ge=2)
    factor: float = Field(default=0.5, gt=0.0, lt=1.0)
    refinements: int = Field(default=2, ge=1)
    start_level: int = Field(default=2, ge=1)
    radius_fwd: int = Field(default=7, ge=1)
    radius_bwd: int = Field(default=5, ge=1)
    iters_full: int = Field(default=6, ge=1)
    iters_other: int = Field(default=4, ge=1)
    eps_check: float = Field(default=1.0, ge=0.0)
    min_region: int = Field(default=9, ge=1)
    seg_tol: int = Field(default=1, ge=0)
    max_cost_ratio: Optional[float] = Field(default=0.15, gt=0.0)
    spaces_fwd: Optional[List[ColorSpace]] = None
    spaces_bwd: Optional[List[ColorSpace]] = None
    variant: GradientVariant = GradientVariant.C
    seed: int = Field(default=0, ge=0)
    ablation: Ablation = Ablation.FULL
    order: PropagationOrder = PropagationOrder.FLOWFIELDS
    parallel_directions: bool = True

    @model_validator(mode='after')
    def _check_levels(self) -> 'PipelineConfig':
        if self.sobel_size % 2 == 0:
            raise ValueError(f'sobel_size must be odd, got {self.sobel_size}')
        if not 1 <= self.start_level <= self.levels - 1:
            raise ValueError(f'start_level must lie in [1, {self.levels - 1}], got {self.start_level}')
        if self.spaces_fwd is None:
            self.spaces_fwd = default_spaces(self.levels, self.variant)
        if self.spaces_bwd is None:
            self.spaces_bwd = default_spaces(self.levels, self.variant, backward=True)
        for name, spaces in (('spaces_fwd', self.spaces_fwd), ('spaces_bwd', self.spaces_bwd)):
            if len(spaces) != self.levels:
                raise ValueError(f'{name} needs {self.levels} entries, got {len(spaces)}')
            if any((space is ColorSpace.GRAY) != self.variant.is_gray for space in spaces):
                raise ValueError(f'{name} {[s.value for s in spaces]} incompatible with variant {self.variant.value}')
        return self

    def for_variant(self, variant: GradientVariant) -> 'PipelineConfig':
        """Copy with ``variant`` and that variant's default color spaces."""
        data = self.to_dict()
        data.update(variant=GradientVariant(variant), spaces_fwd=None, spaces_bwd=None)
        return PipelineConfig.from_dict(data)

    def with_ablation(self, ablation: Ablation) -> 'PipelineConfig':
        return self.model_copy(update={'ablation': Ablation(ablation)})


@dataclass
class OutlierRecord:
    OUTLIER = 0
    INLIER = 1
    UNSET = -1

    states: np.ndarray

    def __post_init__(self) -> None:
        self.states = np.ascontiguousarray(self.states, dtype=np.int8)

    @classmethod
    def unset(cls, height: int, width: int) -> 'OutlierRecord':
        return cls(np.full((height, width), cls.UNSET, np.int8))

    @classmethod
    def from_inliers(cls, inliers: np.ndarray) -> 'OutlierRecord':
        return cls(np.where(inliers, cls.INLIER, cls.OUTLIER))

    @property
    def shape(self) -> Tuple[int, int]:
        return self.states.shape

    @property
    def is_unset(self) -> np.ndarray:
        return self.states == self.UNSET

    def inliers(self) -> np.ndarray:
        """Inlier mask with unset entries counted as inliers."""
        return self.states != self.OUTLIER

    @property
    def inlier_count(self) -> int:
        return int((self.states == self.INLIER).sum())


@dataclass
class ConsistencyMap:
    passed: np.ndarray

    def __post_init__(self) -> None:
        self.passed = np.ascontiguousarray(self.passed, dtype=np.bool_)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.passed.shape

    @property
    def pass_count(self) -> int:
        return int(self.passed.sum())


@dataclass
class LevelReport(SerializableDataClass):
    stage: str
    level: int
    inliers: int
    pixels: int
    backward_inliers: int = 0


@dataclass
class MatchingDiagnostics:
    reports: List[LevelReport] = dataclass_field(default_factory=list)
    consistency: List[Tuple[int, ConsistencyMap]] = dataclass_field(default_factory=list)
    final_record: Optional[OutlierRecord] = None
    cost_check: Optional[ConsistencyMap] = None
    unfiltered: Optional[CorrespondenceField] = None

    @property
    def inlier_ratio(self) -> float:
        if not self.reports or self.reports[-1].pixels == 0:
            return 0.0
        return self.reports[-1].inliers / self.reports[-1].pixels


def seed_initial_field(g1: GradientImage, g2: GradientImage, params: MatchParams) -> CorrespondenceField:
    """Dense start field: exhaustive matching on a 4x-reduced copy, scaled back to the level."""
    small1, small2 = g1.as_float(), g2.as_float()
    for _ in range(SEED_REDUCTION_STEPS):
        small1 = area_resize(small1, 0.5)
        small2 = area_resize(small2, 0.5)
    scale = 1 << SEED_REDUCTION_STEPS
    radius = max(1, params.radius // scale)
    # averaged signs are no longer signs
    variant = g1.variant.full
    coarse = exhaustive_match_smallest(GradientImage(small1, variant), GradientImage(small2, variant), radius)

    ys = np.minimum(np.arange(g1.height) // scale, coarse.height - 1)
    xs = np.minimum(np.arange(g1.width) // scale, coarse.width - 1)
    offsets = coarse.offsets[ys[:, np.newaxis], xs[np.newaxis, :]] * scale
    field = CorrespondenceField(offsets, np.ones(g1.shape, np.bool_)).clamp_to_bounds(g2.shape)
    log.debug(f'Seeded {g1.width}x{g1.height} field from {coarse.width}x{coarse.height} exhaustive search')
    return field


def consistency_check(fwd: CorrespondenceField, bwd: CorrespondenceField, eps: float) -> ConsistencyMap:
    ys, xs = np.mgrid[0:fwd.height, 0:fwd.width]
    tx = xs + fwd.offsets[..., 0]
    ty = ys + fwd.offsets[..., 1]
    inside = fwd.valid & (tx >= 0) & (tx < bwd.width) & (ty >= 0) & (ty < bwd.height)
    qx = np.clip(tx, 0, bwd.width - 1)
    qy = np.clip(ty, 0, bwd.height - 1)
    back = bwd.offsets[qy, qx]
    residual = np.hypot(fwd.offsets[..., 0] + back[..., 0], fwd.offsets[..., 1] + back[..., 1])
    return ConsistencyMap(inside & bwd.valid[qy, qx] & (residual <= eps))


def update_outlier_record(record: OutlierRecord, check: ConsistencyMap) -> OutlierRecord:
    if record.shape != check.shape:
        raise InvalidInputError(f'Record {record.shape} and consistency map {check.shape} differ')
    previous = np.where(record.is_unset, True, record.states == OutlierRecord.INLIER)
    return OutlierRecord.from_inliers(previous & check.passed)


def cost_check(g1: GradientImage, g2: GradientImage, field: CorrespondenceField, radius: int, max_ratio: float,
               margin: int = 0) -> ConsistencyMap:
    """Passes entries whose mean sample cost is at most ``max_ratio`` times that of unrelated samples.

    Only samples at least ``margin`` pixels inside both images count; an entry with none of them passes.
    """
    if max_ratio <= 0.0:
        raise InvalidParameterError(f'Cost ratio must be positive, got {max_ratio}')
    if field.shape != g1.shape:
        raise InvalidInputError(f'Field {field.shape} does not match gradient image {g1.shape}')
    sums, counts = interior_field_costs(g1, g2, field, radius, margin)
    unrelated = unrelated_sample_cost(g1, g2)
    if unrelated <= 0.0:
        return ConsistencyMap(field.valid.copy())
    ratio = np.where(counts > 0, sums / (np.maximum(counts, 1) * unrelated), 0.0)
    return ConsistencyMap(field.valid & (ratio <= max_ratio))


@njit(cache=True, nogil=True)
def _block_means(offsets, mask, eta, height, width):
    src_h, src_w = mask.shape
    out = np.zeros((height, width, 2), np.int32)
    valid = np.zeros((height, width), np.bool_)
    for y in range(height):
        y0 = int(math.ceil(eta * y))
        y1 = min(int(math.ceil(eta * (y + 1))), src_h)
        for x in range(width):
            x0 = int(math.ceil(eta * x))
            x1 = min(int(math.ceil(eta * (x + 1))), src_w)
            sum_dx = 0.0
            sum_dy = 0.0
            count = 0
            for sy in range(y0, y1):
                for sx in range(x0, x1):
                    if mask[sy, sx]:
                        sum_dx += offsets[sy, sx, 0]
                        sum_dy += offsets[sy, sx, 1]
                        count += 1
            if count > 0:
                out[y, x, 0] = math.floor(sum_dx / (count * eta) + 0.5)
                out[y, x, 1] = math.floor(sum_dy / (count * eta) + 0.5)
                valid[y, x] = True
    return out, valid


@njit(cache=True, nogil=True)
def _parent_values(offsets, mask, eta, height, width):
    src_h, src_w = mask.shape
    out = np.zeros((height, width, 2), np.int32)
    valid = np.zeros((height, width), np.bool_)
    for y in range(height):
        sy = min(int(math.floor(eta * y)), src_h - 1)
        for x in range(width):
            sx = min(int(math.floor(eta * x)), src_w - 1)
            if mask[sy, sx]:
                out[y, x, 0] = math.floor(offsets[sy, sx, 0] / eta + 0.5)
                out[y, x, 1] = math.floor(offsets[sy, sx, 1] / eta + 0.5)
                valid[y, x] = True
    return out, valid


def _default_target_shape(shape: Tuple[int, int], direction: Direction, factor: float) -> Tuple[int, int]:
    if direction is Direction.TO_COARSER:
        return scaled_size(shape[0], factor), scaled_size(shape[1], factor)
    return math.ceil(round(shape[0] / factor, 9)), math.ceil(round(shape[1] / factor, 9))


def _propagate_mask(offsets: np.ndarray, mask: np.ndarray, direction: Direction, factor: float,
                    target_shape: Optional[Tuple[int, int]]) -> Tuple[np.ndarray, np.ndarray]:
    direction = Direction(direction)
    if not 0.0 < factor < 1.0:
        raise InvalidParameterError(f'Propagation factor must lie in (0, 1), got {factor}')
    height, width = target_shape or _default_target_shape(mask.shape, direction, factor)
    if direction is Direction.TO_COARSER:
        return _block_means(offsets, mask, 1.0 / factor, height, width)
    return _parent_values(offsets, mask, factor, height, width)


def propagate_field(field: CorrespondenceField, record: OutlierRecord, direction: Direction, factor: float = 0.5,
                    target_shape: Optional[Tuple[int, int]] = None) -> CorrespondenceField:
    """Moves a field one level, carrying only entries that are initialized and not recorded as outliers.

    Unset record entries count as inliers.
    """
    if record.shape != field.shape:
        raise InvalidInputError(f'Record {record.shape} and field {field.shape} differ')
    mask = field.valid & record.inliers()
    offsets, valid = _propagate_mask(field.offsets, mask, direction, factor, target_shape)
    return CorrespondenceField(offsets, valid)


def propagate_outlier_record(record: OutlierRecord, direction: Direction, factor: float = 0.5,
                             target_shape: Optional[Tuple[int, int]] = None) -> OutlierRecord:
    dummy = np.zeros(record.shape + (2,), np.int32)
    _, inliers = _propagate_mask(dummy, record.inliers(), direction, factor, target_shape)
    return OutlierRecord.from_inliers(inliers)


@njit(cache=True, nogil=True)
def _small_region_mask(offsets, valid, min_region, tol):
    h, w = valid.shape
    visited = np.zeros((h, w), np.bool_)
    remove = np.zeros((h, w), np.bool_)
    stack = np.empty(h * w, np.int64)
    region = np.empty(h * w, np.int64)
    for start in range(h * w):
        sy0 = start // w
        sx0 = start % w
        if visited[sy0, sx0] or not valid[sy0, sx0]:
            continue
        visited[sy0, sx0] = True
        top = 0
        size = 0
        stack[top] = start
        top += 1
        while top > 0:
            top -= 1
            index = stack[top]
            region[size] = index
            size += 1
            y = index // w
            x = index % w
            for k in range(4):
                ny = y + (1 if k == 0 else -1 if k == 1 else 0)
                nx = x + (1 if k == 2 else -1 if k == 3 else 0)
                if ny < 0 or ny >= h or nx < 0 or nx >= w:
                    continue
                if visited[ny, nx] or not valid[ny, nx]:
                    continue
                if abs(offsets[ny, nx, 0] - offsets[y, x, 0]) > tol or abs(offsets[ny, nx, 1] - offsets[y, x, 1]) > tol:
                    continue
                visited[ny, nx] = True
                stack[top] = ny * w + nx
                top += 1
        if size < min_region:
            for i in range(size):
                remove[region[i] // w, region[i] % w] = True
    return remove


def remove_small_regions(field: CorrespondenceField, min_region: int, seg_tol: int) -> CorrespondenceField:
    """Uninitializes 4-connected regions of similar motion with fewer than ``min_region`` pixels."""
    remove = _small_region_mask(field.offsets, field.valid, min_region, seg_tol)
    log.debug(f'Removing {int(remove.sum())} pixels in regions smaller than {min_region}')
    return CorrespondenceField(field.offsets.copy(), field.valid & ~remove)


class _Side:
    def __init__(self, name: str, source: List[GradientImage], target: List[GradientImage], radius: int) -> None:
        self.name = name
        self.source = source
        self.target = target
        self.radius = radius
        self.field: Optional[CorrespondenceField] = None
        self.record: Optional[OutlierRecord] = None


class PyramidalMatcher:
    """Runs the refinement and top-down propagation schedule for one image pair."""

    def __init__(self, img1: RasterImage, img2: RasterImage, cfg: PipelineConfig) -> None:
        if img1.shape != img2.shape:
            raise InvalidInputError(f'Image sizes differ: {img1.shape} vs {img2.shape}')
        self.cfg = cfg
        self.shapes = level_shapes(img1.shape, cfg.levels, cfg.factor)
        self.diagnostics = MatchingDiagnostics()
        self._visits = 0

        def pyramid(img: RasterImage, spaces: List[ColorSpace]) -> List[GradientImage]:
            return build_gradient_pyramid(img, spaces, cfg.variant, cfg.sobel_size, cfg.levels, cfg.factor)

        self.forward = _Side('forward', pyramid(img1, cfg.spaces_fwd), pyramid(img2, cfg.spaces_fwd), cfg.radius_fwd)
        self.backward = _Side('backward', pyramid(img2, cfg.spaces_bwd), pyramid(img1, cfg.spaces_bwd),
                              cfg.radius_bwd)

    @property
    def sides(self) -> Tuple[_Side, _Side]:
        return self.forward, self.backward

    def _params(self, side: _Side, level: int) -> MatchParams:
        height, width = self.shapes[level]
        bound = max(height, width) if self.cfg.ablation is Ablation.UNLIMITED_SEARCH else self.cfg.search_bound
        iterations = self.cfg.iters_full if level == 0 else self.cfg.iters_other
        seed = self.cfg.seed + 2 * self._visits + (0 if side is self.forward else 1)
        return MatchParams(radius=side.radius, search_bound=bound, iterations=iterations, seed=seed,
                           order=self.cfg.order)

    def _match(self, side: _Side, level: int) -> CorrespondenceField:
        return basic_gradient_matching(side.source[level], side.target[level], side.field, self._params(side, level))

    def _seed(self, level: int) -> None:
        for side in self.sides:
            params = MatchParams(radius=side.radius, search_bound=self.cfg.search_bound, seed=self.cfg.seed)
            side.field = seed_initial_field(side.source[level], side.target[level], params)
            side.record = OutlierRecord.unset(*self.shapes[level])

    def visit(self, level: int, stage: str) -> None:
        """Basic matching, consistency check and record update at one level for both directions."""
        if self.cfg.parallel_directions:
            with ThreadPoolExecutor(max_workers=2) as executor:
                fields = list(executor.map(lambda side: self._match(side, level), self.sides))
        else:
            fields = [self._match(side, level) for side in self.sides]
        self._visits += 1
        self.forward.field, self.backward.field = fields

        check_fwd = consistency_check(self.forward.field, self.backward.field, self.cfg.eps_check)
        check_bwd = consistency_check(self.backward.field, self.forward.field, self.cfg.eps_check)
        self.forward.record = update_outlier_record(self.forward.record, check_fwd)
        self.backward.record = update_outlier_record(self.backward.record, check_bwd)

        self.diagnostics.consistency.append((level, check_fwd))
        report = LevelReport(stage=stage, level=level, inliers=self.forward.record.inlier_count,
                             pixels=check_fwd.passed.size, backward_inliers=self.backward.record.inlier_count)
        self.diagnostics.reports.append(report)
        log.debug(f'{stage} level {level}: {report.inliers}/{report.pixels} forward inliers, '
                  f'{report.backward_inliers} backward inliers')

    def move(self, source_level: int, target_level: int, with_record: bool) -> None:
        direction = Direction.TO_COARSER if target_level > source_level else Direction.TO_FINER
        target_shape = self.shapes[target_level]
        for side in self.sides:
            if self.cfg.ablation is Ablation.PROPAGATE_ALL:
                gate = OutlierRecord.unset(*side.record.shape)
            else:
                gate = side.record
            field = propagate_field(side.field, gate, direction, self.cfg.factor, target_shape)
            side.field = field.clamp_to_bounds(target_shape)
            if with_record and self.cfg.ablation is not Ablation.NO_RECORD:
                side.record = propagate_outlier_record(side.record, direction, self.cfg.factor, target_shape)
            else:
                side.record = OutlierRecord.unset(*target_shape)

    def run(self) -> Tuple[CorrespondenceField, MatchingDiagnostics]:
        cfg = self.cfg
        m = cfg.start_level
        refinements = 0 if cfg.ablation is Ablation.NO_REFINEMENT else cfg.refinements
        log.info(f'Pyramidal matching {self.shapes[0][1]}x{self.shapes[0][0]}, variant {cfg.variant.value}, '
                 f'ablation {cfg.ablation.value}, seed {cfg.seed}')

        self._seed(m)
        for _ in range(refinements):
            self.visit(m, 'refine')
            self.move(m, m - 1, with_record=True)
            self.visit(m - 1, 'refine')
            self.move(m - 1, m, with_record=True)
        self.visit(m, 'refine')
        self.move(m, m - 1, with_record=False)

        for level in range(m - 1, 0, -1):
            self.visit(level, 'propagate')
            self.move(level, level - 1, with_record=True)
        self.visit(0, 'final')

        forward = self.forward
        self.diagnostics.unfiltered = forward.field.copy()
        self.diagnostics.final_record = forward.record
        keep = forward.field.valid & forward.record.inliers()
        if cfg.max_cost_ratio is not None:
            check = cost_check(forward.source[0], forward.target[0], forward.field, forward.radius, cfg.max_cost_ratio,
                               margin=cfg.sobel_size // 2)
            self.diagnostics.cost_check = check
            log.debug(f'Cost check passed {check.pass_count}/{forward.field.initialized_count} final entries')
            keep &= check.passed
        filtered = CorrespondenceField(forward.field.offsets.copy(), keep)
        result = remove_small_regions(filtered, cfg.min_region, cfg.seg_tol)
        log.info(f'Final field: {result.initialized_count}/{result.height * result.width} pixels kept')
        return result, self.diagnostics


def pyramidal_matching(img1: RasterImage, img2: RasterImage,
                       cfg: PipelineConfig) -> Tuple[CorrespondenceField, MatchingDiagnostics]:
    return PyramidalMatcher(img1, img2, cfg).run()
