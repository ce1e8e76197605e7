#!/usr/bin/env python3
# -*- coding: utf-8 -*-
import math
import logger
from dataclasses import dataclass
from typing import Optional, Sequence, Set, Tuple

import numpy as np
from numba import njit
from pydantic import Field

from .common import SerializableBaseModel, PropagationOrder, InvalidInputError, InvalidParameterError
from .imgproc import GradientImage

log = logger.get_logger(__name__)

Position = Tuple[int, int]
Offset = Tuple[int, int]

# (sign of Δx, sign of Δy) per sweep
PHASES = {
    PropagationOrder.FLOWFIELDS: np.array([[1, 1], [-1, -1], [-1, 1], [1, -1]], dtype=np.int64),
    PropagationOrder.PATCHMATCH: np.array([[1, 1], [-1, -1]], dtype=np.int64),
}

# SplitMix64
_GOLDEN_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_MIX_1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX_2 = np.uint64(0x94D049BB133111EB)
_UNIT_SCALE = 1.0 / 9007199254740992.0

# how the kernels read a gradient image
DENSE_COST = 0
SIGN_PAIR_COST = 1
SIGN_BIT_COST = 2

_PAIR_CHANNELS = 2
_PAIR_SHIFT = 2 * _PAIR_CHANNELS
_BIT_CHANNELS = 6
_BIT_MASK = (1 << _BIT_CHANNELS) - 1


def _sign_pair_table(channels: int) -> np.ndarray:
    """Squared sign distance for every pair of packed codes, indexed by (a << 2C) | b."""
    codes = np.arange(1 << (2 * channels))
    bits = (codes[:, np.newaxis] >> np.arange(2 * channels)) & 1
    signs = bits[:, :channels] - bits[:, channels:]
    diff = signs[:, np.newaxis, :] - signs[np.newaxis, :, :]
    return (diff ** 2).sum(axis=2).astype(np.uint8).ravel()


_SIGN_PAIR_TABLE = _sign_pair_table(_PAIR_CHANNELS)
_BIT_COUNT = np.array([bin(code).count('1') for code in range(1 << (2 * _BIT_CHANNELS))], dtype=np.uint8)


def cost_kind(g: GradientImage) -> int:
    if g.codes is None:
        return DENSE_COST
    return SIGN_PAIR_COST if g.channels == _PAIR_CHANNELS else SIGN_BIT_COST


@dataclass
class CorrespondenceField:
    """Integer offsets (dx, dy) per source pixel; ``valid`` False marks an uninitialized entry."""

    offsets: np.ndarray
    valid: np.ndarray

    def __post_init__(self) -> None:
        offsets = np.asarray(self.offsets, dtype=np.int32)
        valid = np.asarray(self.valid, dtype=np.bool_)
        if offsets.ndim != 3 or offsets.shape[2] != 2 or offsets.shape[:2] != valid.shape:
            raise InvalidInputError(f'Field arrays disagree: offsets {offsets.shape}, valid {valid.shape}')
        self.offsets = np.ascontiguousarray(offsets)
        self.valid = np.ascontiguousarray(valid)

    @classmethod
    def uninitialized(cls, height: int, width: int) -> 'CorrespondenceField':
        return cls(np.zeros((height, width, 2), np.int32), np.zeros((height, width), np.bool_))

    @classmethod
    def constant(cls, height: int, width: int, dx: int, dy: int) -> 'CorrespondenceField':
        offsets = np.empty((height, width, 2), np.int32)
        offsets[..., 0] = dx
        offsets[..., 1] = dy
        return cls(offsets, np.ones((height, width), np.bool_))

    @classmethod
    def random(cls, height: int, width: int, target_shape: Tuple[int, int], seed: int = 0) -> 'CorrespondenceField':
        """Every pixel mapped to a uniformly drawn target inside ``target_shape`` = (height, width)."""
        rng = np.random.default_rng(seed)
        ys, xs = np.mgrid[0:height, 0:width]
        offsets = np.empty((height, width, 2), np.int32)
        offsets[..., 0] = rng.integers(0, target_shape[1], size=(height, width)) - xs
        offsets[..., 1] = rng.integers(0, target_shape[0], size=(height, width)) - ys
        return cls(offsets, np.ones((height, width), np.bool_))

    @property
    def height(self) -> int:
        return self.valid.shape[0]

    @property
    def width(self) -> int:
        return self.valid.shape[1]

    @property
    def shape(self) -> Tuple[int, int]:
        return self.height, self.width

    @property
    def initialized_count(self) -> int:
        return int(self.valid.sum())

    def get(self, x: int, y: int) -> Optional[Offset]:
        if not self.valid[y, x]:
            return None
        return int(self.offsets[y, x, 0]), int(self.offsets[y, x, 1])

    def copy(self) -> 'CorrespondenceField':
        return CorrespondenceField(self.offsets.copy(), self.valid.copy())

    def clamp_to_bounds(self, shape: Tuple[int, int]) -> 'CorrespondenceField':
        """Moves every target p + F(p) inside a target image of ``shape`` = (height, width)."""
        height, width = shape
        ys, xs = np.mgrid[0:self.height, 0:self.width]
        offsets = self.offsets.copy()
        offsets[..., 0] = np.clip(xs + offsets[..., 0], 0, width - 1) - xs
        offsets[..., 1] = np.clip(ys + offsets[..., 1], 0, height - 1) - ys
        offsets[~self.valid] = 0
        return CorrespondenceField(offsets, self.valid.copy())


class MatchParams(SerializableBaseModel):
    radius: int = Field(default=7, ge=1)
    search_bound: int = Field(default=2, ge=1)
    iterations: int = Field(default=4, ge=1)
    seed: int = Field(default=0, ge=0)
    order: PropagationOrder = PropagationOrder.FLOWFIELDS


@njit(cache=True, nogil=True)
def _next_u64(state):
    state[0] += _GOLDEN_GAMMA
    z = state[0]
    z = (z ^ (z >> np.uint64(30))) * _MIX_1
    z = (z ^ (z >> np.uint64(27))) * _MIX_2
    return z ^ (z >> np.uint64(31))


@njit(cache=True, nogil=True)
def _next_unit(state):
    # uniform on [0, 1)
    return (_next_u64(state) >> np.uint64(11)) * _UNIT_SCALE


@njit(cache=True, nogil=True)
def _skip_draws(state, count):
    for _ in range(count):
        _next_u64(state)


@njit(cache=True, nogil=True)
def _scale_count(bound):
    count = 0
    while (1 << count) <= bound:
        count += 1
    return count


@njit(cache=True, nogil=True)
def _draw_step(state, reach, low, high):
    # floor(v) for v uniform on [-reach, reach) cut to [low, high + 1)
    start = max(-reach, float(low))
    stop = min(reach, high + 1.0)
    return math.floor(start + _next_unit(state) * (stop - start))


@njit(cache=True, nogil=True)
def _draw_search_steps(state, bound):
    count = _scale_count(bound)
    steps = np.empty((count, 2), np.int64)
    for i in range(count):
        reach = bound / (1 << i)
        steps[i, 0] = _draw_step(state, reach, -bound - 1, bound + 1)
        steps[i, 1] = _draw_step(state, reach, -bound - 1, bound + 1)
    return steps


@njit(cache=True, nogil=True)
def _dense_patch_cost(g1, g2, xa, ya, xb, yb, radius):
    h1, w1, channels = g1.shape
    h2, w2 = g2.shape[0], g2.shape[1]
    total = 0.0
    for oy in range(-radius, radius + 1):
        y1 = min(max(ya + oy, 0), h1 - 1)
        y2 = min(max(yb + oy, 0), h2 - 1)
        for ox in range(-radius, radius + 1):
            x1 = min(max(xa + ox, 0), w1 - 1)
            x2 = min(max(xb + ox, 0), w2 - 1)
            for c in range(channels):
                d = float(g1[y1, x1, c]) - float(g2[y2, x2, c])
                total += d * d
    return total


@njit(cache=True, nogil=True)
def _sign_patch_cost(g1, g2, xa, ya, xb, yb, radius, kind):
    h1, w1 = g1.shape[0], g1.shape[1]
    h2, w2 = g2.shape[0], g2.shape[1]
    total = 0
    for oy in range(-radius, radius + 1):
        y1 = min(max(ya + oy, 0), h1 - 1)
        y2 = min(max(yb + oy, 0), h2 - 1)
        if kind == SIGN_PAIR_COST:
            for ox in range(-radius, radius + 1):
                x1 = min(max(xa + ox, 0), w1 - 1)
                x2 = min(max(xb + ox, 0), w2 - 1)
                total += _SIGN_PAIR_TABLE[(np.int64(g1[y1, x1, 0]) << _PAIR_SHIFT) | np.int64(g2[y2, x2, 0])]
        else:
            for ox in range(-radius, radius + 1):
                x1 = min(max(xa + ox, 0), w1 - 1)
                x2 = min(max(xb + ox, 0), w2 - 1)
                a = np.int64(g1[y1, x1, 0])
                b = np.int64(g2[y2, x2, 0])
                # opposite signs differ in two bits and add 2 more
                crossed = (a & (b >> _BIT_CHANNELS)) | ((a >> _BIT_CHANNELS) & b & _BIT_MASK)
                total += _BIT_COUNT[a ^ b] + 2 * _BIT_COUNT[crossed]
    return total


@njit(cache=True, nogil=True)
def _patch_cost(g1, g2, xa, ya, xb, yb, radius, kind):
    if kind == DENSE_COST:
        return _dense_patch_cost(g1, g2, xa, ya, xb, yb, radius)
    return float(_sign_patch_cost(g1, g2, xa, ya, xb, yb, radius, kind))


@njit(cache=True, nogil=True)
def _sample_cost(g1, g2, y1, x1, y2, x2, kind):
    if kind == DENSE_COST:
        total = 0.0
        for c in range(g1.shape[2]):
            d = float(g1[y1, x1, c]) - float(g2[y2, x2, c])
            total += d * d
        return total
    return float(_sign_patch_cost(g1, g2, x1, y1, x2, y2, 0, kind))


@njit(cache=True, nogil=True)
def _field_costs(g1, g2, offsets, valid, radius, kind):
    h, w = valid.shape
    costs = np.full((h, w), np.inf)
    for y in range(h):
        for x in range(w):
            if valid[y, x]:
                costs[y, x] = _patch_cost(g1, g2, x, y, x + offsets[y, x, 0], y + offsets[y, x, 1], radius, kind)
    return costs


@njit(cache=True, nogil=True)
def _interior_costs(g1, g2, offsets, valid, radius, margin, kind):
    h, w = valid.shape
    h1, w1 = g1.shape[0], g1.shape[1]
    h2, w2 = g2.shape[0], g2.shape[1]
    sums = np.zeros((h, w))
    counts = np.zeros((h, w), np.int64)
    for y in range(h):
        for x in range(w):
            if not valid[y, x]:
                continue
            xb = x + offsets[y, x, 0]
            yb = y + offsets[y, x, 1]
            for oy in range(-radius, radius + 1):
                y1 = y + oy
                y2 = yb + oy
                if y1 < margin or y1 >= h1 - margin or y2 < margin or y2 >= h2 - margin:
                    continue
                for ox in range(-radius, radius + 1):
                    x1 = x + ox
                    x2 = xb + ox
                    if x1 < margin or x1 >= w1 - margin or x2 < margin or x2 >= w2 - margin:
                        continue
                    sums[y, x] += _sample_cost(g1, g2, y1, x1, y2, x2, kind)
                    counts[y, x] += 1
    return sums, counts


@njit(cache=True, nogil=True)
def _propagate(g1, g2, offsets, valid, costs, x, y, step_x, step_y, radius, kind):
    h, w = valid.shape
    h2, w2 = g2.shape[0], g2.shape[1]
    found = valid[y, x]
    best_dx = offsets[y, x, 0]
    best_dy = offsets[y, x, 1]
    best_cost = costs[y, x]
    for k in range(2):
        nx = x - step_x if k == 0 else x
        ny = y if k == 0 else y - step_y
        if nx < 0 or nx >= w or ny < 0 or ny >= h or not valid[ny, nx]:
            continue
        dx = offsets[ny, nx, 0]
        dy = offsets[ny, nx, 1]
        tx = x + dx
        ty = y + dy
        if tx < 0 or tx >= w2 or ty < 0 or ty >= h2:
            continue
        if found and dx == best_dx and dy == best_dy:
            continue
        cost = _patch_cost(g1, g2, x, y, tx, ty, radius, kind)
        if not found or cost < best_cost:
            found = True
            best_dx = dx
            best_dy = dy
            best_cost = cost
    if found:
        offsets[y, x, 0] = best_dx
        offsets[y, x, 1] = best_dy
        valid[y, x] = True
        costs[y, x] = best_cost


@njit(cache=True, nogil=True)
def _random_search(g1, g2, offsets, valid, costs, x, y, bound, radius, kind, state):
    count = _scale_count(bound)
    if not valid[y, x]:
        _skip_draws(state, 2 * count)
        return
    h2, w2 = g2.shape[0], g2.shape[1]
    best_dx = offsets[y, x, 0]
    best_dy = offsets[y, x, 1]
    best_cost = costs[y, x]
    for i in range(count):
        reach = bound / (1 << i)
        cx = x + best_dx
        cy = y + best_dy
        # steps are drawn inside the target image
        step_x = _draw_step(state, reach, -cx, w2 - 1 - cx)
        step_y = _draw_step(state, reach, -cy, h2 - 1 - cy)
        if step_x == 0 and step_y == 0:
            continue
        tx = cx + step_x
        ty = cy + step_y
        if tx < 0 or tx >= w2 or ty < 0 or ty >= h2:
            continue
        cost = _patch_cost(g1, g2, x, y, tx, ty, radius, kind)
        if cost < best_cost:
            best_dx = tx - x
            best_dy = ty - y
            best_cost = cost
    offsets[y, x, 0] = best_dx
    offsets[y, x, 1] = best_dy
    costs[y, x] = best_cost


@njit(cache=True, nogil=True)
def _match_sweeps(g1, g2, offsets, valid, costs, radius, bound, iterations, phases, kind, state):
    h, w = valid.shape
    for sweep in range(iterations):
        step_x = phases[sweep % phases.shape[0], 0]
        step_y = phases[sweep % phases.shape[0], 1]
        for yi in range(h):
            y = yi if step_y > 0 else h - 1 - yi
            for xi in range(w):
                x = xi if step_x > 0 else w - 1 - xi
                _propagate(g1, g2, offsets, valid, costs, x, y, step_x, step_y, radius, kind)
                _random_search(g1, g2, offsets, valid, costs, x, y, bound, radius, kind, state)


@njit(cache=True, nogil=True)
def _exhaustive(g1, g2, radius, prefer_small, kind):
    h, w = g1.shape[0], g1.shape[1]
    h2, w2 = g2.shape[0], g2.shape[1]
    offsets = np.zeros((h, w, 2), np.int32)
    costs = np.empty((h, w))
    for y in range(h):
        for x in range(w):
            best_cost = np.inf
            best_norm = 0
            for ty in range(h2):
                for tx in range(w2):
                    cost = _patch_cost(g1, g2, x, y, tx, ty, radius, kind)
                    norm = (tx - x) * (tx - x) + (ty - y) * (ty - y)
                    if cost < best_cost or (prefer_small and cost == best_cost and norm < best_norm):
                        best_cost = cost
                        best_norm = norm
                        offsets[y, x, 0] = tx - x
                        offsets[y, x, 1] = ty - y
            costs[y, x] = best_cost
    return offsets, costs


class PixelRng:
    """Seedable SplitMix64 stream shared with the compiled matching kernels."""

    def __init__(self, seed: int = 0) -> None:
        self.state = np.array([seed], dtype=np.uint64)

    def search_steps(self, bound: int) -> np.ndarray:
        """One step per scale with no image to stay inside of."""
        return _draw_search_steps(self.state, bound)


def search_step_range(bound: int, scale: int) -> Set[int]:
    """Every value floor(R * bound / 2**scale) can take for R in [-1, 1]."""
    reach = bound / (1 << scale)
    return set(range(math.floor(-reach), math.floor(reach) + 1))


def search_scale_count(bound: int) -> int:
    return int(_scale_count(bound))


def _check_pair(g1: GradientImage, g2: GradientImage) -> None:
    if g1.channels != g2.channels:
        raise InvalidInputError(f'Gradient channel counts differ: {g1.channels} vs {g2.channels}')
    if cost_kind(g1) != cost_kind(g2):
        raise InvalidInputError(f'Cannot compare {g1.variant.value} and {g2.variant.value} gradients')


def _check_position(name: str, position: Position, shape: Tuple[int, int]) -> None:
    x, y = position
    if not (0 <= x < shape[1] and 0 <= y < shape[0]):
        raise InvalidInputError(f'{name} {position} outside image of shape {shape}')


def patch_distance(g1: GradientImage, g2: GradientImage, pa: Position, pb: Position, radius: int) -> float:
    _check_pair(g1, g2)
    _check_position('pa', pa, g1.shape)
    _check_position('pb', pb, g2.shape)
    return float(_patch_cost(g1.samples, g2.samples, pa[0], pa[1], pb[0], pb[1], radius, cost_kind(g1)))


def _pixel_costs(g1: GradientImage, g2: GradientImage, field: CorrespondenceField, pa: Position,
                 radius: int) -> np.ndarray:
    costs = np.full(field.shape, np.inf)
    x, y = pa
    if field.valid[y, x]:
        costs[y, x] = _patch_cost(g1.samples, g2.samples, x, y, x + field.offsets[y, x, 0], y + field.offsets[y, x, 1],
                                  radius, cost_kind(g1))
    return costs


def propagate_pixel(field: CorrespondenceField, g1: GradientImage, g2: GradientImage, pa: Position,
                    step_x: int, step_y: int, radius: int) -> Optional[Offset]:
    """Updates F(pa) in place from Ω = {F(pa), F(pa - Δx) + Δx, F(pa - Δy) + Δy}; Δx = (step_x, 0), Δy = (0, step_y)."""
    _check_pair(g1, g2)
    _check_position('pa', pa, field.shape)
    costs = _pixel_costs(g1, g2, field, pa, radius)
    _propagate(g1.samples, g2.samples, field.offsets, field.valid, costs, pa[0], pa[1], step_x, step_y, radius,
               cost_kind(g1))
    return field.get(*pa)


def random_search_pixel(field: CorrespondenceField, g1: GradientImage, g2: GradientImage, pa: Position,
                        bound: int, radius: int, rng: PixelRng) -> Optional[Offset]:
    """Tries one step per scale around the best offset so far; steps never leave the target image."""
    _check_pair(g1, g2)
    _check_position('pa', pa, field.shape)
    costs = _pixel_costs(g1, g2, field, pa, radius)
    _random_search(g1.samples, g2.samples, field.offsets, field.valid, costs, pa[0], pa[1], bound, radius,
                   cost_kind(g1), rng.state)
    return field.get(*pa)


def field_costs(g1: GradientImage, g2: GradientImage, field: CorrespondenceField, radius: int) -> np.ndarray:
    """Per-pixel patch cost of the field; +inf where uninitialized."""
    _check_pair(g1, g2)
    return _field_costs(g1.samples, g2.samples, field.offsets, field.valid, radius, cost_kind(g1))


def interior_field_costs(g1: GradientImage, g2: GradientImage, field: CorrespondenceField, radius: int,
                         margin: int) -> Tuple[np.ndarray, np.ndarray]:
    """Per-pixel patch cost summed over samples at least ``margin`` pixels inside both images, and their count."""
    _check_pair(g1, g2)
    return _interior_costs(g1.samples, g2.samples, field.offsets, field.valid, radius, margin, cost_kind(g1))


def unrelated_sample_cost(g1: GradientImage, g2: GradientImage) -> float:
    """Expected squared difference of one sample pair drawn from independent positions."""
    _check_pair(g1, g2)
    first = g1.as_float().reshape(-1, g1.channels)
    second = g2.as_float().reshape(-1, g2.channels)
    mean_gap = first.mean(axis=0) - second.mean(axis=0)
    return float((first.var(axis=0) + second.var(axis=0) + mean_gap ** 2).sum())


def basic_gradient_matching(g1: GradientImage, g2: GradientImage, init: CorrespondenceField,
                            params: MatchParams) -> CorrespondenceField:
    _check_pair(g1, g2)
    if init.shape != g1.shape:
        raise InvalidInputError(f'Initial field {init.shape} does not match gradient image {g1.shape}')

    kind = cost_kind(g1)
    field = init.copy()
    costs = _field_costs(g1.samples, g2.samples, field.offsets, field.valid, params.radius, kind)
    state = np.array([params.seed], dtype=np.uint64)
    _match_sweeps(g1.samples, g2.samples, field.offsets, field.valid, costs, params.radius, params.search_bound,
                  params.iterations, PHASES[params.order], kind, state)
    log.debug(f'Matched {field.initialized_count}/{field.height * field.width} pixels '
              f'at {field.width}x{field.height} in {params.iterations} sweeps')
    return field


def exhaustive_match_oracle(g1: GradientImage, g2: GradientImage, radius: int) -> CorrespondenceField:
    """Global argmin over every target; ties go to the first target in row-major order."""
    _check_pair(g1, g2)
    offsets, _ = _exhaustive(g1.samples, g2.samples, radius, False, cost_kind(g1))
    return CorrespondenceField(offsets, np.ones(g1.shape, np.bool_))


def exhaustive_match_smallest(g1: GradientImage, g2: GradientImage, radius: int) -> CorrespondenceField:
    """Like the oracle, but ties go to the smallest offset magnitude."""
    _check_pair(g1, g2)
    offsets, _ = _exhaustive(g1.samples, g2.samples, radius, True, cost_kind(g1))
    return CorrespondenceField(offsets, np.ones(g1.shape, np.bool_))


def stability_map(g1: GradientImage, g2: GradientImage, init: CorrespondenceField, params: MatchParams,
                  seeds: Sequence[int]) -> np.ndarray:
    """Largest pairwise endpoint distance between fields matched from ``init`` with different seeds.

    Pixels initialized in some runs but not in others get +inf.
    """
    if not seeds:
        raise InvalidParameterError('At least one seed is required')
    fields = [basic_gradient_matching(g1, g2, init, params.model_copy(update={'seed': seed})) for seed in seeds]
    spread = np.zeros(init.shape)
    for i, first in enumerate(fields):
        for second in fields[i + 1:]:
            both = first.valid & second.valid
            diff = (first.offsets - second.offsets).astype(np.float64)
            distance = np.where(both, np.hypot(diff[..., 0], diff[..., 1]), 0.0)
            distance[first.valid != second.valid] = np.inf
            spread = np.maximum(spread, distance)
    return spread
