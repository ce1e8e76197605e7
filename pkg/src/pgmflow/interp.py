#!/usr/bin/env python3
# -*- coding: utf-8 -*-
import logger
from dataclasses import dataclass
from decimal import Decimal
from pathlib import Path
from typing import Tuple, Union

import numpy as np
from scipy.spatial import cKDTree

from .common import InterpMode, InvalidInputError, InvalidParameterError, MatchFormatError
from .matcher import CorrespondenceField

log = logger.get_logger(__name__)

DENSITY_THRESHOLD = 0.022
DEFAULT_NEIGHBORS = 25
MAX_CONDITION = 1e8
QUERY_CHUNK = 1 << 16


@dataclass
class MatchSet:
    """Rows of (x1, y1, x2, y2): source pixel to target pixel."""

    rows: np.ndarray

    def __post_init__(self) -> None:
        rows = np.asarray(self.rows, dtype=np.int64).reshape(-1, 4)
        if len(np.unique(rows[:, :2], axis=0)) != len(rows):
            raise InvalidInputError('Match sources must be unique')
        self.rows = np.ascontiguousarray(rows)

    @classmethod
    def empty(cls) -> 'MatchSet':
        return cls(np.zeros((0, 4), np.int64))

    def __len__(self) -> int:
        return len(self.rows)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, MatchSet) and np.array_equal(self.rows, other.rows)

    @property
    def sources(self) -> np.ndarray:
        return self.rows[:, :2]

    @property
    def targets(self) -> np.ndarray:
        return self.rows[:, 2:]

    @property
    def displacements(self) -> np.ndarray:
        return self.targets - self.sources


@dataclass
class FlowField:
    """Dense (u, v) per pixel, float32 of shape (height, width, 2)."""

    data: np.ndarray

    def __post_init__(self) -> None:
        data = np.asarray(self.data, dtype=np.float32)
        if data.ndim != 3 or data.shape[2] != 2:
            raise InvalidInputError(f'Flow must have shape (H, W, 2), got {data.shape}')
        if not np.isfinite(data).all():
            raise InvalidInputError('Flow values must be finite')
        self.data = np.ascontiguousarray(data)

    @classmethod
    def constant(cls, height: int, width: int, u: float, v: float) -> 'FlowField':
        data = np.empty((height, width, 2), np.float32)
        data[..., 0] = u
        data[..., 1] = v
        return cls(data)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> Tuple[int, int]:
        return self.height, self.width

    @property
    def u(self) -> np.ndarray:
        return self.data[..., 0]

    @property
    def v(self) -> np.ndarray:
        return self.data[..., 1]


def sparsify_to_grid(field: CorrespondenceField, spacing: int = 3) -> MatchSet:
    """One match per initialized entry on the (x % spacing == 0, y % spacing == 0) lattice, row-major.

    Entries whose target falls outside the field's own extent are dropped.
    """
    if spacing < 1:
        raise InvalidParameterError(f'Grid spacing must be >= 1, got {spacing}')
    ys, xs = np.mgrid[0:field.height:spacing, 0:field.width:spacing]
    ys, xs = ys.ravel(), xs.ravel()
    keep = field.valid[ys, xs]
    ys, xs = ys[keep], xs[keep]
    tx = xs + field.offsets[ys, xs, 0]
    ty = ys + field.offsets[ys, xs, 1]
    inside = (tx >= 0) & (tx < field.width) & (ty >= 0) & (ty < field.height)
    if not inside.all():
        log.debug(f'Dropping {int((~inside).sum())} grid matches with out-of-bounds targets')
    rows = np.stack([xs, ys, tx, ty], axis=1)[inside]
    return MatchSet(rows)


def select_interpolator(match_count: int, width: int, height: int,
                        threshold: float = DENSITY_THRESHOLD) -> InterpMode:
    # Decimal keeps 0.022 * 10000 at exactly 220
    if Decimal(match_count) > Decimal(str(threshold)) * width * height:
        return InterpMode.LA
    return InterpMode.NW


def _gaussian_weights(distances: np.ndarray) -> np.ndarray:
    sigma = np.maximum(np.median(distances, axis=1, keepdims=True), 1.0)
    squared = distances ** 2
    return np.exp(-(squared - squared.min(axis=1, keepdims=True)) / (2.0 * sigma ** 2))


def _nw_estimate(weights: np.ndarray, neighbor_disp: np.ndarray) -> np.ndarray:
    return (weights[..., np.newaxis] * neighbor_disp).sum(axis=1) / weights.sum(axis=1)[:, np.newaxis]


def _la_estimate(points: np.ndarray, weights: np.ndarray, neighbor_src: np.ndarray,
                 neighbor_disp: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Weighted affine fit in coordinates centered on each pixel; the intercept is the pixel's flow."""
    local = neighbor_src - points[:, np.newaxis, :]
    design = np.concatenate([np.ones(local.shape[:2] + (1,)), local], axis=2)
    weighted = design * weights[..., np.newaxis]
    normal = np.einsum('pki,pkj->pij', weighted, design)
    rhs = np.einsum('pki,pkc->pic', weighted, neighbor_disp)

    solvable = np.linalg.cond(normal) < MAX_CONDITION
    flow = np.zeros((len(points), 2))
    if solvable.any():
        flow[solvable] = np.linalg.solve(normal[solvable], rhs[solvable])[:, 0, :]
    return flow, solvable


def densify(matches: MatchSet, width: int, height: int, mode: InterpMode = InterpMode.NW,
            k: int = DEFAULT_NEIGHBORS) -> FlowField:
    """Euclidean sparse-to-dense interpolation over the k nearest matches.

    NW averages neighbor displacements with Gaussian weights whose bandwidth is the median neighbor distance
    (at least one pixel). LA fits a weighted affine motion per pixel and falls back to NW where the fit is
    ill-conditioned.
    """
    mode = InterpMode(mode)
    if len(matches) == 0:
        raise InvalidInputError('Cannot densify an empty match set')
    if k < 1:
        raise InvalidParameterError(f'Neighbor count must be >= 1, got {k}')

    sources = matches.sources.astype(np.float64)
    disp = matches.displacements.astype(np.float64)
    neighbors = min(k, len(matches))
    tree = cKDTree(sources)

    ys, xs = np.mgrid[0:height, 0:width]
    points = np.stack([xs.ravel(), ys.ravel()], axis=1).astype(np.float64)
    flow = np.empty((len(points), 2))
    fallbacks = 0
    for start in range(0, len(points), QUERY_CHUNK):
        chunk = points[start:start + QUERY_CHUNK]
        distances, index = tree.query(chunk, k=neighbors)
        distances = distances.reshape(len(chunk), neighbors)
        index = index.reshape(len(chunk), neighbors)
        weights = _gaussian_weights(distances)
        estimate = _nw_estimate(weights, disp[index])
        if mode is InterpMode.LA and neighbors >= 3:
            fitted, solvable = _la_estimate(chunk, weights, sources[index], disp[index])
            estimate[solvable] = fitted[solvable]
            fallbacks += int((~solvable).sum())
        elif mode is InterpMode.LA:
            fallbacks += len(chunk)
        flow[start:start + len(chunk)] = estimate

    if fallbacks:
        log.warning(f'Affine fit degenerate at {fallbacks} pixels, used weighted average there')
    log.info(f'Densified {len(matches)} matches to {width}x{height} ({mode.value}, k={neighbors})')
    return FlowField(flow.reshape(height, width, 2))


def export_matches(matches: MatchSet, path: Union[str, Path]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open('w', newline='\n') as fh:
        for x1, y1, x2, y2 in matches.rows.tolist():
            fh.write(f'{x1} {y1} {x2} {y2}\n')
    log.info(f'Wrote {len(matches)} matches to {path}')


def import_matches(path: Union[str, Path]) -> MatchSet:
    """Reads ``x1 y1 x2 y2`` lines; blank lines are skipped, anything else malformed raises MatchFormatError."""
    rows = []
    seen = set()
    with Path(path).open() as fh:
        for number, line in enumerate(fh, start=1):
            fields = line.split()
            if not fields:
                continue
            if len(fields) != 4:
                raise MatchFormatError(f'{path}:{number}: expected 4 integers, got {len(fields)} fields',
                                       line=number)
            try:
                row = tuple(int(value) for value in fields)
            except ValueError:
                raise MatchFormatError(f'{path}:{number}: non-integer value in {line.strip()!r}', line=number)
            if row[:2] in seen:
                raise MatchFormatError(f'{path}:{number}: duplicate source {row[:2]}', line=number)
            seen.add(row[:2])
            rows.append(row)
    return MatchSet(np.array(rows, np.int64).reshape(-1, 4))
