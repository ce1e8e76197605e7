#!/usr/bin/env python3
# -*- coding: utf-8 -*-
import time
import logger
from dataclasses import dataclass
from pathlib import Path
from typing import List, Literal

from pydantic import Field

from .common import SerializableBaseModel, InterpMode, InvalidInputError
from .imgproc import RasterImage
from .interp import MatchSet, FlowField, DENSITY_THRESHOLD, DEFAULT_NEIGHBORS, sparsify_to_grid, select_interpolator, \
    densify
from .matcher import CorrespondenceField
from .pyramid_flow import PipelineConfig, MatchingDiagnostics, pyramidal_matching

log = logger.get_logger(__name__)


class RunConfig(SerializableBaseModel):
    pipeline: PipelineConfig = Field(default_factory=PipelineConfig)
    spacing: int = Field(default=3, ge=1)
    interp: Literal['auto', 'nw', 'la'] = 'auto'
    threshold: float = Field(default=DENSITY_THRESHOLD, ge=0.0)
    neighbors: int = Field(default=DEFAULT_NEIGHBORS, ge=1)
    inputs: List[Path] = Field(default_factory=list)
    outputs: List[Path] = Field(default_factory=list)

    def check_paths(self) -> None:
        for path in self.inputs:
            if not path.is_file():
                raise FileNotFoundError(f'Input file not found: {path}')
        for path in self.outputs:
            if path.is_dir():
                raise IsADirectoryError(f'Output path is a directory: {path}')

    def interpolator(self, match_count: int, width: int, height: int) -> InterpMode:
        if self.interp == 'auto':
            return select_interpolator(match_count, width, height, self.threshold)
        return InterpMode(self.interp)


@dataclass
class MatchResult:
    field: CorrespondenceField
    diagnostics: MatchingDiagnostics
    matches: MatchSet
    seconds: float

    @property
    def inlier_ratio(self) -> float:
        return self.field.initialized_count / (self.field.height * self.field.width)


@dataclass
class FlowResult:
    match: MatchResult
    mode: InterpMode
    flow: FlowField


def run_matching(img1: RasterImage, img2: RasterImage, cfg: RunConfig) -> MatchResult:
    """Pyramidal matching plus grid sparsification; ``seconds`` covers the matching only."""
    start = time.perf_counter()
    field, diagnostics = pyramidal_matching(img1, img2, cfg.pipeline)
    seconds = time.perf_counter() - start
    matches = sparsify_to_grid(field, cfg.spacing)
    log.info(f'{len(matches)} matches at spacing {cfg.spacing}, matching took {seconds:.2f}s')
    return MatchResult(field, diagnostics, matches, seconds)


def estimate_flow(img1: RasterImage, img2: RasterImage, cfg: RunConfig) -> FlowResult:
    result = run_matching(img1, img2, cfg)
    if len(result.matches) == 0:
        raise InvalidInputError('No matches survived filtering, cannot densify')
    mode = cfg.interpolator(len(result.matches), img1.width, img1.height)
    flow = densify(result.matches, img1.width, img1.height, mode, cfg.neighbors)
    return FlowResult(result, mode, flow)
