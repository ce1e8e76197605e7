#!/usr/bin/env python3
# -*- coding: utf-8 -*-
import csv
import math
import logger
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, List, Dict, Callable, Sequence, TextIO, Tuple

import numpy as np

from .common import SerializableDataClass, GradientVariant, Ablation, InvalidInputError
from .evaluation import (FlowFile, Translation, AffineMotion, PastedOccluder, noise_image, synth_pair,
                         endpoint_metrics, count_wrong_inliers)
from .imgproc import RasterImage, read_image
from .interp import FlowField, densify
from .pipeline import RunConfig, run_matching

log = logger.get_logger(__name__)

CSV_COLUMNS = ('case', 'variant', 'ablation', 'aee', 'bad3', 'match_count', 'seconds')
DEFAULT_CASES = 10
DEFAULT_SIZE = (96, 128)
ABLATION_SET = (Ablation.FULL, Ablation.NO_REFINEMENT, Ablation.PROPAGATE_ALL, Ablation.NO_RECORD,
                Ablation.UNLIMITED_SEARCH)


@dataclass
class BenchCase:
    name: str
    img1: RasterImage
    img2: RasterImage
    gt: FlowField
    mask: np.ndarray


@dataclass
class BenchRow(SerializableDataClass):
    case: str
    variant: str
    ablation: str
    aee: float = math.nan
    bad3: float = math.nan
    match_count: int = 0
    seconds: float = 0.0
    wrong_inliers: int = 0
    error: Optional[str] = None

    @property
    def failed(self) -> bool:
        return self.error is not None


def _shifts(count: int, seed: int, limit: int = 8) -> List[Tuple[int, int]]:
    rng = np.random.default_rng(seed)
    return [tuple(int(v) for v in rng.integers(-limit, limit + 1, size=2)) for _ in range(count)]


def translation_suite(count: int = DEFAULT_CASES, shape: Tuple[int, int] = DEFAULT_SIZE,
                      seed: int = 0) -> List[BenchCase]:
    cases = []
    for index, (tx, ty) in enumerate(_shifts(count, seed)):
        base = noise_image(*shape, seed=seed + index)
        cases.append(BenchCase(f'translation_{index:02d}', *synth_pair(base, Translation(tx, ty), seed + index)))
    return cases


def occlusion_suite(count: int = DEFAULT_CASES, shape: Tuple[int, int] = DEFAULT_SIZE, seed: int = 0,
                    occluder: int = 20) -> List[BenchCase]:
    height, width = shape
    rng = np.random.default_rng(seed + 1000)
    cases = []
    for index, (tx, ty) in enumerate(_shifts(count, seed, limit=6)):
        x = int(rng.integers(10, width - occluder - 10))
        y = int(rng.integers(10, height - occluder - 10))
        base = noise_image(*shape, seed=seed + index)
        motion = PastedOccluder(tx, ty, x, y, occluder)
        cases.append(BenchCase(f'occlusion_{index:02d}', *synth_pair(base, motion, seed + index)))
    return cases


def affine_suite(count: int = DEFAULT_CASES, shape: Tuple[int, int] = DEFAULT_SIZE,
                 seed: int = 0) -> List[BenchCase]:
    height, width = shape
    rng = np.random.default_rng(seed + 2000)
    cases = []
    for index in range(count):
        angle = float(rng.uniform(-3.0, 3.0))
        scale = float(rng.uniform(0.97, 1.03))
        A = AffineMotion.rotation(angle, ((width - 1) / 2.0, (height - 1) / 2.0)).A
        A[:, :2] *= scale
        A[:, 2] += rng.uniform(-4.0, 4.0, size=2)
        base = noise_image(*shape, seed=seed + index)
        cases.append(BenchCase(f'affine_{index:02d}', *synth_pair(base, AffineMotion(A), seed + index)))
    return cases


SUITES: Dict[str, Callable[..., List[BenchCase]]] = {
    'translation': translation_suite,
    'occlusion': occlusion_suite,
    'affine': affine_suite,
}


def load_suite_dir(path: Path) -> List[BenchCase]:
    """Cases named ``<name>_1.png``, ``<name>_2.png``, ``<name>.flo`` and an optional ``<name>_mask.png``."""
    path = Path(path)
    if not path.is_dir():
        raise FileNotFoundError(f'Suite directory not found: {path}')
    cases = []
    for first in sorted(path.glob('*_1.png')):
        name = first.name[:-len('_1.png')]
        gt = FlowFile.load(path / f'{name}.flo').flow
        mask_path = path / f'{name}_mask.png'
        mask = read_image(mask_path).data[..., 0] > 0 if mask_path.is_file() else np.ones(gt.shape, np.bool_)
        cases.append(BenchCase(name, read_image(first), read_image(path / f'{name}_2.png'), gt, mask))
    if not cases:
        raise InvalidInputError(f'No cases (*_1.png) in suite directory {path}')
    return cases


def run_case(case: BenchCase, cfg: RunConfig) -> BenchRow:
    pipeline = cfg.pipeline
    row = BenchRow(case=case.name, variant=pipeline.variant.value, ablation=pipeline.ablation.value)
    try:
        result = run_matching(case.img1, case.img2, cfg)
        row.seconds = result.seconds
        row.match_count = len(result.matches)
        row.wrong_inliers = count_wrong_inliers(result.field, case.gt, case.mask)
        if row.match_count:
            mode = cfg.interpolator(row.match_count, case.img1.width, case.img1.height)
            flow = densify(result.matches, case.img1.width, case.img1.height, mode, cfg.neighbors)
            metrics = endpoint_metrics(flow, case.gt, case.mask)
            row.aee, row.bad3 = metrics.aee, metrics.bad_ratio
    except Exception as e:
        log.exception(f'Case {case.name} ({row.variant}, {row.ablation}) failed')
        row.error = f'{type(e).__name__}: {e}'
    log.info(f'Case {case.name} {row.variant}/{row.ablation}: AEE {row.aee:.3f}, {row.match_count} matches, '
             f'{row.seconds:.2f}s')
    return row


def bench_configs(cfg: RunConfig, variants: Sequence[GradientVariant],
                  ablations: Sequence[Ablation]) -> List[RunConfig]:
    configs = []
    for variant in variants:
        base = cfg.pipeline if GradientVariant(variant) is cfg.pipeline.variant else cfg.pipeline.for_variant(variant)
        for ablation in ablations:
            configs.append(cfg.model_copy(update={'pipeline': base.with_ablation(ablation)}))
    return configs


def run_bench(cases: Sequence[BenchCase], configs: Sequence[RunConfig], workers: int = 1) -> List[BenchRow]:
    """Every case under every config; rows come back ordered by case name, then config order."""
    jobs = [(case, index, cfg) for case in cases for index, cfg in enumerate(configs)]
    log.info(f'Running {len(jobs)} bench jobs on {workers} worker(s)')
    with ThreadPoolExecutor(max_workers=max(1, workers)) as executor:
        rows = list(executor.map(lambda job: run_case(job[0], job[2]), jobs))
    order = sorted(range(len(jobs)), key=lambda i: (jobs[i][0].name, jobs[i][1]))
    return [rows[i] for i in order]


def write_csv(rows: Sequence[BenchRow], fh: TextIO) -> None:
    writer = csv.writer(fh, lineterminator='\n')
    writer.writerow(CSV_COLUMNS)
    for row in rows:
        writer.writerow([row.case, row.variant, row.ablation, f'{row.aee:.3f}', f'{row.bad3:.4f}', row.match_count,
                         f'{row.seconds:.3f}'])


def format_table(rows: Sequence[BenchRow]) -> str:
    header = f'{"case":<16} {"variant":<7} {"ablation":<16} {"AEE":>8} {"bad3":>7} {"matches":>7} ' \
             f'{"wrong":>6} {"seconds":>8}'
    lines = [header, '-' * len(header)]
    for row in rows:
        if row.failed:
            lines.append(f'{row.case:<16} {row.variant:<7} {row.ablation:<16} FAILED {row.error}')
            continue
        lines.append(f'{row.case:<16} {row.variant:<7} {row.ablation:<16} {row.aee:>8.3f} {100 * row.bad3:>6.2f}% '
                     f'{row.match_count:>7} {row.wrong_inliers:>6} {row.seconds:>8.2f}')
    return '\n'.join(lines)
