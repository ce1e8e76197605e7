#!/usr/bin/env python3
# -*- coding: utf-8 -*-
import argparse
import os
import sys
import logger
from pathlib import Path
from typing import Optional, List, Dict, Sequence

import numpy as np
from pydantic import ValidationError

from . import common
from .__about__ import __version__
from .bench import SUITES, ABLATION_SET, DEFAULT_CASES, bench_configs, load_suite_dir, run_bench, write_csv, \
    format_table
from .common import GradientVariant, Ablation, PropagationOrder, InvalidParameterError, build_exception_map
from .evaluation import (FlowFile, Translation, AffineMotion, Rotation, PastedOccluder, endpoint_metrics,
                         flow_to_color, draw_matches, noise_image, synth_pair, write_flo)
from .imgproc import RasterImage, read_image, write_image
from .interp import export_matches, import_matches
from .pipeline import RunConfig, run_matching, estimate_flow
from .pyramid_flow import PipelineConfig

log = logger.get_logger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_IO = 2
EXIT_DATA = 3

SEED_ENV = 'PGM_SEED'

_ERRORS = build_exception_map(common)
EXIT_CODES: Dict[type, int] = {
    _ERRORS['InvalidParameterError']: EXIT_USAGE,
    _ERRORS['InvalidInputError']: EXIT_DATA,
    _ERRORS['FlowFormatError']: EXIT_IO,
    _ERRORS['MatchFormatError']: EXIT_IO,
    _ERRORS['ImageIOError']: EXIT_IO,
    _ERRORS['PgmError']: EXIT_DATA,
    ValidationError: EXIT_USAGE,
    OSError: EXIT_IO,
}

# flag dest -> PipelineConfig field
PIPELINE_FLAGS = {
    'eps': 'eps_check',
    'max_cost_ratio': 'max_cost_ratio',
    'min_region': 'min_region',
    'levels': 'levels',
    'factor': 'factor',
    'radius_fwd': 'radius_fwd',
    'radius_bwd': 'radius_bwd',
    'iters_full': 'iters_full',
    'iters_other': 'iters_other',
    'search_bound': 'search_bound',
    'refinements': 'refinements',
    'start_level': 'start_level',
    'ablation': 'ablation',
    'order': 'order',
}


def exit_code_for(error: BaseException) -> int:
    for cls in type(error).__mro__:
        if cls in EXIT_CODES:
            return EXIT_CODES[cls]
    return EXIT_DATA


class ArgumentParser(argparse.ArgumentParser):
    def error(self, message: str) -> None:
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f'{self.prog}: error: {message}\n')


def _size(text: str) -> tuple:
    try:
        width, height = (int(v) for v in text.lower().split('x'))
    except ValueError:
        raise argparse.ArgumentTypeError(f'expected WxH, got {text!r}')
    if width < 1 or height < 1:
        raise argparse.ArgumentTypeError(f'size must be positive, got {text!r}')
    return width, height


def _floats(text: str) -> List[float]:
    try:
        return [float(v) for v in text.split(',')]
    except ValueError:
        raise argparse.ArgumentTypeError(f'expected comma separated numbers, got {text!r}')


def _motion(text: str):
    """translate:TX,TY | affine:A11,A12,B1,A21,A22,B2 | rotate:DEG | occluder:TX,TY,X,Y[,SIZE]"""
    kind, _, values = text.partition(':')
    numbers = _floats(values) if values else []
    try:
        if kind == 'translate' and len(numbers) == 2:
            return Translation(*numbers)
        if kind == 'affine' and len(numbers) == 6:
            return AffineMotion(np.array(numbers).reshape(2, 3))
        if kind == 'rotate' and len(numbers) == 1:
            return Rotation(numbers[0])
        if kind == 'occluder' and len(numbers) in (4, 5):
            tx, ty, x, y = numbers[:4]
            size = int(numbers[4]) if len(numbers) == 5 else 20
            return PastedOccluder(tx, ty, int(x), int(y), size)
    except InvalidParameterError as e:
        raise argparse.ArgumentTypeError(str(e))
    raise argparse.ArgumentTypeError(f'invalid motion {text!r}')


def _pipeline_options() -> argparse.ArgumentParser:
    parent = ArgumentParser(add_help=False)
    group = parent.add_argument_group('pipeline')
    group.add_argument('--config', type=Path, help='JSON run configuration to start from')
    group.add_argument('--variant', choices=[v.value for v in GradientVariant])
    group.add_argument('--ablation', choices=[a.value for a in Ablation])
    group.add_argument('--order', choices=[o.value for o in PropagationOrder])
    group.add_argument('--seed', type=int, help=f'RNG seed (default: ${SEED_ENV} or 0)')
    group.add_argument('--spacing', type=int)
    group.add_argument('--eps', type=float, help='forward-backward consistency tolerance in pixels')
    group.add_argument('--max-cost-ratio', type=float, help='final patch cost limit relative to unrelated patches')
    group.add_argument('--no-cost-check', action='store_true', help='keep final matches regardless of patch cost')
    group.add_argument('--min-region', type=int)
    group.add_argument('--levels', type=int)
    group.add_argument('--factor', type=float)
    group.add_argument('--start-level', type=int)
    group.add_argument('--refinements', type=int)
    group.add_argument('--search-bound', type=int)
    group.add_argument('--radius-fwd', type=int)
    group.add_argument('--radius-bwd', type=int)
    group.add_argument('--iters-full', type=int)
    group.add_argument('--iters-other', type=int)
    group.add_argument('--interp', choices=['auto', 'nw', 'la'])
    group.add_argument('--threshold', type=float, help='match density above which the affine interpolator is used')
    group.add_argument('--neighbors', type=int)
    return parent


def resolve_seed(flag: Optional[int], fallback: int = 0) -> int:
    if flag is not None:
        return flag
    env = os.environ.get(SEED_ENV)
    if env is None:
        return fallback
    try:
        seed = int(env)
    except ValueError:
        raise InvalidParameterError(f'{SEED_ENV} must be an integer, got {env!r}')
    log.warning(f'Using seed {seed} from {SEED_ENV}')
    return seed


def build_run_config(args: argparse.Namespace, inputs: Sequence[Path] = (),
                     outputs: Sequence[Path] = ()) -> RunConfig:
    """Loaded config (if any), then command-line overrides; pydantic errors become InvalidParameterError."""
    try:
        cfg = RunConfig.from_json(args.config.read_text()) if args.config else RunConfig()
        pipeline = cfg.pipeline
        if args.variant and GradientVariant(args.variant) is not pipeline.variant:
            pipeline = pipeline.for_variant(GradientVariant(args.variant))

        data = pipeline.to_dict()
        overrides = {field: getattr(args, flag) for flag, field in PIPELINE_FLAGS.items()
                     if getattr(args, flag) is not None}
        if 'levels' in overrides and overrides['levels'] != data['levels']:
            data.update(spaces_fwd=None, spaces_bwd=None)
        data.update(overrides)
        if getattr(args, 'no_cost_check', False):
            data['max_cost_ratio'] = None
        data['seed'] = resolve_seed(args.seed, data['seed'])

        run = {'pipeline': PipelineConfig.from_dict(data), 'inputs': list(inputs), 'outputs': list(outputs)}
        for flag in ('spacing', 'interp', 'threshold', 'neighbors'):
            if getattr(args, flag) is not None:
                run[flag] = getattr(args, flag)
        cfg = RunConfig.from_dict({**cfg.to_dict(), **run})
    except ValidationError as e:
        raise InvalidParameterError(f'Invalid configuration: {e}')
    cfg.check_paths()
    return cfg


def _read_pair(cfg: RunConfig) -> tuple:
    img1, img2 = read_image(cfg.inputs[0]), read_image(cfg.inputs[1])
    if img1.shape != img2.shape:
        raise common.InvalidInputError(f'Image sizes differ: {cfg.inputs[0]} is {img1.width}x{img1.height}, '
                                       f'{cfg.inputs[1]} is {img2.width}x{img2.height}')
    return img1, img2


def cmd_config(args: argparse.Namespace) -> int:
    print(build_run_config(args).to_json(indent=2))
    return EXIT_OK


def cmd_match(args: argparse.Namespace) -> int:
    cfg = build_run_config(args, [args.img1, args.img2], [args.out])
    img1, img2 = _read_pair(cfg)
    result = run_matching(img1, img2, cfg)
    export_matches(result.matches, args.out)
    print(f'{len(result.matches)} matches, inlier ratio {result.inlier_ratio:.3f}')
    return EXIT_OK


def cmd_flow(args: argparse.Namespace) -> int:
    outputs = [args.out] + ([args.matches] if args.matches else [])
    cfg = build_run_config(args, [args.img1, args.img2], outputs)
    img1, img2 = _read_pair(cfg)
    result = estimate_flow(img1, img2, cfg)
    write_flo(result.flow, args.out)
    if args.matches:
        export_matches(result.match.matches, args.matches)
    print(f'{len(result.match.matches)} matches, interpolator {result.mode.value}, '
          f'inlier ratio {result.match.inlier_ratio:.3f}')
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    for path in (args.flo, args.gt, args.mask):
        if path is not None and not path.is_file():
            raise FileNotFoundError(f'File not found: {path}')
    flow, gt = FlowFile.load(args.flo), FlowFile.load(args.gt)
    mask = read_image(args.mask).data[..., 0] > 0 if args.mask else None
    metrics = endpoint_metrics(flow.flow, gt.flow, mask, args.tau)
    print(metrics.summary())
    return EXIT_OK


def cmd_viz(args: argparse.Namespace) -> int:
    if not args.input.is_file():
        raise FileNotFoundError(f'File not found: {args.input}')
    if args.input.suffix == '.flo':
        image = flow_to_color(FlowFile.load(args.input).flow, args.max_magnitude)
    else:
        if args.size is None:
            raise InvalidParameterError('--size WxH is required to render a match file')
        image = draw_matches(import_matches(args.input), *args.size, max_magnitude=args.max_magnitude)
    write_image(image, args.out)
    log.info(f'Wrote visualization to {args.out}')
    return EXIT_OK


def cmd_synth(args: argparse.Namespace) -> int:
    if args.base:
        base = read_image(args.base)
    else:
        width, height = args.noise
        base = noise_image(height, width, args.seed)
    img1, img2, gt, mask = synth_pair(base, args.motion, args.seed)
    out = args.out_dir
    write_image(img1, out / 'img1.png')
    write_image(img2, out / 'img2.png')
    write_flo(gt, out / 'gt.flo')
    write_image(RasterImage(mask.astype(np.float64) * 255), out / 'mask.png')
    print(f'Wrote synthetic case to {out}')
    return EXIT_OK


def cmd_bench(args: argparse.Namespace) -> int:
    if (args.suite_dir is None) == (args.synthetic is None):
        raise InvalidParameterError('bench needs either a suite directory or --synthetic, not both')
    cfg = build_run_config(args)
    if args.suite_dir:
        cases = load_suite_dir(args.suite_dir)
    else:
        cases = [case for name in args.synthetic for case in SUITES[name](count=args.cases,
                                                                          seed=cfg.pipeline.seed)]
    try:
        variants = [GradientVariant(v.strip().upper()) for v in args.variants.split(',')] if args.variants \
            else [cfg.pipeline.variant]
    except ValueError:
        raise InvalidParameterError(f'Unknown variant in {args.variants!r}, expected a subset of C,G,CD,GD')
    ablations = list(ABLATION_SET) if args.ablations else [cfg.pipeline.ablation]
    configs = bench_configs(cfg, variants, ablations)

    profiler = None
    if args.profile:
        try:
            from pyinstrument import Profiler
        except ImportError:
            raise InvalidParameterError('--profile needs pyinstrument (pip install pgmflow[profile])')
        profiler = Profiler()
        profiler.start()
    rows = run_bench(cases, configs, args.workers)
    if profiler is not None:
        profiler.stop()
        print(profiler.output_text(unicode=True, color=False))

    print(format_table(rows))
    if args.csv:
        if str(args.csv) == '-':
            write_csv(rows, sys.stdout)
        else:
            with args.csv.open('w', newline='') as fh:
                write_csv(rows, fh)
            log.info(f'Wrote {len(rows)} rows to {args.csv}')
    failed = [row for row in rows if row.failed]
    if failed:
        log.warning(f'{len(failed)} of {len(rows)} bench runs failed')
        return EXIT_DATA
    return EXIT_OK


def build_parser() -> ArgumentParser:
    parser = ArgumentParser(prog='pgmflow', description='Pyramidal gradient matching for optical flow')
    parser.add_argument('--version', action='version', version=f'%(prog)s {__version__}')
    commands = parser.add_subparsers(dest='command', required=True)
    options = _pipeline_options()

    config = commands.add_parser('config', parents=[options], help='print the resolved run configuration as JSON')
    config.set_defaults(func=cmd_config)

    match = commands.add_parser('match', parents=[options], help='match two images and export grid matches')
    match.add_argument('img1', type=Path)
    match.add_argument('img2', type=Path)
    match.add_argument('out', type=Path)
    match.set_defaults(func=cmd_match)

    flow = commands.add_parser('flow', parents=[options], help='match and densify into a .flo file')
    flow.add_argument('img1', type=Path)
    flow.add_argument('img2', type=Path)
    flow.add_argument('out', type=Path)
    flow.add_argument('--matches', type=Path, help='also export the grid matches here')
    flow.set_defaults(func=cmd_flow)

    evaluate = commands.add_parser('eval', help='endpoint error of a .flo against ground truth')
    evaluate.add_argument('flo', type=Path)
    evaluate.add_argument('gt', type=Path)
    evaluate.add_argument('--mask', type=Path, help='PNG, nonzero marks valid ground truth')
    evaluate.add_argument('--tau', type=float, default=3.0)
    evaluate.set_defaults(func=cmd_eval)

    bench = commands.add_parser('bench', parents=[options], help='run variants and ablations over a suite')
    bench.add_argument('suite_dir', type=Path, nargs='?', help='directory of <name>_1.png, <name>_2.png, <name>.flo')
    bench.add_argument('--synthetic', nargs='+', choices=sorted(SUITES))
    bench.add_argument('--variants', help='comma separated, e.g. C,G,CD,GD')
    bench.add_argument('--ablations', action='store_true', help='run the full pipeline and every ablation')
    bench.add_argument('--cases', type=int, default=DEFAULT_CASES, help='cases per synthetic suite')
    bench.add_argument('--workers', type=int, default=1)
    bench.add_argument('--csv', type=Path, help="CSV output path, '-' for stdout")
    bench.add_argument('--profile', action='store_true')
    bench.set_defaults(func=cmd_bench)

    viz = commands.add_parser('viz', help='render a .flo or a match file as PNG')
    viz.add_argument('input', type=Path)
    viz.add_argument('out', type=Path)
    viz.add_argument('--max-magnitude', type=float)
    viz.add_argument('--size', type=_size, help='WxH canvas for match files')
    viz.set_defaults(func=cmd_viz)

    synth = commands.add_parser('synth', help='write a synthetic image pair with ground truth')
    synth.add_argument('out_dir', type=Path)
    base = synth.add_mutually_exclusive_group(required=True)
    base.add_argument('--base', type=Path)
    base.add_argument('--noise', type=_size, metavar='WxH')
    synth.add_argument('--motion', type=_motion, required=True, help=_motion.__doc__)
    synth.add_argument('--seed', type=int, default=0)
    synth.set_defaults(func=cmd_synth)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (common.PgmError, ValidationError, OSError) as e:
        code = exit_code_for(e)
        log.error(f'{args.command} failed: {e}')
        print(f'pgmflow {args.command}: {e}', file=sys.stderr)
        return code


if __name__ == '__main__':
    sys.exit(main())
