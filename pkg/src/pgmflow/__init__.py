#!/usr/bin/env python3
# -*- coding: utf-8 -*-
from .__about__ import __version__
from .common import (PgmError, InvalidInputError, InvalidParameterError, FlowFormatError, MatchFormatError,
                     ImageIOError, SerializableBaseModel, SerializableDataClass, ColorSpace, GradientVariant, Direction,
                     Ablation, PropagationOrder, InterpMode, build_exception_map)
from .imgproc import (RasterImage, GradientImage, ImagePyramid, convert_color_space, convert_to_rgb, sobel_kernels,
                      sobel_gradients, build_gradient_image, apply_variant, downsample, build_image_pyramid,
                      build_gradient_pyramid, pack_signs, read_image, write_image)
from .matcher import (CorrespondenceField, MatchParams, PixelRng, patch_distance, propagate_pixel, random_search_pixel,
                      basic_gradient_matching, exhaustive_match_oracle, stability_map, interior_field_costs,
                      unrelated_sample_cost)
from .pyramid_flow import (PipelineConfig, OutlierRecord, ConsistencyMap, LevelReport, MatchingDiagnostics,
                           seed_initial_field, consistency_check, cost_check, update_outlier_record, propagate_field,
                           propagate_outlier_record, remove_small_regions, pyramidal_matching)
from .interp import MatchSet, FlowField, sparsify_to_grid, select_interpolator, densify, export_matches, import_matches
from .evaluation import (Metrics, FlowFile, Translation, AffineMotion, Rotation, PastedOccluder, read_flo, write_flo,
                         endpoint_metrics, flow_to_color, draw_matches, synth_pair, noise_image, field_to_flow,
                         count_wrong_inliers)
from .pipeline import RunConfig, run_matching, estimate_flow
