#!/usr/bin/env python3
# -*- coding: utf-8 -*-
import math

import logger
import pytest
import numpy as np

from pgmflow import (FlowField, MatchSet, FlowFormatError, InvalidInputError, InvalidParameterError, Translation,
                     AffineMotion, Rotation, PastedOccluder, read_flo, write_flo, endpoint_metrics, flow_to_color,
                     draw_matches, synth_pair, noise_image, field_to_flow, count_wrong_inliers)
from pgmflow.evaluation import FLO_TAG, color_wheel
from tests.samples import constant_field

log = logger.get_logger(__name__)


class TestFloFiles:
    def test_single_pixel_layout(self, tmp_path):
        path = tmp_path / 'one.flo'
        write_flo(FlowField.constant(1, 1, 1.5, -2.0), path)
        raw = path.read_bytes()
        assert len(raw) == 20
        assert np.frombuffer(raw[:4], '<f4')[0] == np.float32(FLO_TAG)
        assert np.frombuffer(raw[4:12], '<i4').tolist() == [1, 1]
        assert np.frombuffer(raw[12:], '<f4').tolist() == [1.5, -2.0]

    def test_round_trip_is_bitwise(self, tmp_path):
        data = np.random.default_rng(0).normal(scale=20.0, size=(7, 11, 2)).astype(np.float32)
        path = tmp_path / 'flow.flo'
        write_flo(FlowField(data), path)
        assert read_flo(path).data.tobytes() == data.tobytes()

    def test_random_round_trips(self, tmp_path):
        rng = np.random.default_rng(12)
        path = tmp_path / 'flow.flo'
        for _ in range(100):
            height, width = (int(v) for v in rng.integers(1, 40, size=2))
            scale = float(10.0 ** rng.uniform(-3, 3))
            data = rng.normal(scale=scale, size=(height, width, 2)).astype(np.float32)
            write_flo(FlowField(data), path)
            flow = read_flo(path)
            assert flow.shape == (height, width)
            assert flow.data.tobytes() == data.tobytes()

    def test_bad_magic(self, tmp_path):
        path = tmp_path / 'bad.flo'
        path.write_bytes(np.array([1.0], '<f4').tobytes() + np.array([1, 1], '<i4').tobytes() + bytes(8))
        with pytest.raises(FlowFormatError, match='magic'):
            read_flo(path)

    def test_truncated_header(self, tmp_path):
        path = tmp_path / 'short.flo'
        path.write_bytes(np.array([FLO_TAG], '<f4').tobytes())
        with pytest.raises(FlowFormatError):
            read_flo(path)

    def test_truncated_payload(self, tmp_path):
        path = tmp_path / 'flow.flo'
        write_flo(FlowField.constant(3, 3, 0.0, 0.0), path)
        path.write_bytes(path.read_bytes()[:-4])
        with pytest.raises(FlowFormatError):
            read_flo(path)

    def test_invalid_dimensions(self, tmp_path):
        path = tmp_path / 'flow.flo'
        path.write_bytes(np.array([FLO_TAG], '<f4').tobytes() + np.array([0, 5], '<i4').tobytes())
        with pytest.raises(FlowFormatError):
            read_flo(path)

    def test_non_finite_values(self, tmp_path):
        path = tmp_path / 'flow.flo'
        header = np.array([FLO_TAG], '<f4').tobytes() + np.array([1, 1], '<i4').tobytes()
        path.write_bytes(header + np.array([np.nan, 0.0], '<f4').tobytes())
        with pytest.raises(FlowFormatError):
            read_flo(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            read_flo(tmp_path / 'missing.flo')


class TestMetrics:
    def test_identical_flow(self):
        flow = FlowField.constant(4, 4, 1.0, 2.0)
        metrics = endpoint_metrics(flow, flow)
        assert metrics.aee == 0.0
        assert metrics.summary() == 'AEE 0.000, bad(3px) 0.00%'

    def test_three_four_five(self):
        metrics = endpoint_metrics(FlowField.constant(2, 3, 3.0, 4.0), FlowField.constant(2, 3, 0.0, 0.0))
        assert metrics.aee == pytest.approx(5.0)
        assert metrics.bad_ratio == 1.0
        assert metrics.valid_count == 6
        assert metrics.summary() == 'AEE 5.000, bad(3px) 100.00%'

    def test_symmetric(self):
        rng = np.random.default_rng(1)
        first, second = FlowField(rng.normal(size=(5, 5, 2))), FlowField(rng.normal(size=(5, 5, 2)))
        assert endpoint_metrics(first, second).aee == pytest.approx(endpoint_metrics(second, first).aee)

    def test_mask_restricts_pixels(self):
        flow = FlowField.constant(2, 2, 0.0, 0.0)
        gt = FlowField(np.array([[[0.0, 0.0], [10.0, 0.0]], [[0.0, 0.0], [0.0, 0.0]]]))
        mask = np.array([[True, False], [True, True]])
        metrics = endpoint_metrics(flow, gt, mask)
        assert metrics.aee == 0.0
        assert metrics.valid_count == 3

    def test_empty_mask(self):
        flow = FlowField.constant(2, 2, 0.0, 0.0)
        metrics = endpoint_metrics(flow, flow, np.zeros((2, 2), bool))
        assert math.isnan(metrics.aee)
        assert metrics.valid_count == 0

    def test_custom_threshold(self):
        metrics = endpoint_metrics(FlowField.constant(1, 2, 2.0, 0.0), FlowField.constant(1, 2, 0.0, 0.0), tau=1.0)
        assert metrics.bad_ratio == 1.0
        assert metrics.summary().startswith('AEE 2.000, bad(1px)')

    def test_shape_mismatch(self):
        with pytest.raises(InvalidInputError):
            endpoint_metrics(FlowField.constant(2, 2, 0, 0), FlowField.constant(2, 3, 0, 0))


class TestFieldFlow:
    def test_field_to_flow_zeroes_uninitialized(self):
        field = constant_field(2, 2, 3, -1)
        field.valid[0, 0] = False
        flow, mask = field_to_flow(field)
        assert flow.data[0, 0].tolist() == [0.0, 0.0]
        assert flow.data[1, 1].tolist() == [3.0, -1.0]
        assert mask.tolist() == [[False, True], [True, True]]

    def test_wrong_inliers(self):
        field = constant_field(4, 4, 1, 0)
        assert count_wrong_inliers(field, FlowField.constant(4, 4, 1.0, 0.0), np.ones((4, 4), bool)) == 0
        assert count_wrong_inliers(field, FlowField.constant(4, 4, 5.0, 0.0), np.ones((4, 4), bool)) == 16

    def test_inliers_without_ground_truth_are_wrong(self):
        field = constant_field(4, 4, 1, 0)
        field.valid[0, :] = False
        mask = np.ones((4, 4), bool)
        mask[:, :2] = False
        assert count_wrong_inliers(field, FlowField.constant(4, 4, 1.0, 0.0), mask) == 6


class TestColor:
    def test_wheel_size(self):
        wheel = color_wheel()
        assert wheel.shape == (55, 3)
        assert wheel[0].tolist() == [255.0, 0.0, 0.0]

    def test_zero_flow_is_white(self):
        img = flow_to_color(FlowField.constant(3, 3, 0.0, 0.0))
        assert np.all(img.data == 255.0)

    def test_rightward_flow_is_red(self):
        img = flow_to_color(FlowField.constant(1, 1, 4.0, 0.0), max_magnitude=4.0)
        assert img.data[0, 0].tolist() == [255.0, 0.0, 0.0]

    def test_saturation_grows_with_magnitude(self):
        data = np.zeros((1, 2, 2))
        data[0, 0] = (1.0, 0.0)
        data[0, 1] = (3.0, 0.0)
        img = flow_to_color(FlowField(data), max_magnitude=4.0)
        assert img.data[0, 0, 1] > img.data[0, 1, 1]

    def test_invalid_max_magnitude(self):
        with pytest.raises(InvalidParameterError):
            flow_to_color(FlowField.constant(1, 1, 1.0, 0.0), max_magnitude=0.0)

    def test_draw_matches(self):
        img = draw_matches(MatchSet(np.array([[5, 5, 7, 5]])), 12, 10)
        assert img.shape == (10, 12)
        assert img.data[5, 5].tolist() == [255.0, 0.0, 0.0]
        assert img.data[4, 6].tolist() == [255.0, 0.0, 0.0]
        assert img.data[3, 5].tolist() == [255.0, 255.0, 255.0]
        assert img.data[0, 0].tolist() == [255.0, 255.0, 255.0]

    def test_draw_no_matches(self):
        img = draw_matches(MatchSet.empty(), 4, 4)
        assert np.all(img.data == 255.0)


class TestSynthesis:
    @pytest.fixture
    def base(self):
        return noise_image(31, 41, seed=2)

    def test_translation(self, base):
        img1, img2, gt, mask = synth_pair(base, Translation(3, 2))
        assert np.allclose(img2.data[2:, 3:], img1.data[:-2, :-3], atol=1e-3)
        assert np.allclose(gt.u, 3.0)
        assert np.allclose(gt.v, 2.0)
        assert mask[:-2, :-3].all()
        assert not mask[:, -3:].any()

    def test_identity(self, base):
        img1, img2, gt, mask = synth_pair(base, Translation(0, 0))
        assert np.allclose(img1.data, img2.data, atol=1e-3)
        assert np.all(gt.data == 0.0)
        assert mask.all()

    def test_rotation(self, base):
        _, _, gt, mask = synth_pair(base, Rotation(10.0))
        assert gt.data[15, 20].tolist() == pytest.approx([0.0, 0.0], abs=1e-4)
        magnitude = float(np.hypot(*gt.data[15, 30]))
        assert magnitude == pytest.approx(2 * 10 * math.sin(math.radians(5.0)), abs=1e-3)
        assert mask.mean() > 0.5

        angle = math.radians(10.0)
        cx, cy = (41 - 1) / 2.0, (31 - 1) / 2.0
        expected = np.empty((31, 41, 2))
        for y in range(31):
            for x in range(41):
                dx, dy = x - cx, y - cy
                expected[y, x] = (math.cos(angle) * dx - math.sin(angle) * dy - dx,
                                  math.sin(angle) * dx + math.cos(angle) * dy - dy)
        assert np.allclose(gt.data, expected, atol=1e-4)

    def test_affine_matches_rotation(self, base):
        A = AffineMotion.rotation(10.0, (20.0, 15.0)).A
        _, img2_affine, _, _ = synth_pair(base, AffineMotion(A))
        _, img2_rotation, _, _ = synth_pair(base, Rotation(10.0))
        assert np.allclose(img2_affine.data, img2_rotation.data)

    def test_occluder(self, base):
        motion = PastedOccluder(2, 1, x=10, y=8, size=6)
        img1, img2, gt, mask = synth_pair(base, motion, seed=4)
        assert not mask[8:14, 10:16].any()
        assert not np.allclose(img1.data[8:14, 10:16], base.data[8:14, 10:16])
        assert np.array_equal(img1.data[:8], base.data[:8])
        _, plain, _, _ = synth_pair(base, Translation(2, 1))
        assert np.allclose(img2.data, plain.data)

    def test_motion_leaving_frame(self, base):
        with pytest.raises(InvalidParameterError):
            synth_pair(base, Translation(30, 0))

    def test_singular_affine(self):
        with pytest.raises(InvalidParameterError):
            AffineMotion(np.zeros((2, 3)))

    def test_gray_base(self):
        img1, img2, _, _ = synth_pair(noise_image(16, 16, channels=1), Translation(1, 1))
        assert img1.channels == img2.channels == 1

    def test_noise_image_seeded(self):
        assert np.array_equal(noise_image(4, 4, seed=9).data, noise_image(4, 4, seed=9).data)
