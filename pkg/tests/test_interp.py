#!/usr/bin/env python3
# -*- coding: utf-8 -*-
import logger
import pytest
import numpy as np

from pgmflow import (MatchSet, FlowField, InterpMode, InvalidInputError, InvalidParameterError, MatchFormatError,
                     sparsify_to_grid, select_interpolator, densify, export_matches, import_matches,
                     endpoint_metrics)
from tests.samples import constant_field

log = logger.get_logger(__name__)


def grid_matches(width: int, height: int, spacing: int, motion) -> MatchSet:
    rows = []
    for y in range(0, height, spacing):
        for x in range(0, width, spacing):
            u, v = motion(x, y)
            rows.append((x, y, x + u, y + v))
    return MatchSet(np.array(rows))


class TestMatchSet:
    def test_duplicate_sources(self):
        with pytest.raises(InvalidInputError):
            MatchSet(np.array([[1, 1, 2, 2], [1, 1, 3, 3]]))

    def test_displacements(self):
        matches = MatchSet(np.array([[1, 2, 4, 6]]))
        assert matches.displacements.tolist() == [[3, 4]]
        assert len(MatchSet.empty()) == 0


class TestSparsify:
    def test_grid_count_and_order(self):
        matches = sparsify_to_grid(constant_field(9, 9, 0, 0), 3)
        assert len(matches) == 9
        assert matches.sources.tolist()[:4] == [[0, 0], [3, 0], [6, 0], [0, 3]]

    def test_skips_uninitialized(self):
        field = constant_field(9, 9, 0, 0)
        field.valid[3, 3] = False
        matches = sparsify_to_grid(field, 3)
        assert len(matches) == 8
        assert [3, 3] not in matches.sources.tolist()

    def test_drops_targets_outside(self):
        matches = sparsify_to_grid(constant_field(9, 9, 5, 0), 3)
        assert len(matches) == 6
        assert set(matches.sources[:, 0].tolist()) == {0, 3}

    def test_spacing_one_keeps_everything(self):
        assert len(sparsify_to_grid(constant_field(4, 5, 0, 0), 1)) == 20

    def test_invalid_spacing(self):
        with pytest.raises(InvalidParameterError):
            sparsify_to_grid(constant_field(4, 4, 0, 0), 0)


class TestSelectInterpolator:
    def test_density_boundary(self):
        assert select_interpolator(221, 100, 100) is InterpMode.LA
        assert select_interpolator(220, 100, 100) is InterpMode.NW

    def test_zero_threshold(self):
        assert select_interpolator(1, 10, 10, 0.0) is InterpMode.LA
        assert select_interpolator(0, 10, 10, 0.0) is InterpMode.NW


class TestDensify:
    @pytest.mark.parametrize('mode', list(InterpMode))
    def test_constant_motion(self, mode):
        matches = grid_matches(30, 24, 3, lambda x, y: (2, -1))
        flow = densify(matches, 30, 24, mode)
        assert flow.shape == (24, 30)
        assert np.allclose(flow.u, 2.0, atol=1e-6)
        assert np.allclose(flow.v, -1.0, atol=1e-6)

    def test_affine_motion(self):
        motion = lambda x, y: (x - y, 2 + y)  # noqa: E731
        matches = grid_matches(30, 30, 3, motion)
        flow = densify(matches, 30, 30, InterpMode.LA)
        ys, xs = np.mgrid[0:30, 0:30]
        gt = FlowField(np.stack([xs - ys, 2 + ys], axis=-1))
        assert endpoint_metrics(flow, gt).aee <= 1e-6

    def test_reproduces_matches(self):
        rng = np.random.default_rng(0)
        matches = grid_matches(20, 20, 4, lambda x, y: tuple(int(v) for v in rng.integers(-3, 4, size=2)))
        flow = densify(matches, 20, 20, InterpMode.NW, k=1)
        for x1, y1, x2, y2 in matches.rows.tolist():
            assert flow.data[y1, x1].tolist() == [x2 - x1, y2 - y1]

    def test_single_match(self):
        flow = densify(MatchSet(np.array([[3, 3, 5, 2]])), 8, 6, InterpMode.LA)
        assert np.allclose(flow.u, 2.0)
        assert np.allclose(flow.v, -1.0)

    def test_empty_matches(self):
        with pytest.raises(InvalidInputError):
            densify(MatchSet.empty(), 8, 8)

    def test_invalid_neighbor_count(self):
        with pytest.raises(InvalidParameterError):
            densify(MatchSet(np.array([[0, 0, 1, 1]])), 4, 4, k=0)

    def test_collinear_matches_fall_back(self, mocker):
        warning = mocker.patch('pgmflow.interp.log.warning')
        matches = grid_matches(12, 1, 2, lambda x, y: (1, 0))
        flow = densify(matches, 12, 5, InterpMode.LA)
        assert np.allclose(flow.u, 1.0)
        assert np.allclose(flow.v, 0.0)
        warning.assert_called_once()

    def test_chunked_queries(self, mocker):
        mocker.patch('pgmflow.interp.QUERY_CHUNK', 7)
        matches = grid_matches(10, 10, 3, lambda x, y: (1, 1))
        flow = densify(matches, 10, 10)
        assert np.allclose(flow.data, 1.0)


class TestMatchFiles:
    def test_export_format(self, tmp_path):
        path = tmp_path / 'matches.txt'
        export_matches(MatchSet(np.array([[1, 2, 4, 6]])), path)
        assert path.read_text() == '1 2 4 6\n'

    def test_round_trip(self, tmp_path):
        path = tmp_path / 'matches.txt'
        matches = sparsify_to_grid(constant_field(12, 12, 1, -1), 3)
        export_matches(matches, path)
        assert import_matches(path) == matches

    def test_blank_lines_skipped(self, tmp_path):
        path = tmp_path / 'matches.txt'
        path.write_text('\n1 2 3 4\n\n5 6 7 8\n')
        assert import_matches(path).rows.tolist() == [[1, 2, 3, 4], [5, 6, 7, 8]]

    @pytest.mark.parametrize('content, line', [
        ('1 2 4\n', 1),
        ('1 2 3 4\n5 6 x 8\n', 2),
        ('1 2 3 4\n1 2 5 6\n', 2),
        ('\n\n1 2 3 4 5\n', 3),
    ])
    def test_malformed(self, tmp_path, content, line):
        path = tmp_path / 'matches.txt'
        path.write_text(content)
        with pytest.raises(MatchFormatError) as info:
            import_matches(path)
        assert info.value.line == line

    def test_empty_file(self, tmp_path):
        path = tmp_path / 'matches.txt'
        path.write_text('')
        assert len(import_matches(path)) == 0
