"""Postprocess tests: thresholding, component boxes, calibration sweep."""

import numpy as np
import pytest

from cavsearch.errors import ConfigError
from cavsearch.geometry import BBox, Polygon
from cavsearch.postprocess import (THRESHOLD_GRID, Detection,
                                   PostprocessConfig, calibrate_threshold,
                                   detect, load_predictions,
                                   predictions_from_json,
                                   predictions_to_json, save_predictions,
                                   threshold_map)


def rect_polygon(x0, y0, x1, y1):
    return Polygon.from_points([(x0, y0), (x1, y0), (x1, y1), (x0, y1)])


class TestConfig:
    @pytest.mark.parametrize("kwargs", [dict(threshold=0.0),
                                        dict(threshold=1.0),
                                        dict(threshold=-0.2),
                                        dict(min_component_area=-1)])
    def test_invalid_rejected(self, kwargs):
        with pytest.raises(ConfigError):
            PostprocessConfig(**kwargs)

    def test_defaults(self):
        cfg = PostprocessConfig()
        assert cfg.threshold == 0.5
        assert cfg.min_component_area == 4


class TestThresholdMap:
    def test_inclusive_at_threshold(self):
        prob = np.array([[0.49, 0.50, 0.51]])
        np.testing.assert_array_equal(threshold_map(prob, 0.5),
                                      [[False, True, True]])

    def test_bad_threshold_rejected(self):
        with pytest.raises(ConfigError):
            threshold_map(np.zeros((2, 2)), 0.0)
        with pytest.raises(ConfigError):
            threshold_map(np.zeros((2, 2)), 1.0)


class TestDetect:
    def test_two_components_with_floor(self):
        prob = np.zeros((10, 10))
        prob[1:4, 1:4] = 0.9          # 9 px component
        prob[6:8, 5:9] = 0.7          # 8 px component
        prob[9, 9] = 0.99             # 1 px, below the area floor
        dets = detect(prob, PostprocessConfig(threshold=0.5,
                                              min_component_area=4))
        assert [d.box for d in dets] == [BBox(1, 1, 4, 4), BBox(5, 6, 9, 8)]
        assert dets[0].score == pytest.approx(0.9)
        assert dets[1].score == pytest.approx(0.7)

    def test_area_floor_of_one_keeps_single_pixels(self):
        prob = np.zeros((5, 5))
        prob[2, 2] = 0.8
        dets = detect(prob, PostprocessConfig(threshold=0.5,
                                              min_component_area=1))
        assert [d.box for d in dets] == [BBox(2, 2, 3, 3)]

    def test_diagonal_pixels_are_one_component(self):
        prob = np.zeros((6, 6))
        for i in range(4):
            prob[i, i] = 0.6
        dets = detect(prob, PostprocessConfig(threshold=0.5,
                                              min_component_area=4))
        assert [d.box for d in dets] == [BBox(0, 0, 4, 4)]

    def test_score_is_component_mean(self):
        prob = np.zeros((4, 8))
        prob[1, 1:5] = [0.5, 0.6, 0.7, 0.8]
        dets = detect(prob, PostprocessConfig(threshold=0.5,
                                              min_component_area=4))
        assert len(dets) == 1
        assert dets[0].score == pytest.approx(0.65)

    def test_sorted_by_score_then_position(self):
        prob = np.zeros((12, 12))
        prob[8:10, 0:2] = 0.4   # low score, later
        prob[0:2, 6:8] = 0.9    # same score as the next one
        prob[0:2, 0:2] = 0.9    # ties broken by (y_min, x_min)
        dets = detect(prob, PostprocessConfig(threshold=0.3,
                                              min_component_area=4))
        assert [d.box for d in dets] == [BBox(0, 0, 2, 2), BBox(6, 0, 8, 2),
                                         BBox(0, 8, 2, 10)]

    def test_empty_map_no_detections(self):
        assert detect(np.zeros((8, 8))) == []


class TestPredictionFiles:
    def make(self):
        return {
            "b.pgm": [Detection(BBox(0, 0, 2, 2), 0.75)],
            "a.pgm": [Detection(BBox(1, 2, 5, 7), 0.5),
                      Detection(BBox(3, 3, 4, 4), 0.25)],
            "empty.pgm": [],
        }

    def test_round_trip(self, tmp_path):
        path = tmp_path / "pred.json"
        save_predictions(self.make(), path)
        assert load_predictions(path) == self.make()

    def test_json_schema_sorted_by_image(self):
        doc = predictions_to_json(self.make())
        assert [e["image"] for e in doc["predictions"]] == [
            "a.pgm", "b.pgm", "empty.pgm"]
        first = doc["predictions"][0]["boxes"][0]
        assert first == {"x_min": 1, "y_min": 2, "x_max": 5, "y_max": 7,
                         "score": 0.5}

    def test_duplicate_image_rejected(self):
        doc = {"predictions": [{"image": "a", "boxes": []},
                               {"image": "a", "boxes": []}]}
        with pytest.raises(ConfigError):
            predictions_from_json(doc)

    def test_missing_key_rejected(self):
        with pytest.raises(ConfigError):
            predictions_from_json({"boxes": []})


class TestCalibration:
    def synthetic_case(self):
        """One true region at probability 0.6, one spurious blob at 0.3.

        Thresholds up to 0.30 admit the spurious blob (a false
        positive); 0.35-0.60 capture exactly the truth; above 0.60
        nothing survives.
        """
        prob = np.zeros((16, 16))
        prob[2:8, 2:8] = 0.6
        prob[12:14, 12:14] = 0.3
        truths = [rect_polygon(2.0, 2.0, 8.0, 8.0)]
        return {"img": prob}, {"img": truths}

    def test_grid_shape(self):
        assert THRESHOLD_GRID[0] == pytest.approx(0.05)
        assert THRESHOLD_GRID[-1] == pytest.approx(0.95)
        assert len(THRESHOLD_GRID) == 19

    def test_picks_lowest_best_threshold(self):
        maps, truths = self.synthetic_case()
        best, sweep = calibrate_threshold(maps, truths, dims=(16, 16))
        assert best == pytest.approx(0.35)
        by_threshold = {row["threshold"]: row for row in sweep}
        assert len(sweep) == len(THRESHOLD_GRID)
        assert by_threshold[0.3] == {"threshold": 0.3, "tp": 1, "fp": 1,
                                     "fn": 0, "f1": pytest.approx(2 / 3)}
        assert by_threshold[0.6] == {"threshold": 0.6, "tp": 1, "fp": 0,
                                     "fn": 0, "f1": pytest.approx(1.0)}
        assert by_threshold[0.65] == {"threshold": 0.65, "tp": 0, "fp": 0,
                                      "fn": 1, "f1": pytest.approx(0.0)}

    def test_key_mismatch_rejected(self):
        maps, truths = self.synthetic_case()
        truths["extra"] = []
        with pytest.raises(ConfigError):
            calibrate_threshold(maps, truths, dims=(16, 16))

    def test_respects_min_area(self):
        maps, truths = self.synthetic_case()
        # with no area floor, a lone half-probability pixel becomes a
        # detection; the default floor removes it
        maps["img"][0, 15] = 0.5
        base = PostprocessConfig(min_component_area=1)
        _, sweep = calibrate_threshold(maps, truths, dims=(16, 16),
                                       base_config=base)
        by_threshold = {row["threshold"]: row for row in sweep}
        assert by_threshold[0.5]["fp"] == 1
