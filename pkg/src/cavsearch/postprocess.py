"""Dense probability maps to discrete detections.

The network emits a per-pixel lesion probability.  This module turns
that map into an ordered list of box detections: threshold (inclusive,
so a pixel exactly at the threshold is foreground), group foreground
pixels into 8-connected components, drop components smaller than a
noise floor, and wrap each survivor in its tight bounding box with a
mean-probability score.

The threshold itself is a free parameter; :func:`calibrate_threshold`
sweeps a fixed grid on held-out data and returns the F1-maximizing
value, so the choice is reproducible rather than eyeballed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .geometry import BBox, connected_components, tight_bbox

# Threshold grid used for calibration sweeps: 0.05, 0.10, ..., 0.95.
THRESHOLD_GRID = tuple(round(0.05 * i, 2) for i in range(1, 20))


@dataclass(frozen=True)
class PostprocessConfig:
    """Detection extraction parameters.

    threshold: probability at or above which a pixel is foreground.
    min_component_area: components with fewer pixels are discarded.
    """

    threshold: float = 0.5
    min_component_area: int = 4

    def __post_init__(self) -> None:
        if not 0.0 < self.threshold < 1.0:
            raise ConfigError(
                f"threshold must be in (0, 1), got {self.threshold}")
        if self.min_component_area < 0:
            raise ConfigError("min_component_area must be non-negative")


@dataclass(frozen=True)
class Detection:
    """One detected region: tight box plus mean component probability."""

    box: BBox
    score: float


def threshold_map(prob_map: np.ndarray, threshold: float) -> np.ndarray:
    """Binarize a probability map; foreground iff probability >= threshold."""
    if not 0.0 < threshold < 1.0:
        raise ConfigError(f"threshold must be in (0, 1), got {threshold}")
    return np.asarray(prob_map) >= threshold


def detect(prob_map: np.ndarray,
           config: PostprocessConfig = PostprocessConfig()) -> list[Detection]:
    """Extract detections from one probability map.

    Pipeline: inclusive threshold, 8-connected components, drop
    components with area < min_component_area, tight box + mean
    probability per survivor.  Output is sorted by descending score,
    ties broken by (y_min, x_min), so the list is a pure function of
    the map regardless of component labelling order.
    """
    prob_map = np.asarray(prob_map)
    mask = threshold_map(prob_map, config.threshold)
    detections = []
    for component in connected_components(mask):
        if len(component) < config.min_component_area:
            continue
        box = tight_bbox(component)
        score = float(prob_map[component[:, 0], component[:, 1]].mean())
        detections.append(Detection(box=box, score=score))
    detections.sort(key=lambda d: (-d.score, d.box.y_min, d.box.x_min))
    return detections


def predictions_to_json(predictions: dict[str, list[Detection]]) -> dict:
    """Serialize per-image detections into the prediction-file schema."""
    entries = []
    for image in sorted(predictions):
        boxes = [{"x_min": d.box.x_min, "y_min": d.box.y_min,
                  "x_max": d.box.x_max, "y_max": d.box.y_max,
                  "score": d.score} for d in predictions[image]]
        entries.append({"image": image, "boxes": boxes})
    return {"predictions": entries}


def predictions_from_json(payload: dict) -> dict[str, list[Detection]]:
    """Parse the prediction-file schema back into per-image detections."""
    if not isinstance(payload, dict) or "predictions" not in payload:
        raise ConfigError("prediction file must contain a 'predictions' list")
    result: dict[str, list[Detection]] = {}
    for entry in payload["predictions"]:
        image = entry["image"]
        if image in result:
            raise ConfigError(f"duplicate prediction entry for {image}")
        boxes = []
        for raw in entry["boxes"]:
            box = BBox(int(raw["x_min"]), int(raw["y_min"]),
                       int(raw["x_max"]), int(raw["y_max"]))
            boxes.append(Detection(box=box, score=float(raw["score"])))
        result[image] = boxes
    return result


def save_predictions(predictions: dict[str, list[Detection]],
                     path: str | Path) -> None:
    Path(path).write_text(
        json.dumps(predictions_to_json(predictions), indent=2) + "\n")


def load_predictions(path: str | Path) -> dict[str, list[Detection]]:
    return predictions_from_json(json.loads(Path(path).read_text()))


def calibrate_threshold(prob_maps: dict[str, np.ndarray],
                        truths: dict[str, list],
                        dims: tuple[int, int],
                        base_config: PostprocessConfig = PostprocessConfig(),
                        iou_cutoff: float = 0.8,
                        grid: tuple[float, ...] = THRESHOLD_GRID
                        ) -> tuple[float, list[dict]]:
    """Pick the detection threshold that maximizes corpus F1.

    Runs the full detect-and-match scoring for every threshold in
    ``grid`` over held-out probability maps and their ground-truth
    polygons.  Returns ``(best_threshold, sweep)`` where ``sweep`` has
    one ``{"threshold", "tp", "fp", "fn", "f1"}`` row per grid point.
    Ties resolve toward the lowest threshold so the result is unique.
    """
    # Imported here: evaluation depends on Detection above, and the
    # sweep is the one place the dependency points the other way.
    from .evaluation import EvalConfig, compute_metrics, match_detections

    if set(prob_maps) != set(truths):
        raise ConfigError("probability maps and truths cover different images")
    eval_config = EvalConfig(iou_cutoff=iou_cutoff)
    best_threshold = None
    best_f1 = -1.0
    sweep = []
    for threshold in grid:
        config = PostprocessConfig(
            threshold=threshold,
            min_component_area=base_config.min_component_area)
        tp = fp = fn = 0
        for image in sorted(prob_maps):
            outcome = match_detections(detect(prob_maps[image], config),
                                       truths[image], dims, eval_config)
            tp += len(outcome.matched)
            fp += len(outcome.false_positives)
            fn += len(outcome.false_negatives)
        _, _, f1 = compute_metrics(tp, fp, fn)
        sweep.append({"threshold": threshold, "tp": tp, "fp": fp,
                      "fn": fn, "f1": f1})
        if f1 > best_f1:
            best_f1 = f1
            best_threshold = threshold
    return best_threshold, sweep
