"""Detection scoring: IoU matching, count metrics, multi-reader reports.

A detection counts as a hit only when the pixel-set Jaccard index
between its box and a ground-truth polygon strictly exceeds the cutoff
(default 0.8).  Matching is greedy one-to-one by descending IoU, which
is deterministic and never beats the optimal matching — a property the
test suite checks against an exhaustive matcher.

Human annotations are scored through the identical pipeline: each
reader polygon is reduced to the tight box of its rasterization and
matched exactly like a system detection, so reported numbers are
comparable across columns.

Counts aggregate over the whole corpus (sum tp/fp/fn, then divide);
per-image ratios are never averaged.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal

import numpy as np

from .errors import ConfigError
from .geometry import (Polygon, _jaccard_box_raster, rasterize_polygon,
                       tight_bbox)
from .postprocess import Detection


@dataclass(frozen=True)
class EvalConfig:
    """Matching parameters; a pair matches only when IoU > iou_cutoff."""

    iou_cutoff: float = 0.8

    def __post_init__(self) -> None:
        if not 0.0 < self.iou_cutoff <= 1.0:
            raise ConfigError(
                f"iou_cutoff must be in (0, 1], got {self.iou_cutoff}")


@dataclass(frozen=True)
class MatchOutcome:
    """One image's matching result.

    matched: (detection index, truth index, iou) triples.
    false_positives: detection indices left unmatched.
    false_negatives: truth indices left unmatched.
    """

    matched: tuple[tuple[int, int, float], ...]
    false_positives: tuple[int, ...]
    false_negatives: tuple[int, ...]


@dataclass(frozen=True)
class MetricsReport:
    """Corpus-level counts and derived metrics, plus per-reader breakdown."""

    tp: int
    fp: int
    fn: int
    precision: float
    recall: float
    f1: float
    per_reader: dict[str, "MetricsReport"] = field(default_factory=dict)


def match_detections(detections: list[Detection], truths: list[Polygon],
                     dims: tuple[int, int],
                     config: EvalConfig = EvalConfig()) -> MatchOutcome:
    """Greedy one-to-one matching of detection boxes to truth polygons.

    ``dims`` is the (width, height) canvas on which polygons rasterize.
    All pairwise IoUs are computed, pairs sorted by descending IoU with
    ties broken by (detection index, truth index), then accepted
    greedily while both sides are free.  Only pairs strictly above the
    cutoff are eligible.
    """
    width, height = dims
    rasters = [rasterize_polygon(t, width, height) for t in truths]
    pairs = []
    for di, det in enumerate(detections):
        for ti, raster in enumerate(rasters):
            iou = _jaccard_box_raster(det.box, raster)
            if iou > config.iou_cutoff:
                pairs.append((-iou, di, ti))
    pairs.sort()
    det_taken = [False] * len(detections)
    truth_taken = [False] * len(truths)
    matched = []
    for neg_iou, di, ti in pairs:
        if det_taken[di] or truth_taken[ti]:
            continue
        det_taken[di] = True
        truth_taken[ti] = True
        matched.append((di, ti, -neg_iou))
    return MatchOutcome(
        matched=tuple(matched),
        false_positives=tuple(i for i, t in enumerate(det_taken) if not t),
        false_negatives=tuple(i for i, t in enumerate(truth_taken) if not t),
    )


def score_reader_polygons(reader_regions: list[Polygon],
                          truths: list[Polygon], dims: tuple[int, int],
                          config: EvalConfig = EvalConfig()) -> MatchOutcome:
    """Score human annotations under the same criterion as detections.

    Each reader polygon becomes the tight box of its rasterization and
    is matched like a system box.  A polygon that rasterizes to zero
    pixels can never match, so it counts directly as a false positive.
    Indices in the outcome refer to positions in ``reader_regions``.
    """
    width, height = dims
    boxes = []
    box_index = []            # position in reader_regions for each box
    degenerate = []
    for i, region in enumerate(reader_regions):
        raster = rasterize_polygon(region, width, height)
        pixels = np.argwhere(raster)
        if len(pixels) == 0:
            degenerate.append(i)
            continue
        boxes.append(Detection(box=tight_bbox(pixels), score=1.0))
        box_index.append(i)
    outcome = match_detections(boxes, truths, dims, config)
    return MatchOutcome(
        matched=tuple((box_index[di], ti, iou)
                      for di, ti, iou in outcome.matched),
        false_positives=tuple(sorted(
            [box_index[di] for di in outcome.false_positives] + degenerate)),
        false_negatives=outcome.false_negatives,
    )


def compute_metrics(tp: int, fp: int, fn: int) -> tuple[float, float, float]:
    """(precision, recall, f1) from counts.

    Conventions: any 0/0 ratio is 0, except the all-zero case
    tp=fp=fn=0, which scores 1.0 across the board (perfect agreement
    that there was nothing to find).
    """
    if min(tp, fp, fn) < 0:
        raise ConfigError("counts must be non-negative")
    if tp == 0 and fp == 0 and fn == 0:
        return 1.0, 1.0, 1.0
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = (2 * precision * recall / (precision + recall)
          if precision + recall else 0.0)
    return precision, recall, f1


def _report_from_counts(tp: int, fp: int, fn: int) -> MetricsReport:
    precision, recall, f1 = compute_metrics(tp, fp, fn)
    return MetricsReport(tp=tp, fp=fp, fn=fn, precision=precision,
                         recall=recall, f1=f1)


def report_from_counts(
        counts_by_reader: dict[str, tuple[int, int, int]]) -> MetricsReport:
    """Build a multi-reader report from raw (tp, fp, fn) count triples.

    Top-level counts mirror the first reader by insertion order, as in
    :func:`aggregate_and_report`.
    """
    if not counts_by_reader:
        raise ConfigError("no counts to report")
    per_reader = {name: _report_from_counts(*counts)
                  for name, counts in counts_by_reader.items()}
    first = next(iter(per_reader.values()))
    return MetricsReport(tp=first.tp, fp=first.fp, fn=first.fn,
                         precision=first.precision, recall=first.recall,
                         f1=first.f1, per_reader=per_reader)


def outcome_counts(outcomes: dict[str, MatchOutcome]) -> tuple[int, int, int]:
    """Sum (tp, fp, fn) over a per-image outcome map."""
    tp = sum(len(o.matched) for o in outcomes.values())
    fp = sum(len(o.false_positives) for o in outcomes.values())
    fn = sum(len(o.false_negatives) for o in outcomes.values())
    return tp, fp, fn


def aggregate_and_report(
        outcomes_by_reader: dict[str, dict[str, MatchOutcome]]
) -> MetricsReport:
    """Corpus totals and metrics for one or more readers.

    ``outcomes_by_reader`` maps reader name to that reader's per-image
    outcomes; every reader must cover the identical image set.  The
    top-level counts mirror the first reader (by insertion order —
    conventionally the system), with every reader listed under
    ``per_reader``.
    """
    if not outcomes_by_reader:
        raise ConfigError("no outcomes to aggregate")
    names = list(outcomes_by_reader)
    image_sets = {name: frozenset(per_image)
                  for name, per_image in outcomes_by_reader.items()}
    reference = image_sets[names[0]]
    for name in names[1:]:
        if image_sets[name] != reference:
            raise ConfigError(
                f"reader {name!r} covers a different image set than "
                f"{names[0]!r}")
    per_reader = {name: _report_from_counts(*outcome_counts(per_image))
                  for name, per_image in outcomes_by_reader.items()}
    first = per_reader[names[0]]
    return MetricsReport(tp=first.tp, fp=first.fp, fn=first.fn,
                         precision=first.precision, recall=first.recall,
                         f1=first.f1, per_reader=per_reader)


def _percent(value: float) -> str:
    """Format a fraction as a percentage, one decimal, half-up."""
    return str(Decimal(repr(value * 100)).quantize(
        Decimal("0.1"), rounding=ROUND_HALF_UP))


def render_table(report: MetricsReport) -> str:
    """Plain-text metrics table: one column per reader.

    Rows are Recall, Precision, F1-Score as percentages rounded
    half-up to one decimal place.
    """
    names = list(report.per_reader) or ["System"]
    readers = report.per_reader or {"System": report}
    rows = [("Recall", "recall"), ("Precision", "precision"),
            ("F1-Score", "f1")]
    cells = {name: {label: _percent(getattr(readers[name], attr))
                    for label, attr in rows} for name in names}
    label_width = max(len(label) for label, _ in rows)
    col_widths = {name: max(len(name), max(len(cells[name][label])
                                           for label, _ in rows))
                  for name in names}
    header = " | ".join([" " * label_width]
                        + [name.rjust(col_widths[name]) for name in names])
    sep = "-+-".join(["-" * label_width]
                     + ["-" * col_widths[name] for name in names])
    lines = [header, sep]
    for label, _ in rows:
        lines.append(" | ".join(
            [label.ljust(label_width)]
            + [cells[name][label].rjust(col_widths[name]) for name in names]))
    return "\n".join(lines)


def report_to_json(report: MetricsReport) -> dict:
    """Serialize a report (counts and metrics per reader) to plain JSON."""
    def entry(r: MetricsReport) -> dict:
        return {"tp": r.tp, "fp": r.fp, "fn": r.fn,
                "precision": r.precision, "recall": r.recall, "f1": r.f1}
    payload = entry(report)
    payload["per_reader"] = {name: entry(r)
                             for name, r in report.per_reader.items()}
    return payload
