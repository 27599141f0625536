"""Phantom-radiograph lesion detection pipeline.

Synthesizes deterministic phantom radiographs with loose polygon
annotations, trains a small fully convolutional encoder-decoder to
produce per-pixel lesion probabilities, extracts bounding-box
detections from the probability maps, and scores detection quality by
IoU-matched precision/recall.  The :mod:`cavsearch.cli` module wires
the stages into a command-line pipeline.
"""

from .dataset import (
    DatasetManifest,
    SampleRecord,
    load_manifest,
    read_pgm,
    save_manifest,
    split_dataset,
    write_pgm,
)
from .errors import (
    CavSearchError,
    CheckpointFormatError,
    ConfigError,
    EmptyComponentError,
    InvalidPolygonError,
    ShapeError,
)
from .evaluation import (
    EvalConfig,
    MatchOutcome,
    MetricsReport,
    aggregate_and_report,
    compute_metrics,
    match_detections,
    render_table,
    score_reader_polygons,
)
from .fcnn import (
    Checkpoint,
    NetworkConfig,
    TrainConfig,
    UNet,
    load_checkpoint,
    save_checkpoint,
    train,
)
from .geometry import (
    BBox,
    Polygon,
    connected_components,
    jaccard_box_box,
    jaccard_box_polygon,
    rasterize_polygon,
    tight_bbox,
)
from .postprocess import (
    Detection,
    PostprocessConfig,
    calibrate_threshold,
    detect,
    load_predictions,
    save_predictions,
)
from .synth import PhantomConfig, generate_dataset, render_sample

__version__ = "0.1.0"

__all__ = [
    "BBox",
    "CavSearchError",
    "Checkpoint",
    "CheckpointFormatError",
    "ConfigError",
    "DatasetManifest",
    "Detection",
    "EmptyComponentError",
    "EvalConfig",
    "InvalidPolygonError",
    "MatchOutcome",
    "MetricsReport",
    "NetworkConfig",
    "PhantomConfig",
    "Polygon",
    "PostprocessConfig",
    "SampleRecord",
    "ShapeError",
    "TrainConfig",
    "UNet",
    "aggregate_and_report",
    "calibrate_threshold",
    "compute_metrics",
    "connected_components",
    "detect",
    "generate_dataset",
    "jaccard_box_box",
    "jaccard_box_polygon",
    "load_checkpoint",
    "load_manifest",
    "load_predictions",
    "match_detections",
    "rasterize_polygon",
    "read_pgm",
    "render_sample",
    "render_table",
    "save_checkpoint",
    "save_manifest",
    "save_predictions",
    "score_reader_polygons",
    "split_dataset",
    "tight_bbox",
    "train",
    "write_pgm",
    "__version__",
]
