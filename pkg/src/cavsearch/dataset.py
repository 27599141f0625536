"""Dataset bookkeeping: sample records, manifest JSON, PGM images, splits.

The manifest is a single JSON document::

    {"samples": [{"image": "img_00000.pgm",
                  "width": 128, "height": 128,
                  "split": "train",                  # optional
                  "regions": [{"points": [[x, y], ...]}, ...]},
                 ...]}

Image paths are relative to the manifest's directory.  Images are 8-bit
binary PGM ("P5") files.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .geometry import Polygon

SPLIT_NAMES = ("train", "val", "test")


@dataclass(frozen=True)
class SampleRecord:
    image_path: str
    width: int
    height: int
    regions: tuple[Polygon, ...] = ()
    split: str | None = None

    def __post_init__(self):
        if self.split is not None and self.split not in SPLIT_NAMES:
            raise ConfigError(f"unknown split label {self.split!r}")
        for poly in self.regions:
            for x, y in poly.vertices:
                if not (0 <= x <= self.width and 0 <= y <= self.height):
                    raise ConfigError(
                        f"{self.image_path}: vertex ({x}, {y}) outside "
                        f"canvas {self.width}x{self.height}"
                    )


@dataclass(frozen=True)
class DatasetManifest:
    records: tuple[SampleRecord, ...] = field(default_factory=tuple)

    def __post_init__(self):
        paths = [r.image_path for r in self.records]
        if len(set(paths)) != len(paths):
            raise ConfigError("manifest contains duplicate image paths")
        labelled = sum(r.split is not None for r in self.records)
        if labelled not in (0, len(self.records)):
            raise ConfigError(
                "split labels must cover every record or be absent entirely"
            )

    def __len__(self) -> int:
        return len(self.records)

    @property
    def has_splits(self) -> bool:
        return bool(self.records) and self.records[0].split is not None

    def subset(self, split: str) -> tuple[SampleRecord, ...]:
        return tuple(r for r in self.records if r.split == split)


def manifest_to_dict(manifest: DatasetManifest) -> dict:
    samples = []
    for rec in manifest.records:
        entry = {
            "image": rec.image_path,
            "width": rec.width,
            "height": rec.height,
        }
        if rec.split is not None:
            entry["split"] = rec.split
        entry["regions"] = [
            {"points": [[x, y] for x, y in poly.vertices]}
            for poly in rec.regions
        ]
        samples.append(entry)
    return {"samples": samples}


def manifest_from_dict(doc: dict) -> DatasetManifest:
    try:
        samples = doc["samples"]
    except (KeyError, TypeError):
        raise ConfigError("manifest JSON must contain a 'samples' list")
    records = []
    for entry in samples:
        regions = tuple(
            Polygon.from_points(region["points"])
            for region in entry.get("regions", [])
        )
        records.append(SampleRecord(
            image_path=entry["image"],
            width=int(entry["width"]),
            height=int(entry["height"]),
            regions=regions,
            split=entry.get("split"),
        ))
    return DatasetManifest(tuple(records))


def save_manifest(manifest: DatasetManifest, path: str | Path) -> None:
    Path(path).write_text(json.dumps(manifest_to_dict(manifest), indent=2)
                          + "\n")


def load_manifest(path: str | Path) -> DatasetManifest:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON: {exc}") from exc
    return manifest_from_dict(doc)


def write_pgm(path: str | Path, image: np.ndarray) -> None:
    """Write a (height, width) uint8 array as binary 8-bit PGM."""
    image = np.asarray(image)
    if image.ndim != 2 or image.dtype != np.uint8:
        raise ValueError(
            f"expected 2-d uint8 image, got {image.dtype} {image.shape}"
        )
    height, width = image.shape
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n255\n" % (width, height))
        fh.write(image.tobytes())


def read_pgm(path: str | Path) -> np.ndarray:
    """Read a binary 8-bit PGM into a (height, width) uint8 array."""
    data = Path(path).read_bytes()
    if not data.startswith(b"P5"):
        raise ValueError(f"{path}: not a binary PGM (missing P5 magic)")
    # header: magic, width, height, maxval as whitespace-separated tokens,
    # with optional '#' comment lines
    tokens: list[int] = []
    pos = 2
    while len(tokens) < 3:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        tokens.append(int(data[start:pos]))
    pos += 1  # single whitespace byte after maxval
    width, height, maxval = tokens
    if maxval != 255:
        raise ValueError(f"{path}: only 8-bit PGM supported, maxval={maxval}")
    pixels = np.frombuffer(data, dtype=np.uint8, count=width * height,
                           offset=pos)
    if pixels.size != width * height:
        raise ValueError(f"{path}: truncated pixel data")
    return pixels.reshape(height, width).copy()


def split_dataset(manifest: DatasetManifest, test_fraction: float,
                  val_fraction_of_train: float, seed: int) -> DatasetManifest:
    """Assign train/val/test labels with a seeded permutation.

    Counts are floor-rounded: ``test = floor(N * test_fraction)``, then
    ``val = floor((N - test) * val_fraction_of_train)`` of the remainder,
    and everything else is train.
    """
    if not (0 <= test_fraction < 1) or not (0 <= val_fraction_of_train < 1):
        raise ConfigError("split fractions must lie in [0, 1)")
    n = len(manifest)
    n_test = math.floor(n * test_fraction)
    n_val = math.floor((n - n_test) * val_fraction_of_train)
    perm = np.random.default_rng(seed).permutation(n)
    labels = [""] * n
    for i in perm[:n_test]:
        labels[i] = "test"
    for i in perm[n_test:n_test + n_val]:
        labels[i] = "val"
    for i in perm[n_test + n_val:]:
        labels[i] = "train"
    records = tuple(
        SampleRecord(r.image_path, r.width, r.height, r.regions, labels[i])
        for i, r in enumerate(manifest.records)
    )
    return DatasetManifest(records)
