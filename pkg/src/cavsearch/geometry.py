"""Raster and polygon geometry.

Raster carriers are plain numpy arrays indexed ``[row, col]``:

* grayscale image -- ``uint8`` array of shape ``(height, width)``
* binary mask     -- ``bool`` array of shape ``(height, width)``
* probability map -- ``float32`` array of shape ``(height, width)``

Pixel ``(row r, col c)`` covers the unit square ``[c, c+1) x [r, r+1)``
and its center is ``(c + 0.5, r + 0.5)`` in continuous coordinates.
Bounding boxes are half-open integer rectangles, so a box's pixel set is
``rows y_min..y_max-1, cols x_min..x_max-1``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import EmptyComponentError, InvalidPolygonError

# 8-connectivity: diagonal neighbours belong to the same component.
_STRUCTURE_8 = np.ones((3, 3), dtype=bool)


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box in half-open integer pixel coordinates."""

    x_min: int
    y_min: int
    x_max: int
    y_max: int

    def __post_init__(self):
        for name in ("x_min", "y_min", "x_max", "y_max"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)):
                raise ValueError(f"BBox.{name} must be an integer, got {v!r}")
            object.__setattr__(self, name, int(v))
        if self.x_min >= self.x_max or self.y_min >= self.y_max:
            raise ValueError(
                f"degenerate box ({self.x_min}, {self.y_min}, "
                f"{self.x_max}, {self.y_max})"
            )

    @property
    def width(self) -> int:
        return self.x_max - self.x_min

    @property
    def height(self) -> int:
        return self.y_max - self.y_min

    @property
    def area(self) -> int:
        return self.width * self.height

    def clip(self, width: int, height: int) -> "BBox | None":
        """Intersect with the canvas ``[0, width) x [0, height)``.

        Returns None when the box lies entirely outside the canvas.
        """
        x0 = max(self.x_min, 0)
        y0 = max(self.y_min, 0)
        x1 = min(self.x_max, width)
        y1 = min(self.y_max, height)
        if x0 >= x1 or y0 >= y1:
            return None
        return BBox(x0, y0, x1, y1)


@dataclass(frozen=True)
class Polygon:
    """Implicitly closed polygon with vertices in continuous pixel units."""

    vertices: tuple[tuple[float, float], ...]

    def __post_init__(self):
        verts = tuple((float(x), float(y)) for x, y in self.vertices)
        object.__setattr__(self, "vertices", verts)
        if len(verts) < 3:
            raise InvalidPolygonError(
                f"polygon needs at least 3 vertices, got {len(verts)}"
            )
        n = len(verts)
        for i in range(n):
            if verts[i] == verts[(i + 1) % n]:
                raise InvalidPolygonError(
                    f"consecutive duplicate vertex at index {i}: {verts[i]}"
                )

    @classmethod
    def from_points(cls, points) -> "Polygon":
        return cls(tuple((float(p[0]), float(p[1])) for p in points))


def rasterize_polygon(poly: Polygon, width: int, height: int) -> np.ndarray:
    """Fill a polygon onto a ``height x width`` boolean mask.

    A pixel is foreground iff its center lies inside the polygon under
    the even-odd rule.  Vertices may lie outside the canvas; only the
    canvas pixels are evaluated.
    """
    if width < 1 or height < 1:
        raise ValueError(f"canvas must be at least 1x1, got {width}x{height}")
    px = np.arange(width, dtype=np.float64) + 0.5        # (W,)
    py = (np.arange(height, dtype=np.float64) + 0.5)[:, None]  # (H, 1)
    inside = np.zeros((height, width), dtype=bool)
    verts = poly.vertices
    n = len(verts)
    for i in range(n):
        x1, y1 = verts[i]
        x2, y2 = verts[(i + 1) % n]
        if y1 == y2:
            continue  # horizontal edges never cross a scan ray
        straddles = (y1 > py) != (y2 > py)               # (H, 1)
        # x where the edge crosses the pixel row; evaluated with the same
        # expression the scalar point-in-polygon test uses
        x_cross = x1 + (py - y1) * (x2 - x1) / (y2 - y1)  # (H, 1)
        inside ^= straddles & (px < x_cross)
    return inside


def connected_components(mask: np.ndarray) -> list[np.ndarray]:
    """Split a boolean mask into 8-connected foreground components.

    Each component is an ``(n, 2)`` int array of ``(row, col)`` pixels in
    row-major order.  Components are ordered by their smallest (row, col)
    member, so the output is independent of labelling internals.
    """
    mask = np.asarray(mask, dtype=bool)
    if mask.ndim != 2:
        raise ValueError(f"mask must be 2-d, got shape {mask.shape}")
    labels, count = ndimage.label(mask, structure=_STRUCTURE_8)
    if count == 0:
        return []
    flat = labels.ravel()
    positions = np.flatnonzero(flat)                      # row-major order
    labs = flat[positions]
    # rank labels by first appearance so ordering never depends on how
    # scipy numbers the features
    uniq, first = np.unique(labs, return_index=True)
    rank_of = np.empty(uniq.max() + 1, dtype=np.intp)
    rank_of[uniq[np.argsort(first)]] = np.arange(len(uniq))
    order = np.argsort(rank_of[labs], kind="stable")
    sorted_pos = positions[order]
    counts = np.bincount(rank_of[labs], minlength=len(uniq))
    rows, cols = np.divmod(sorted_pos, mask.shape[1])
    pixels = np.stack([rows, cols], axis=1)
    return list(np.split(pixels, np.cumsum(counts)[:-1]))


def tight_bbox(component: np.ndarray) -> BBox:
    """Minimal half-open box containing every (row, col) pixel given."""
    comp = np.asarray(component, dtype=np.int64)
    if comp.size == 0:
        raise EmptyComponentError("cannot bound an empty component")
    comp = comp.reshape(-1, 2)
    rows, cols = comp[:, 0], comp[:, 1]
    return BBox(
        x_min=int(cols.min()),
        y_min=int(rows.min()),
        x_max=int(cols.max()) + 1,
        y_max=int(rows.max()) + 1,
    )


def _jaccard_box_raster(box: BBox, raster: np.ndarray) -> float:
    """IoU between a box (clipped to the raster canvas) and a boolean mask."""
    height, width = raster.shape
    clipped = box.clip(width, height)
    fg = int(raster.sum())
    if clipped is None:
        return 0.0
    inter = int(raster[clipped.y_min:clipped.y_max,
                       clipped.x_min:clipped.x_max].sum())
    union = clipped.area + fg - inter
    if union == 0:
        return 0.0
    return inter / union


def jaccard_box_polygon(box: BBox, poly: Polygon,
                        width: int, height: int) -> float:
    """Pixel-set IoU between a box and a polygon on a given canvas.

    Both shapes are reduced to pixel sets with the same pixel-center
    rasterization rule; the box is clipped to the canvas first.
    """
    return _jaccard_box_raster(box, rasterize_polygon(poly, width, height))


def jaccard_box_box(a: BBox, b: BBox) -> float:
    """Analytic IoU between two half-open integer boxes."""
    ix = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    iy = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    union = a.area + b.area - inter
    return inter / union
