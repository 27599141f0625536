"""Geometry primitives against scalar and exhaustive oracles."""

import numpy as np
import pytest

from cavsearch.errors import EmptyComponentError, InvalidPolygonError
from cavsearch.geometry import (BBox, Polygon, connected_components,
                                jaccard_box_box, jaccard_box_polygon,
                                rasterize_polygon, tight_bbox)

from helpers import flood_components, point_in_polygon, rasterize_oracle


def random_polygon(rng, width, height, max_vertices=12):
    n = int(rng.integers(3, max_vertices + 1))
    pts = rng.uniform(-2.0, [width + 2.0, height + 2.0], size=(n, 2))
    try:
        return Polygon.from_points(pts)
    except InvalidPolygonError:  # pragma: no cover - vanishing probability
        return random_polygon(rng, width, height, max_vertices)


class TestBBox:
    def test_properties(self):
        b = BBox(2, 3, 7, 9)
        assert (b.width, b.height, b.area) == (5, 6, 30)

    def test_degenerate_rejected(self):
        with pytest.raises(ValueError):
            BBox(3, 0, 3, 5)
        with pytest.raises(ValueError):
            BBox(0, 5, 3, 5)

    def test_non_integer_rejected(self):
        with pytest.raises(ValueError):
            BBox(0.5, 0, 2, 2)

    def test_clip(self):
        assert BBox(-3, -3, 4, 5).clip(10, 10) == BBox(0, 0, 4, 5)
        assert BBox(8, 8, 12, 12).clip(10, 10) == BBox(8, 8, 10, 10)
        assert BBox(10, 0, 12, 5).clip(10, 10) is None


class TestPolygon:
    def test_too_few_vertices(self):
        with pytest.raises(InvalidPolygonError):
            Polygon(((0, 0), (1, 1)))

    def test_duplicate_consecutive(self):
        with pytest.raises(InvalidPolygonError):
            Polygon(((0, 0), (0, 0), (1, 1)))

    def test_closure_duplicate(self):
        # last == first counts as consecutive because the polygon closes
        with pytest.raises(InvalidPolygonError):
            Polygon(((0, 0), (2, 0), (1, 1), (0, 0)))


class TestRasterize:
    def test_unit_square_centered(self):
        # square [1,3]x[1,3] covers pixel centers (1.5..2.5)
        mask = rasterize_polygon(
            Polygon(((1, 1), (3, 1), (3, 3), (1, 3))), 5, 5)
        expected = np.zeros((5, 5), dtype=bool)
        expected[1:3, 1:3] = True
        assert np.array_equal(mask, expected)

    def test_matches_scalar_oracle_randomized(self):
        rng = np.random.default_rng(501)
        for _ in range(60):
            poly = random_polygon(rng, 24, 20)
            got = rasterize_polygon(poly, 24, 20)
            want = rasterize_oracle(poly.vertices, 24, 20)
            assert np.array_equal(got, want)

    def test_even_odd_star(self):
        # self-intersecting bow tie: even-odd leaves the crossing hollow
        poly = Polygon(((0, 0), (8, 8), (8, 0), (0, 8)))
        got = rasterize_polygon(poly, 8, 8)
        want = rasterize_oracle(poly.vertices, 8, 8)
        assert np.array_equal(got, want)
        assert not got[4, 4] or not got[3, 3]  # hollow middle region

    def test_vertices_outside_canvas(self):
        poly = Polygon(((-5, -5), (30, -5), (30, 30), (-5, 30)))
        assert rasterize_polygon(poly, 10, 10).all()

    def test_canvas_validation(self):
        with pytest.raises(ValueError):
            rasterize_polygon(Polygon(((0, 0), (1, 0), (1, 1))), 0, 5)


class TestRectanglesExact:
    def test_integer_rectangles_area_and_jaccard(self):
        rng = np.random.default_rng(77)
        for _ in range(100):
            x0, y0 = rng.integers(0, 56, size=2)
            w, h = rng.integers(1, 8, size=2)
            box = BBox(int(x0), int(y0), int(x0 + w), int(y0 + h))
            poly = Polygon(((x0, y0), (x0 + w, y0),
                            (x0 + w, y0 + h), (x0, y0 + h)))
            raster = rasterize_polygon(poly, 64, 64)
            assert int(raster.sum()) == box.area
            iou_poly = jaccard_box_polygon(box, poly, 64, 64)
            assert iou_poly == jaccard_box_box(box, box) == 1.0
            # against a second random box the two routes agree exactly
            ox0, oy0 = rng.integers(0, 56, size=2)
            ow, oh = rng.integers(1, 8, size=2)
            other = BBox(int(ox0), int(oy0), int(ox0 + ow), int(oy0 + oh))
            assert jaccard_box_polygon(other, poly, 64, 64) == \
                jaccard_box_box(other, box)


class TestJaccard:
    def test_disjoint_zero(self):
        assert jaccard_box_box(BBox(0, 0, 2, 2), BBox(5, 5, 7, 7)) == 0.0

    def test_shared_edge_zero(self):
        assert jaccard_box_box(BBox(0, 0, 2, 2), BBox(2, 0, 4, 2)) == 0.0

    def test_known_overlap(self):
        # 2x2 and 2x2 overlapping in a 1x2 strip: 2 / (4 + 4 - 2)
        assert jaccard_box_box(BBox(0, 0, 2, 2), BBox(1, 0, 3, 2)) == 2 / 6

    def test_symmetry_and_range(self):
        rng = np.random.default_rng(13)
        for _ in range(50):
            ax0, ax1 = sorted(int(v) for v in rng.integers(0, 30, 2))
            ay0, ay1 = sorted(int(v) for v in rng.integers(0, 30, 2))
            bx0, bx1 = sorted(int(v) for v in rng.integers(0, 30, 2))
            by0, by1 = sorted(int(v) for v in rng.integers(0, 30, 2))
            if ax0 == ax1 or ay0 == ay1 or bx0 == bx1 or by0 == by1:
                continue
            a = BBox(ax0, ay0, ax1, ay1)
            b = BBox(bx0, by0, bx1, by1)
            assert jaccard_box_box(a, b) == jaccard_box_box(b, a)
            assert 0.0 <= jaccard_box_box(a, b) <= 1.0

    def test_box_outside_canvas_clipped(self):
        poly = Polygon(((0, 0), (4, 0), (4, 4), (0, 4)))
        box = BBox(-4, -4, 4, 4)  # half off-canvas; clipped to 4x4
        assert jaccard_box_polygon(box, poly, 8, 8) == 1.0


class TestComponents:
    def test_empty(self):
        assert connected_components(np.zeros((4, 4), dtype=bool)) == []

    def test_diagonal_is_connected(self):
        mask = np.eye(5, dtype=bool)
        comps = connected_components(mask)
        assert len(comps) == 1
        assert len(comps[0]) == 5

    def test_matches_flood_fill_randomized(self):
        rng = np.random.default_rng(99)
        for _ in range(40):
            mask = rng.random((16, 16)) < 0.35
            got = [set(map(tuple, c)) for c in connected_components(mask)]
            want = flood_components(mask)
            assert got == want

    def test_rejects_non_2d(self):
        with pytest.raises(ValueError):
            connected_components(np.zeros((2, 2, 2), dtype=bool))


class TestTightBBox:
    def test_single_pixel(self):
        assert tight_bbox(np.array([[3, 5]])) == BBox(5, 3, 6, 4)

    def test_spread_pixels(self):
        pixels = np.array([[2, 7], [5, 1], [3, 4]])
        assert tight_bbox(pixels) == BBox(1, 2, 8, 6)

    def test_empty_rejected(self):
        with pytest.raises(EmptyComponentError):
            tight_bbox(np.empty((0, 2), dtype=int))


class TestScalarOracleSelfCheck:
    def test_point_in_square(self):
        square = ((1, 1), (3, 1), (3, 3), (1, 3))
        assert point_in_polygon(2.0, 2.0, square)
        assert not point_in_polygon(0.5, 2.0, square)
        assert not point_in_polygon(3.5, 2.0, square)
