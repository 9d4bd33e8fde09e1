"""Polygon boundary prompts: parsing, validation, point membership.

Coordinates are planar (x, y) in whatever consistent units the data uses.
A prompt is one or more polygon parts (exterior ring plus optional holes);
multi-part prompts denote the union of their parts. Rings are stored open
(no closing duplicate) as contiguous float64 arrays.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import InvalidPolygon


def as_ring(coords) -> tuple[np.ndarray, np.ndarray]:
    """Normalize a vertex list to open-form (rx, ry) arrays.

    Accepts closed or open rings; consecutive duplicate vertices are dropped.
    Raises InvalidPolygon for fewer than 3 distinct vertices.
    """
    arr = np.asarray(coords, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 2 or arr.shape[0] < 3:
        raise InvalidPolygon("ring needs at least 3 [x, y] vertices")
    if not np.isfinite(arr).all():
        raise InvalidPolygon("ring has non-finite coordinates")
    if np.array_equal(arr[0], arr[-1]):
        arr = arr[:-1]
    keep = np.ones(len(arr), dtype=bool)
    keep[1:] = (arr[1:] != arr[:-1]).any(axis=1)
    arr = arr[keep]
    if len(arr) < 3:
        raise InvalidPolygon("ring has fewer than 3 distinct vertices")
    return np.ascontiguousarray(arr[:, 0]), np.ascontiguousarray(arr[:, 1])


def _orient(ax, ay, bx, by, cx, cy):
    v = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)
    if v > 0:
        return 1
    if v < 0:
        return -1
    return 0


def _on_segment(ax, ay, bx, by, px, py):
    return min(ax, bx) <= px <= max(ax, bx) and min(ay, by) <= py <= max(ay, by)


def _segments_intersect(ax, ay, bx, by, cx, cy, dx, dy):
    o1 = _orient(ax, ay, bx, by, cx, cy)
    o2 = _orient(ax, ay, bx, by, dx, dy)
    o3 = _orient(cx, cy, dx, dy, ax, ay)
    o4 = _orient(cx, cy, dx, dy, bx, by)
    if o1 != o2 and o3 != o4:
        return True
    if o1 == 0 and _on_segment(ax, ay, bx, by, cx, cy):
        return True
    if o2 == 0 and _on_segment(ax, ay, bx, by, dx, dy):
        return True
    if o3 == 0 and _on_segment(cx, cy, dx, dy, ax, ay):
        return True
    if o4 == 0 and _on_segment(cx, cy, dx, dy, bx, by):
        return True
    return False


def ring_as_rect(rx, ry):
    """(x0, y0, x1, y1) when the ring traces an axis-aligned rectangle,
    else None. Inclusive point-in-polygon over such a ring equals the
    closed-range test, so callers may take a faster path."""
    if len(rx) != 4:
        return None
    xs, ys = set(rx.tolist()), set(ry.tolist())
    if len(xs) != 2 or len(ys) != 2:
        return None
    for i in range(4):
        j = (i + 1) % 4
        if rx[i] != rx[j] and ry[i] != ry[j]:
            return None
    return min(xs), min(ys), max(xs), max(ys)


def ring_is_simple(rx, ry) -> bool:
    """True when no two non-adjacent edges touch and no vertex doubles back."""
    n = len(rx)
    for i in range(n):
        # spike: edge i-1 -> i reversed by edge i -> i+1
        p, q, r = (i - 1) % n, i, (i + 1) % n
        if _orient(rx[p], ry[p], rx[q], ry[q], rx[r], ry[r]) == 0:
            if (rx[p] - rx[q]) * (rx[r] - rx[q]) + (ry[p] - ry[q]) * (ry[r] - ry[q]) > 0:
                return False
    for i in range(n):
        i2 = (i + 1) % n
        for j in range(i + 1, n):
            j2 = (j + 1) % n
            if j == i or j2 == i or i2 == j:
                continue
            if _segments_intersect(
                rx[i], ry[i], rx[i2], ry[i2], rx[j], ry[j], rx[j2], ry[j2]
            ):
                return False
    return True


@dataclass
class PolygonPart:
    exterior: tuple[np.ndarray, np.ndarray]
    holes: list[tuple[np.ndarray, np.ndarray]] = field(default_factory=list)


@dataclass
class BoundaryPrompt:
    """One region boundary: union of polygon parts, each minus its holes."""

    parts: list[PolygonPart]
    label: str | None = None

    @classmethod
    def from_rings(cls, exterior, holes=(), label=None):
        part = PolygonPart(as_ring(exterior), [as_ring(h) for h in holes])
        return cls([part], label=label)

    @classmethod
    def rect(cls, x0, y0, x1, y1, label=None):
        x0, x1 = min(x0, x1), max(x0, x1)
        y0, y1 = min(y0, y1), max(y0, y1)
        return cls.from_rings([[x0, y0], [x1, y0], [x1, y1], [x0, y1]], label=label)

    def validate(self):
        """Raise InvalidPolygon unless every exterior ring is simple."""
        if not self.parts:
            raise InvalidPolygon("boundary prompt has no polygon parts")
        for part in self.parts:
            rx, ry = part.exterior
            if ring_as_rect(rx, ry) is not None:
                continue  # rectangles are simple by construction
            if not ring_is_simple(rx, ry):
                raise InvalidPolygon("exterior ring self-intersects")
        return self

    def bbox(self):
        xs = np.concatenate([p.exterior[0] for p in self.parts])
        ys = np.concatenate([p.exterior[1] for p in self.parts])
        return float(xs.min()), float(ys.min()), float(xs.max()), float(ys.max())

    def translate(self, dx, dy):
        parts = [
            PolygonPart(
                (p.exterior[0] + dx, p.exterior[1] + dy),
                [(hx + dx, hy + dy) for hx, hy in p.holes],
            )
            for p in self.parts
        ]
        return BoundaryPrompt(parts, label=self.label)

    def to_geojson(self):
        polys = []
        for p in self.parts:
            rings = [_close(p.exterior)] + [_close(h) for h in p.holes]
            polys.append(rings)
        if len(polys) == 1:
            return {"type": "Polygon", "coordinates": polys[0]}
        return {"type": "MultiPolygon", "coordinates": polys}


def _close(ring):
    rx, ry = ring
    pts = [[float(x), float(y)] for x, y in zip(rx, ry)]
    pts.append(pts[0])
    return pts


def parse_boundary(obj, label=None) -> BoundaryPrompt:
    """Parse a GeoJSON Polygon/MultiPolygon/Feature or a bare vertex list."""
    if isinstance(obj, BoundaryPrompt):
        return obj
    if isinstance(obj, (list, tuple)):
        return BoundaryPrompt.from_rings(obj, label=label)
    if not isinstance(obj, dict):
        raise InvalidPolygon(f"cannot interpret {type(obj).__name__} as a boundary")
    if obj.get("type") == "Feature":
        props = obj.get("properties") or {}
        return parse_boundary(obj.get("geometry"), label=props.get("label", label))
    gtype = obj.get("type")
    coords = obj.get("coordinates")
    if gtype == "Polygon":
        if not coords:
            raise InvalidPolygon("Polygon has no rings")
        part = PolygonPart(as_ring(coords[0]), [as_ring(h) for h in coords[1:]])
        return BoundaryPrompt([part], label=label)
    if gtype == "MultiPolygon":
        if not coords:
            raise InvalidPolygon("MultiPolygon has no polygons")
        parts = []
        for rings in coords:
            parts.append(PolygonPart(as_ring(rings[0]), [as_ring(h) for h in rings[1:]]))
        return BoundaryPrompt(parts, label=label)
    raise InvalidPolygon(f"unsupported geometry type {gtype!r}")


def points_in_prompt(xs, ys, prompt: BoundaryPrompt) -> np.ndarray:
    """Inclusive membership mask of points in the prompt's union-of-parts."""
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    result = np.zeros(xs.shape, dtype=bool)
    for part in prompt.parts:
        rx, ry = part.exterior
        inside = np.asarray(kernels.points_in_polygon(xs, ys, rx, ry))
        for hx, hy in part.holes:
            if not inside.any():
                break
            inside &= ~np.asarray(kernels.points_in_polygon(xs, ys, hx, hy))
        result |= inside
    return result
