"""Triangulated surface over sensor points: build, query, aggregate.

Triangulation is incremental Bowyer-Watson over a super-triangle, run in
similarity-normalized coordinates for numerical headroom, followed by a
Lawson flip pass that restores the empty-circumcircle property on every
interior edge. Points are inserted in lexicographic order, which also
settles cocircular ties deterministically. Queries interpolate
barycentrically inside the containing triangle and report out-of-hull
queries as ``None`` rather than extrapolating.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .datamodel import write_csv
from .errors import CollinearInputError, DuplicatePointError, ValidationError

_INCIRCLE_EPS = 1e-12
_BARY_EPS = 1e-9


def _orient(a, b, c) -> float:
    return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])


def in_circumcircle(a, b, c, d, eps: float = _INCIRCLE_EPS) -> bool:
    """Strictly inside the circumcircle of (a, b, c)? Cocircular-within-eps
    counts as outside, which is what makes tie handling deterministic."""
    if _orient(a, b, c) < 0:
        b, c = c, b
    rows = []
    for p in (a, b, c):
        dx, dy = p[0] - d[0], p[1] - d[1]
        rows.append((dx, dy, dx * dx + dy * dy))
    (ax, ay, az), (bx, by, bz), (cx, cy, cz) = rows
    det = (ax * (by * cz - bz * cy)
           - ay * (bx * cz - bz * cx)
           + az * (bx * cy - by * cx))
    return det > eps


@dataclass(frozen=True, eq=False)
class TriangulatedSurface:
    """Delaunay triangulation of (x, y) sensor points carrying values."""

    points: np.ndarray
    values: np.ndarray
    triangles: tuple[tuple[int, int, int], ...]

    def __post_init__(self):
        points = np.asarray(self.points, dtype=float)
        values = np.asarray(self.values, dtype=float)
        points.setflags(write=False)
        values.setflags(write=False)
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "values", values)

    @property
    def hull_edges(self) -> list[tuple[int, int]]:
        """Edges (as sorted index pairs) on the convex hull boundary."""
        count: dict[tuple[int, int], int] = {}
        for tri in self.triangles:
            for e in ((tri[0], tri[1]), (tri[1], tri[2]), (tri[0], tri[2])):
                e = (min(e), max(e))
                count[e] = count.get(e, 0) + 1
        return sorted(e for e, c in count.items() if c == 1)


def triangulate(points: Sequence[tuple[float, float, float]]) -> TriangulatedSurface:
    """Delaunay-triangulate (x, y, value) points by Bowyer-Watson."""
    raw = np.asarray([(p[0], p[1], p[2]) for p in points], dtype=float)
    if raw.ndim != 2 or raw.shape[0] < 3:
        raise ValidationError("need at least 3 points")
    if not np.all(np.isfinite(raw)):
        raise ValidationError("points must be finite")
    xy = raw[:, :2]
    values = raw[:, 2]
    seen: dict[tuple[float, float], int] = {}
    for i, p in enumerate(map(tuple, xy)):
        if p in seen:
            raise DuplicatePointError(f"points {seen[p]} and {i} coincide at {p}")
        seen[p] = i

    # similarity-normalize: translation + uniform scale preserve circles
    lo = xy.min(axis=0)
    span = float(max(np.ptp(xy[:, 0]), np.ptp(xy[:, 1])))
    if span == 0.0:
        raise CollinearInputError("all points coincide on a degenerate segment")
    q = (xy - lo) / span

    a0 = q[0]
    ref = next((p for p in q[1:] if not np.array_equal(p, a0)), None)
    if ref is None or all(abs(_orient(a0, ref, p)) <= 1e-12 for p in q):
        raise CollinearInputError("all points are collinear")

    n = len(q)
    verts = np.vstack([q, [[-40.0, -40.0], [40.0, -40.0], [0.0, 80.0]]])
    super_ids = {n, n + 1, n + 2}
    triangles: set[tuple[int, int, int]] = {(n, n + 1, n + 2)}

    order = sorted(range(n), key=lambda i: (q[i, 0], q[i, 1]))
    for pi in order:
        p = verts[pi]
        bad = [t for t in triangles
               if in_circumcircle(verts[t[0]], verts[t[1]], verts[t[2]], p)]
        edge_count: dict[tuple[int, int], int] = {}
        for t in bad:
            for e in ((t[0], t[1]), (t[1], t[2]), (t[0], t[2])):
                e = (min(e), max(e))
                edge_count[e] = edge_count.get(e, 0) + 1
        triangles.difference_update(bad)
        for (u, v), c in edge_count.items():
            if c == 1:
                triangles.add(tuple(sorted((u, v, pi))))

    triangles = {t for t in triangles if not (set(t) & super_ids)}
    triangles = _lawson_flips(verts, triangles)
    ordered = tuple(sorted(tuple(sorted(t)) for t in triangles))
    return TriangulatedSurface(xy, values, ordered)


def _lawson_flips(verts: np.ndarray, triangles: set[tuple[int, int, int]],
                  max_rounds: int = 64) -> set[tuple[int, int, int]]:
    """Flip interior edges until every one is locally Delaunay."""
    for _ in range(max_rounds):
        by_edge: dict[tuple[int, int], list[tuple[int, int, int]]] = {}
        for t in triangles:
            for e in ((t[0], t[1]), (t[1], t[2]), (t[0], t[2])):
                by_edge.setdefault((min(e), max(e)), []).append(t)
        flipped = False
        for (u, v), tris in by_edge.items():
            if len(tris) != 2:
                continue
            t1, t2 = tris
            if t1 not in triangles or t2 not in triangles:
                continue
            c = next(i for i in t1 if i not in (u, v))
            d = next(i for i in t2 if i not in (u, v))
            if in_circumcircle(verts[u], verts[v], verts[c], verts[d]):
                triangles.discard(t1)
                triangles.discard(t2)
                triangles.add(tuple(sorted((u, c, d))))
                triangles.add(tuple(sorted((v, c, d))))
                flipped = True
        if not flipped:
            return triangles
    raise ValidationError("edge flipping did not converge")


# ---------------------------------------------------------------------------
# Queries
# ---------------------------------------------------------------------------

def interpolate(surface: TriangulatedSurface, q) -> float | None:
    """Barycentric value at q, or None outside the convex hull."""
    qx, qy = float(q[0]), float(q[1])
    pts = surface.points
    exact = np.nonzero((pts[:, 0] == qx) & (pts[:, 1] == qy))[0]
    if len(exact):
        return float(surface.values[exact[0]])
    for i, j, k in surface.triangles:
        lam = _barycentric(pts[i], pts[j], pts[k], (qx, qy))
        if lam is not None:
            vi, vj, vk = surface.values[[i, j, k]]
            return float(lam[0] * vi + lam[1] * vj + lam[2] * vk)
    return None


def _barycentric(a, b, c, q):
    det = (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1])
    if det == 0.0:
        return None
    l1 = ((q[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (q[1] - a[1])) / det
    l2 = ((b[0] - a[0]) * (q[1] - a[1]) - (q[0] - a[0]) * (b[1] - a[1])) / det
    l0 = 1.0 - l1 - l2
    if l0 < -_BARY_EPS or l1 < -_BARY_EPS or l2 < -_BARY_EPS:
        return None
    return (l0, l1, l2)


def point_in_polygon(q, rings: Sequence[Sequence[tuple[float, float]]]) -> bool:
    """Even-odd rule over all rings of a polygon."""
    qx, qy = float(q[0]), float(q[1])
    inside = False
    for ring in rings:
        m = len(ring)
        for i in range(m):
            x1, y1 = ring[i]
            x2, y2 = ring[(i + 1) % m]
            if (y1 > qy) != (y2 > qy):
                x_cross = x1 + (qy - y1) * (x2 - x1) / (y2 - y1)
                if qx < x_cross:
                    inside = not inside
    return inside


def aggregate_regions(surface: TriangulatedSurface,
                      polygons: Mapping[str, Sequence[Sequence[tuple[float, float]]]],
                      grid_step: float) -> dict[str, float]:
    """Mean interpolated value over grid points inside polygon and hull.

    Regions whose grid intersects neither the polygon nor the hull are
    absent from the result.
    """
    if grid_step <= 0:
        raise ValidationError("grid_step must be > 0")
    out: dict[str, float] = {}
    for name, rings in polygons.items():
        coords = np.asarray([p for ring in rings for p in ring], dtype=float)
        if coords.size == 0:
            continue
        xmin, ymin = coords.min(axis=0)
        xmax, ymax = coords.max(axis=0)
        xs = np.arange(xmin + grid_step / 2.0, xmax, grid_step)
        ys = np.arange(ymin + grid_step / 2.0, ymax, grid_step)
        total, count = 0.0, 0
        for y in ys:
            for x in xs:
                if not point_in_polygon((x, y), rings):
                    continue
                value = interpolate(surface, (x, y))
                if value is not None:
                    total += value
                    count += 1
        if count:
            out[name] = total / count
    return out


# ---------------------------------------------------------------------------
# I/O: raster export and GeoJSON-subset polygons
# ---------------------------------------------------------------------------

def export_raster(surface: TriangulatedSurface, grid_step: float, path,
                  comment: str | None = None) -> None:
    """Write the interpolated surface on a regular grid to surface.csv."""
    if grid_step <= 0:
        raise ValidationError("grid_step must be > 0")
    pts = surface.points
    xs = np.arange(pts[:, 0].min(), pts[:, 0].max() + grid_step / 2.0, grid_step)
    ys = np.arange(pts[:, 1].min(), pts[:, 1].max() + grid_step / 2.0, grid_step)

    def rows():
        for y in ys:
            for x in xs:
                value = interpolate(surface, (x, y))
                yield [x, y, "" if value is None else value,
                       0 if value is None else 1]

    full_comment = f"grid_step={grid_step!r}" + (f" {comment}" if comment else "")
    write_csv(path, ["x", "y", "value", "in_hull"], rows(), comment=full_comment)


def load_polygons(path) -> dict[str, list[list[tuple[float, float]]]]:
    """Read a GeoJSON subset: Polygon features named via properties.name."""
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    features = doc.get("features", []) if doc.get("type") == "FeatureCollection" else [doc]
    out: dict[str, list[list[tuple[float, float]]]] = {}
    for i, feat in enumerate(features):
        geom = feat.get("geometry", feat)
        if geom.get("type") != "Polygon":
            raise ValidationError(f"{path}: feature {i} is not a Polygon")
        name = feat.get("properties", {}).get("name", f"region_{i}")
        rings = [[(float(x), float(y)) for x, y in ring]
                 for ring in geom["coordinates"]]
        out[name] = rings
    return out
