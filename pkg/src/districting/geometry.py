"""Planar geometry helpers: minimum enclosing circle and Reock compactness."""

import math

import numpy as np
import shapely
from shapely.geometry import MultiPolygon, Polygon
from shapely.ops import unary_union


def _circle_two(a, b):
    cx, cy = (a[0] + b[0]) / 2.0, (a[1] + b[1]) / 2.0
    return cx, cy, math.hypot(a[0] - cx, a[1] - cy)


def _circle_three(a, b, c):
    ax, ay = a
    bx, by = b
    cx, cy = c
    d = 2.0 * (ax * (by - cy) + bx * (cy - ay) + cx * (ay - by))
    if abs(d) < 1e-14:
        # collinear: the widest pair spans the other point
        pairs = [_circle_two(a, b), _circle_two(a, c), _circle_two(b, c)]
        return max(pairs, key=lambda t: t[2])
    a2, b2, c2 = ax * ax + ay * ay, bx * bx + by * by, cx * cx + cy * cy
    ux = (a2 * (by - cy) + b2 * (cy - ay) + c2 * (ay - by)) / d
    uy = (a2 * (cx - bx) + b2 * (ax - cx) + c2 * (bx - ax)) / d
    return ux, uy, math.hypot(ax - ux, ay - uy)


def _inside(circle, p, tol=1e-10):
    return math.hypot(p[0] - circle[0], p[1] - circle[1]) <= circle[2] * (1 + tol) + tol


def minimum_enclosing_circle(points, seed=0):
    """Smallest circle containing ``points`` as ``(cx, cy, r)``.

    Iterative form of Welzl's move-to-front algorithm on a shuffled copy of
    the points; expected linear time.
    """
    pts = [tuple(map(float, p)) for p in np.asarray(points, dtype=float).reshape(-1, 2)]
    if not pts:
        raise ValueError("no points")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(pts))
    pts = [pts[i] for i in order]

    circle = (pts[0][0], pts[0][1], 0.0)
    for i in range(1, len(pts)):
        p = pts[i]
        if _inside(circle, p):
            continue
        circle = (p[0], p[1], 0.0)
        for j in range(i):
            q = pts[j]
            if _inside(circle, q):
                continue
            circle = _circle_two(p, q)
            for m in range(j):
                r = pts[m]
                if not _inside(circle, r):
                    circle = _circle_three(p, q, r)
    return circle


def boundary_points(geom):
    """Exterior ring vertices of a polygon or multipolygon, as an (n, 2) array."""
    if isinstance(geom, Polygon):
        parts = [geom]
    elif isinstance(geom, MultiPolygon):
        parts = list(geom.geoms)
    else:
        parts = [g for g in getattr(geom, "geoms", []) if isinstance(g, Polygon)]
    coords = [np.asarray(p.exterior.coords)[:-1] for p in parts]
    return np.vstack(coords)


def reock_score(geom):
    """Area of ``geom`` over the area of its minimum enclosing circle."""
    cx, cy, r = minimum_enclosing_circle(boundary_points(geom))
    if r <= 0:
        return 1.0
    return min(1.0, geom.area / (math.pi * r * r))


def union(polygons):
    return unary_union(list(polygons))


def sample_in_polygon(poly, n, rng, max_iter=10_000):
    """Uniform points inside ``poly`` via bounding-box rejection.

    Raises RuntimeError when a point cannot be placed within ``max_iter``
    rejection rounds (pathological slivers).
    """
    out = np.empty((n, 2))
    if n == 0:
        return out
    minx, miny, maxx, maxy = poly.bounds
    filled = 0
    rounds = 0
    batch = max(8, int(1.5 * n))
    while filled < n:
        rounds += 1
        if rounds > max_iter:
            raise RuntimeError("rejection sampling failed to place a point inside the polygon")
        xs = rng.uniform(minx, maxx, batch)
        ys = rng.uniform(miny, maxy, batch)
        ok = shapely.contains_xy(poly, xs, ys)
        k = min(int(ok.sum()), n - filled)
        if k:
            out[filled:filled + k, 0] = xs[ok][:k]
            out[filled:filled + k, 1] = ys[ok][:k]
            filled += k
    return out
