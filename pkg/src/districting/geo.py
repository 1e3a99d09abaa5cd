"""City graphs of basic units, GeoJSON ingestion and synthetic instance generation."""

from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
import shapely
from shapely.geometry import MultiPoint, Polygon, box, mapping, shape
from shapely.strtree import STRtree

from .geometry import reock_score, union

EARTH_RADIUS_KM = 6371.0088
POP_MEAN, POP_STD = 8000.0, 2000.0
POP_LOW, POP_HIGH = 5000.0, 20000.0
NODE_FEATURES = ("population", "density", "area", "perimeter", "compactness", "depot_distance")
EDGE_FEATURE_DIM = len(NODE_FEATURES) + 1


class GeoError(ValueError):
    pass


class DisconnectedGraphError(GeoError):
    def __init__(self, components):
        self.components = components
        sizes = ", ".join(str(sorted(c)[:5]) + ("..." if len(c) > 5 else "") for c in components)
        super().__init__(f"adjacency graph has {len(components)} components: {sizes}")


@dataclass(frozen=True, eq=False)
class BasicUnit:
    id: int
    polygon: Polygon
    population: float
    depot_distance: float
    area: float = field(init=False)
    perimeter: float = field(init=False)
    compactness: float = field(init=False)

    def __post_init__(self):
        if self.population < 1:
            raise GeoError(f"unit {self.id}: population must be >= 1")
        area = float(self.polygon.area)
        if not area > 0:
            raise GeoError(f"unit {self.id}: polygon has no area")
        object.__setattr__(self, "area", area)
        object.__setattr__(self, "perimeter", float(self.polygon.length))
        object.__setattr__(self, "compactness", reock_score(self.polygon))

    @property
    def density(self):
        return self.population / self.area

    @cached_property
    def centroid(self):
        c = self.polygon.centroid
        return np.array([c.x, c.y])

    def node_features(self):
        return np.array([self.population, self.density, self.area, self.perimeter,
                         self.compactness, self.depot_distance])


@dataclass(frozen=True, eq=False)
class CityGraph:
    units: tuple
    edges: tuple
    depot: tuple
    name: str = ""

    def __post_init__(self):
        n = len(self.units)
        seen = set()
        for u, v in self.edges:
            if u == v:
                raise GeoError(f"self-loop on vertex {u}")
            if not (0 <= u < n and 0 <= v < n):
                raise GeoError(f"edge ({u}, {v}) out of range")
            key = (min(u, v), max(u, v))
            if key in seen:
                raise GeoError(f"duplicate edge {key}")
            seen.add(key)
        comps = connected_components(n, self.edges)
        if len(comps) > 1:
            raise DisconnectedGraphError(comps)

    @property
    def n(self):
        return len(self.units)

    @cached_property
    def adjacency(self):
        adj = [set() for _ in range(self.n)]
        for u, v in self.edges:
            adj[u].add(v)
            adj[v].add(u)
        return [frozenset(a) for a in adj]

    @cached_property
    def edge_index(self):
        return {(min(u, v), max(u, v)): i for i, (u, v) in enumerate(self.edges)}

    @cached_property
    def centroids(self):
        return np.array([u.centroid for u in self.units])

    @cached_property
    def populations(self):
        return np.array([u.population for u in self.units], dtype=float)

    @cached_property
    def areas(self):
        return np.array([u.area for u in self.units])

    def polygons(self, vertices=None):
        idx = range(self.n) if vertices is None else vertices
        return [self.units[i].polygon for i in idx]

    def is_connected(self, vertices):
        return is_connected_subset(vertices, self.adjacency)

    def induced_edges(self, vertices):
        vs = set(vertices)
        return [i for i, (u, v) in enumerate(self.edges) if u in vs and v in vs]

    def subgraph(self, vertices, depot=None, populations=None, name=None):
        """Induced subgraph re-indexed in the order of ``vertices``."""
        vertices = list(vertices)
        pos = {v: i for i, v in enumerate(vertices)}
        edges = []
        for u, v in self.edges:
            if u in pos and v in pos:
                a, b = pos[u], pos[v]
                edges.append((min(a, b), max(a, b)))
        edges.sort()
        polys = [self.units[v].polygon for v in vertices]
        pops = [self.units[v].population for v in vertices] if populations is None else populations
        return build_city(polys, pops, depot=self.depot if depot is None else depot,
                          edges=edges, name=self.name if name is None else name)


def connected_components(n, edges):
    adj = [[] for _ in range(n)]
    for u, v in edges:
        adj[u].append(v)
        adj[v].append(u)
    seen = [False] * n
    comps = []
    for s in range(n):
        if seen[s]:
            continue
        comp = [s]
        seen[s] = True
        q = deque([s])
        while q:
            x = q.popleft()
            for y in adj[x]:
                if not seen[y]:
                    seen[y] = True
                    comp.append(y)
                    q.append(y)
        comps.append(sorted(comp))
    return comps


def is_connected_subset(vertices, adjacency):
    vs = set(vertices)
    if not vs:
        return False
    start = next(iter(vs))
    seen = {start}
    stack = [start]
    while stack:
        x = stack.pop()
        for y in adjacency[x]:
            if y in vs and y not in seen:
                seen.add(y)
                stack.append(y)
    return len(seen) == len(vs)


def polygon_adjacency(polygons, tol=1e-9):
    """Pairs of polygons whose shared boundary has positive length."""
    tree = STRtree(polygons)
    edges = []
    for i, p in enumerate(polygons):
        for j in tree.query(p, predicate="intersects"):
            j = int(j)
            if j <= i:
                continue
            shared = p.boundary.intersection(polygons[j].boundary)
            if shared.length > tol:
                edges.append((i, j))
    edges.sort()
    return edges


def build_city(polygons, populations, depot=None, edges=None, name=""):
    polygons = list(polygons)
    if depot is None:
        c = union(polygons).centroid
        depot = (c.x, c.y)
    depot = (float(depot[0]), float(depot[1]))
    if edges is None:
        edges = polygon_adjacency(polygons)
    dp = np.array(depot)
    units = []
    for i, (poly, pop) in enumerate(zip(polygons, populations)):
        c = poly.centroid
        units.append(BasicUnit(i, poly, float(pop), float(np.hypot(c.x - dp[0], c.y - dp[1]))))
    return CityGraph(tuple(units), tuple((int(u), int(v)) for u, v in edges), depot, name)


# ---------------------------------------------------------------- instances

def size_bounds(t):
    """Integer (lower, upper) district sizes inside t +/- 20%."""
    return -(-4 * t // 5), (6 * t) // 5


@dataclass(frozen=True, eq=False)
class Instance:
    graph: CityGraph
    edge_features: np.ndarray
    target_size: int
    size_bounds: tuple
    num_districts: int
    seed: int | None = None

    def __post_init__(self):
        lo, hi = self.size_bounds
        if not (1 <= lo <= hi):
            raise GeoError(f"invalid size bounds {self.size_bounds}")
        if self.num_districts < 1:
            raise GeoError("need at least one district")
        if self.edge_features.shape != (len(self.graph.edges), EDGE_FEATURE_DIM):
            raise GeoError("edge features do not match the edge list")

    @property
    def n(self):
        return self.graph.n

    @property
    def n_edges(self):
        return len(self.graph.edges)

    @property
    def kappa(self):
        """Requests per inhabitant so that a district of size t sees ~96 stops."""
        return 96.0 / (8000.0 * self.target_size)


def node_feature_matrix(graph):
    return np.array([u.node_features() for u in graph.units])


def compute_features(graph):
    """Edge feature matrix: endpoint-mean node features plus centroid distance."""
    nodes = node_feature_matrix(graph)
    cent = graph.centroids
    out = np.empty((len(graph.edges), EDGE_FEATURE_DIM))
    for i, (u, v) in enumerate(graph.edges):
        out[i, :-1] = 0.5 * (nodes[u] + nodes[v])
        out[i, -1] = float(np.hypot(*(cent[u] - cent[v])))
    return out


def make_instance(graph, t, bounds=None, k=None, seed=None):
    if bounds is None:
        bounds = size_bounds(t)
    if k is None:
        k = graph.n // t
    return Instance(graph, compute_features(graph), int(t), (int(bounds[0]), int(bounds[1])), int(k), seed)


# ----------------------------------------------------------------- geojson

def _project(lon, lat, lon0, lat0):
    x = np.radians(np.asarray(lon) - lon0) * math.cos(math.radians(lat0)) * EARTH_RADIUS_KM
    y = np.radians(np.asarray(lat) - lat0) * EARTH_RADIUS_KM
    return x, y


def load_geojson(path, depot=None, projected=None):
    """Read a FeatureCollection of polygons into a :class:`CityGraph`.

    Longitude/latitude coordinates are projected to km about the dataset
    centroid unless the collection is marked ``"projected": true`` (as the
    files written by :func:`write_geojson` are) or ``projected`` is given.
    """
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise GeoError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(doc, dict) or doc.get("type") != "FeatureCollection":
        raise GeoError(f"{path}: expected a GeoJSON FeatureCollection")
    feats = doc.get("features")
    if not isinstance(feats, list) or not feats:
        raise GeoError(f"{path}: no features")
    geoms, pops = [], []
    for i, f in enumerate(feats):
        try:
            g = shape(f["geometry"])
            pop = f["properties"]["population"]
        except (KeyError, TypeError, AttributeError, ValueError) as exc:
            raise GeoError(f"{path}: feature {i} malformed ({exc!r})") from exc
        if g.geom_type not in ("Polygon", "MultiPolygon") or g.is_empty:
            raise GeoError(f"{path}: feature {i} is not a polygon")
        geoms.append(g)
        pops.append(float(pop))
    if projected is None:
        projected = bool(doc.get("projected", False))
    if depot is None and doc.get("depot") is not None:
        depot = tuple(doc["depot"])
    if not projected:
        c = union(geoms).centroid
        lon0, lat0 = c.x, c.y
        geoms = [shapely.transform(g, lambda xy: np.column_stack(_project(xy[:, 0], xy[:, 1], lon0, lat0)))
                 for g in geoms]
        if depot is not None:
            x, y = _project(depot[0], depot[1], lon0, lat0)
            depot = (float(x), float(y))
    return build_city(geoms, pops, depot=depot, name=str(doc.get("name", Path(path).stem)))


def city_to_geojson(graph, properties=None):
    """Projected (km) FeatureCollection; ``properties`` maps key -> per-unit values."""
    feats = []
    for i, u in enumerate(graph.units):
        props = {"id": i, "population": u.population}
        for key, vals in (properties or {}).items():
            props[key] = vals[i]
        feats.append({"type": "Feature", "geometry": mapping(u.polygon), "properties": props})
    return {"type": "FeatureCollection", "name": graph.name, "projected": True,
            "depot": list(graph.depot), "features": feats}


def write_geojson(graph, path, properties=None):
    Path(path).write_text(json.dumps(_jsonable(city_to_geojson(graph, properties))))


def read_feature_property(path, key):
    doc = json.loads(Path(path).read_text())
    return [f["properties"][key] for f in doc["features"]]


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def instance_to_dict(inst):
    g = inst.graph
    return _jsonable({
        "name": g.name,
        "depot": list(g.depot),
        "vertices": [{"geometry": mapping(u.polygon), "population": u.population} for u in g.units],
        "edges": [list(e) for e in g.edges],
        "features": inst.edge_features.tolist(),
        "t": inst.target_size,
        "bounds": list(inst.size_bounds),
        "k": inst.num_districts,
        "seed": inst.seed,
    })


def instance_from_dict(doc):
    polys = [shape(v["geometry"]) for v in doc["vertices"]]
    pops = [v["population"] for v in doc["vertices"]]
    g = build_city(polys, pops, depot=doc["depot"], edges=[tuple(e) for e in doc["edges"]], name=doc.get("name", ""))
    feats = np.asarray(doc["features"], dtype=float).reshape(len(g.edges), EDGE_FEATURE_DIM)
    return Instance(g, feats, int(doc["t"]), tuple(doc["bounds"]), int(doc["k"]), doc.get("seed"))


def save_instance(inst, path):
    Path(path).write_text(json.dumps(instance_to_dict(inst)))


def load_instance(path):
    return instance_from_dict(json.loads(Path(path).read_text()))


# --------------------------------------------------------------- synthesis

def sample_populations(n, rng):
    """Normal(8000, 2000) truncated to [5000, 20000], rounded to whole people."""
    out = np.empty(n)
    filled = 0
    while filled < n:
        draw = rng.normal(POP_MEAN, POP_STD, size=2 * (n - filled) + 4)
        draw = draw[(draw >= POP_LOW) & (draw <= POP_HIGH)]
        take = min(len(draw), n - filled)
        out[filled:filled + take] = draw[:take]
        filled += take
    return np.clip(np.rint(out), POP_LOW, POP_HIGH)


def synth_city(n_units, rng, mean_area=2.0, name="synthetic"):
    """Voronoi cells of uniform seed points, clipped to a square of side sqrt(n * mean_area)."""
    if n_units < 2:
        raise GeoError("need at least two units")
    side = math.sqrt(n_units * mean_area)
    square = box(0.0, 0.0, side, side)
    while True:
        pts = rng.uniform(0.0, side, size=(n_units, 2))
        cells = shapely.voronoi_polygons(MultiPoint(pts), extend_to=square, ordered=True)
        polys = [c.intersection(square) for c in cells.geoms]
        if all(p.geom_type == "Polygon" and p.area > 1e-9 for p in polys):
            break
    pops = sample_populations(n_units, rng)
    return build_city(polys, pops, depot=(side / 2.0, side / 2.0), name=name)


def sample_connected_vertices(graph, size, rng, start=None):
    """Grow a connected vertex set from a random start by random frontier additions."""
    if not 1 <= size <= graph.n:
        raise ValueError(f"subgraph size {size} not in [1, {graph.n}]")
    u = int(rng.integers(graph.n)) if start is None else int(start)
    chosen = [u]
    inside = {u}
    while len(chosen) < size:
        frontier = sorted({y for x in chosen for y in graph.adjacency[x]} - inside)
        v = frontier[int(rng.integers(len(frontier)))]
        chosen.append(v)
        inside.add(v)
    return sorted(chosen)


def sample_connected_subgraph(graph, size, rng, start=None):
    return graph.subgraph(sample_connected_vertices(graph, size, rng, start))


def pick_city(pool, rng):
    """Pool city drawn with probability proportional to its unit count."""
    sizes = np.array([g.n for g in pool], dtype=float)
    return pool[int(rng.choice(len(pool), p=sizes / sizes.sum()))]


def generate_training_instance(pool, size, t, rng, bounds=None, seed=None):
    """Random sub-city of a pool city (picked proportionally to size) with fresh populations."""
    pool = list(pool)
    if not pool:
        raise ValueError("empty city pool")
    city = pick_city(pool, rng)
    sub = sample_connected_subgraph(city, size, rng)
    pops = sample_populations(sub.n, rng)
    c = union(sub.polygons()).centroid
    verts = list(range(sub.n))
    g = sub.subgraph(verts, depot=(c.x, c.y), populations=pops, name=city.name)
    return make_instance(g, t, bounds=bounds, seed=seed)
