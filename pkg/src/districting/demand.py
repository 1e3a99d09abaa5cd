"""Poisson demand scenarios and Monte Carlo estimates of expected district routing cost."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np

from . import tsp
from .geometry import sample_in_polygon

DEFAULT_SCENARIOS = 100


@dataclass(frozen=True)
class Tour:
    order: np.ndarray
    length: float


@dataclass(frozen=True, eq=False)
class Scenario:
    requests: tuple  # per-BU (n_i, 2) arrays

    def counts(self):
        return [len(r) for r in self.requests]


@dataclass(frozen=True, eq=False)
class ScenarioSet:
    scenarios: tuple
    seed: int | None = None

    def __len__(self):
        return len(self.scenarios)

    def __iter__(self):
        return iter(self.scenarios)

    def to_dict(self):
        return {
            "seed": self.seed,
            "counts": [s.counts() for s in self.scenarios],
            "points": [[r.tolist() for r in s.requests] for s in self.scenarios],
        }

    @classmethod
    def from_dict(cls, doc):
        scen = tuple(Scenario(tuple(np.asarray(r, dtype=float).reshape(-1, 2) for r in s)) for s in doc["points"])
        return cls(scen, doc.get("seed"))

    def digest(self):
        return hashlib.sha256(json.dumps(self.to_dict()).encode()).hexdigest()[:16]


def tsp_tour(points, depot):
    """Closed tour from ``depot`` through every point (indices into ``points``)."""
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    if len(pts) == 0:
        return Tour(np.zeros(0, dtype=np.int64), 0.0)
    order, length = tsp.solve(tsp.with_depot(pts, depot))
    return Tour(order[1:] - 1, length)


def sample_scenario(instance, rng):
    """One demand realisation: Poisson(n * kappa) uniform points per BU."""
    kappa = instance.kappa
    reqs = []
    for u in instance.graph.units:
        c = int(rng.poisson(u.population * kappa))
        reqs.append(sample_in_polygon(u.polygon, c, rng))
    return Scenario(tuple(reqs))


def sample_scenarios(instance, n_scenarios=DEFAULT_SCENARIOS, seed=0):
    """``n_scenarios`` realisations with one independent substream per BU.

    The per-BU streams make a unit's demand independent of how many other
    units the instance has, so sub-instances replay consistently.
    """
    kappa = instance.kappa
    per_bu = []
    for i, u in enumerate(instance.graph.units):
        rng = np.random.default_rng([int(seed), i])
        counts = rng.poisson(u.population * kappa, size=n_scenarios)
        pts = sample_in_polygon(u.polygon, int(counts.sum()), rng)
        splits = np.cumsum(counts)[:-1]
        per_bu.append(np.split(pts, splits))
    scen = tuple(Scenario(tuple(per_bu[i][s] for i in range(instance.n))) for s in range(n_scenarios))
    return ScenarioSet(scen, int(seed))


def district_cost_mc(district, instance, scenarios):
    """Mean heuristic TSP length over the scenarios' requests inside ``district``."""
    district = sorted(district)
    sets = [np.vstack([s.requests[i] for i in district]) if district else np.zeros((0, 2)) for s in scenarios]
    if not sets:
        raise ValueError("no scenarios")
    return float(np.mean(tsp.solve_many(sets, instance.graph.depot)))


def avg_tsp_cost(district, instance):
    """Tour length through the centroids of the district's units."""
    cent = instance.graph.centroids[sorted(district)]
    return tsp_tour(cent, instance.graph.depot).length


class CostEvaluator:
    """Memoised Monte Carlo district cost over a fixed scenario set."""

    def __init__(self, instance, scenarios):
        self.instance = instance
        self.scenarios = scenarios
        self.cache = {}

    def __call__(self, district):
        key = frozenset(district)
        v = self.cache.get(key)
        if v is None:
            v = district_cost_mc(key, self.instance, self.scenarios)
            self.cache[key] = v
        return v

    def total(self, districts):
        return float(sum(self(d) for d in districts))
