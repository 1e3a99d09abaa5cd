"""Continuous-approximation district cost estimators (BD, FIG) and their least-squares fits."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import sample_in_polygon

KINDS = {"BD": 1, "FIG": 4}


class EstimationError(ValueError):
    pass


class FitError(ValueError):
    pass


@dataclass(frozen=True)
class DistrictStats:
    total_area: float
    expected_requests: float
    avg_depot_distance: float


@dataclass
class EstimatorParams:
    kind: str
    beta: np.ndarray
    fit_rmse: float | None = None
    n_rows: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown estimator kind {self.kind!r}")
        self.beta = np.atleast_1d(np.asarray(self.beta, dtype=float))
        if self.beta.shape != (KINDS[self.kind],):
            raise ValueError(f"{self.kind} expects {KINDS[self.kind]} coefficients, got {self.beta.shape}")

    def to_dict(self):
        return {"kind": self.kind, "beta": self.beta.tolist(), "fit_rmse": self.fit_rmse, "n_rows": self.n_rows}

    @classmethod
    def from_dict(cls, doc):
        return cls(doc["kind"], doc["beta"], doc.get("fit_rmse"), int(doc.get("n_rows", 0)))

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))


def district_stats(district, instance, n_samples=100, rng=None):
    """Area, expected request count and Monte Carlo mean depot distance of a district.

    Sample points are spread over the district's units in proportion to area
    and placed uniformly inside each unit.
    """
    if not district:
        raise ValueError("empty district")
    if rng is None:
        rng = np.random.default_rng(0)
    g = instance.graph
    members = sorted(district)
    areas = g.areas[members]
    area = float(areas.sum())
    requests = float(g.populations[members].sum() * instance.kappa)
    picks = rng.choice(len(members), size=n_samples, p=areas / area)
    depot = np.asarray(g.depot)
    dists = []
    for j, m in enumerate(members):
        c = int((picks == j).sum())
        if c:
            pts = sample_in_polygon(g.units[m].polygon, c, rng)
            dists.append(np.hypot(pts[:, 0] - depot[0], pts[:, 1] - depot[1]))
    return DistrictStats(area, requests, float(np.concatenate(dists).mean()))


def design_row(kind, stats):
    a, r, delta = stats.total_area, stats.expected_requests, stats.avg_depot_distance
    if kind == "BD":
        return np.array([np.sqrt(a * r)]), 2.0 * delta
    if r <= 0:
        raise EstimationError("FIG needs a positive expected request count")
    return np.array([np.sqrt(a * r), delta, np.sqrt(a / r), 1.0]), 0.0


def estimate_cost(params, stats):
    row, offset = design_row(params.kind, stats)
    return float(row @ params.beta + offset)


def fit_estimator(kind, training):
    """Ordinary least squares on the estimator's basis; BD keeps 2*delta as a fixed offset."""
    if kind not in KINDS:
        raise ValueError(f"unknown estimator kind {kind!r}")
    rows, offsets, y = [], [], []
    for stats, cost in training:
        r, off = design_row(kind, stats)
        rows.append(r)
        offsets.append(off)
        y.append(cost)
    if len(rows) < KINDS[kind]:
        raise FitError(f"{kind} needs at least {KINDS[kind]} rows")
    X = np.array(rows)
    target = np.array(y) - np.array(offsets)
    if np.linalg.matrix_rank(X) < X.shape[1]:
        raise FitError("design matrix is rank deficient")
    beta, *_ = np.linalg.lstsq(X, target, rcond=None)
    resid = target - X @ beta
    return EstimatorParams(kind, beta, float(np.sqrt(np.mean(resid ** 2))), len(rows))


def sample_training_districts(instance, count, rng, max_tries=50):
    """Random connected districts with sizes inside the instance bounds (random-walk growth)."""
    g = instance.graph
    lo, hi = instance.size_bounds
    hi = min(hi, g.n)
    out = []
    for _ in range(count):
        for _ in range(max_tries):
            size = int(rng.integers(lo, hi + 1))
            start = int(rng.integers(g.n))
            chosen = {start}
            frontier = set(g.adjacency[start])
            while len(chosen) < size and frontier:
                v = sorted(frontier)[int(rng.integers(len(frontier)))]
                chosen.add(v)
                frontier |= g.adjacency[v]
                frontier -= chosen
            if len(chosen) == size:
                out.append(frozenset(chosen))
                break
    return out


class EstimatorOracle:
    """District -> estimated cost, with stats sampled from a district-keyed substream."""

    def __init__(self, params, instance, n_samples=100, seed=0):
        self.params = params
        self.instance = instance
        self.n_samples = n_samples
        self.seed = int(seed)
        self.cache = {}

    def stats(self, district):
        members = sorted(district)
        rng = np.random.default_rng([self.seed, *members])
        return district_stats(members, self.instance, self.n_samples, rng)

    def __call__(self, district):
        key = frozenset(district)
        v = self.cache.get(key)
        if v is None:
            v = estimate_cost(self.params, self.stats(key))
            self.cache[key] = v
        return v
