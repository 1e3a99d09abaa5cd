"""Iterated local search over connected districtings with a size-violation penalty."""

from __future__ import annotations

import math
import time

import numpy as np

from ..geo import is_connected_subset
from .solution import DistrictingSolution, max_spanning_tree

PERTURB_PROB = 0.015
PENALTY_FACTOR = 10.0
RESTART_AFTER = 50


def cmst_cost_oracle(theta, instance):
    """District -> minus its maximum spanning-tree weight under ``theta`` (inf if disconnected)."""
    theta = np.asarray(theta, dtype=float)
    cache = {}

    def oracle(district):
        key = frozenset(district)
        v = cache.get(key)
        if v is None:
            if len(key) == 1:
                v = 0.0
            else:
                tree = max_spanning_tree(key, instance, theta)
                v = math.inf if tree is None else -tree[1]
            cache[key] = v
        return v

    return oracle


class _State:
    """Mutable districting with penalised per-district costs."""

    def __init__(self, districts, oracle, instance, rho):
        self.instance = instance
        self.adj = instance.graph.adjacency
        self.oracle = oracle
        self.lo, self.hi = instance.size_bounds
        self.rho = rho
        self.districts = [set(d) for d in districts]
        self.owner = {v: i for i, d in enumerate(self.districts) for v in d}
        self.costs = [self.pcost(d) for d in self.districts]

    def violation(self, size):
        return max(0, self.lo - size) + max(0, size - self.hi)

    def pcost(self, d):
        return self.oracle(d) + self.rho * self.violation(len(d))

    def objective(self):
        return float(sum(self.costs))

    def feasible(self):
        return all(self.violation(len(d)) == 0 for d in self.districts)

    def raw_cost(self):
        return float(sum(self.oracle(d) for d in self.districts))

    def adjacent_pairs(self):
        pairs = set()
        for v, i in self.owner.items():
            for u in self.adj[v]:
                j = self.owner[u]
                if i < j:
                    pairs.add((i, j))
        return sorted(pairs)

    def border(self, a, b):
        db = self.districts[b]
        return sorted(v for v in self.districts[a] if any(u in db for u in self.adj[v]))

    def moves(self, a, b):
        """Admissible (new_a, new_b) pairs: relocations both ways and border swaps."""
        da, db = self.districts[a], self.districts[b]
        ba, bb = self.border(a, b), self.border(b, a)
        out = []
        for v in ba:
            if len(da) > 1:
                na = da - {v}
                if is_connected_subset(na, self.adj):
                    out.append((na, db | {v}))
        for v in bb:
            if len(db) > 1:
                nb = db - {v}
                if is_connected_subset(nb, self.adj):
                    out.append((da | {v}, nb))
        for v in ba:
            for u in bb:
                na = (da - {v}) | {u}
                nb = (db - {u}) | {v}
                if is_connected_subset(na, self.adj) and is_connected_subset(nb, self.adj):
                    out.append((na, nb))
        return out

    def apply(self, a, b, na, nb, ca=None, cb=None):
        self.districts[a] = set(na)
        self.districts[b] = set(nb)
        for v in na:
            self.owner[v] = a
        for v in nb:
            self.owner[v] = b
        self.costs[a] = self.pcost(na) if ca is None else ca
        self.costs[b] = self.pcost(nb) if cb is None else cb

    def solution(self):
        return DistrictingSolution.from_districts(self.districts, self.instance)


def penalty_weight(districts, oracle):
    """Ten times the largest magnitude district cost of the incumbent."""
    scale = max((abs(oracle(d)) for d in districts), default=0.0)
    if not math.isfinite(scale):
        raise ValueError("incumbent contains a disconnected district")
    return PENALTY_FACTOR * max(scale, 1e-9)


def _local_search(state, rng):
    while True:
        improved = False
        pairs = state.adjacent_pairs()
        for idx in rng.permutation(len(pairs)):
            a, b = pairs[idx]
            if not state.border(a, b):
                continue
            base = state.costs[a] + state.costs[b]
            tol = 1e-12 * max(1.0, abs(base))
            best = None
            for na, nb in state.moves(a, b):
                ca, cb = state.pcost(na), state.pcost(nb)
                delta = ca + cb - base
                if delta < -tol and (best is None or delta < best[0]):
                    best = (delta, na, nb, ca, cb)
            if best is not None:
                state.apply(a, b, *best[1:])
                improved = True
        if not improved:
            return state


def _perturb(state, rng, prob):
    pairs = state.adjacent_pairs()
    for idx in rng.permutation(len(pairs)):
        a, b = pairs[idx]
        for na, nb in state.moves(a, b):
            if rng.random() < prob:
                state.apply(a, b, na, nb)
                break
    return state


def local_search(solution, cost_oracle, instance, rng=None, rho=None):
    """Best-improvement border relocations and swaps per district pair, to a local optimum."""
    rng = np.random.default_rng(0) if rng is None else rng
    if rho is None:
        rho = penalty_weight(solution.districts, cost_oracle)
    state = _State(solution.districts, cost_oracle, instance, rho)
    return _local_search(state, rng).solution()


def ils(initial, cost_oracle, instance, iterations=100, time_limit=None, rng=None,
        perturb_prob=PERTURB_PROB, rho=None, restart_after=RESTART_AFTER, trace=None):
    """Iterated local search; returns the best solution found (feasible ones first).

    ``iterations`` counts perturbation rounds after the first descent, so
    ``iterations=0`` is a single local search. After ``restart_after``
    rounds without a new best, the search restarts from a capped-Kruskal
    solution on random edge weights and the penalty weight is recomputed.
    ``trace`` (a list) receives the incumbent's ``(infeasible, objective)``
    rank after every round.
    """
    from .heuristics import initial_solution

    rng = np.random.default_rng(0) if rng is None else rng
    start = time.perf_counter()
    fixed_rho = rho
    if rho is None:
        rho = penalty_weight(initial.districts, cost_oracle)
    state = _local_search(_State(initial.districts, cost_oracle, instance, rho), rng)

    def rank(st):
        return (0, st.raw_cost()) if st.feasible() else (1, st.objective())

    best_key = rank(state)
    best = [set(d) for d in state.districts]
    if trace is not None:
        trace.append(best_key)
    it = 0
    stale = 0
    while it < iterations:
        if time_limit is not None and time.perf_counter() - start >= time_limit:
            break
        it += 1
        if restart_after and stale >= restart_after:
            fresh = initial_solution(rng.random(instance.n_edges), instance)
            rho = fixed_rho if fixed_rho is not None else penalty_weight(fresh.districts, cost_oracle)
            state = _State(fresh.districts, cost_oracle, instance, rho)
            stale = 0
        else:
            _perturb(state, rng, perturb_prob)
        _local_search(state, rng)
        key = rank(state)
        if key < best_key:
            best_key = key
            best = [set(d) for d in state.districts]
            stale = 0
        else:
            stale += 1
        if trace is not None:
            trace.append(best_key)
    return DistrictingSolution.from_districts(best, instance)


def solution_cost(solution, cost_oracle):
    return float(sum(cost_oracle(d) for d in solution.districts))
