"""Construction heuristics: capped Kruskal clustering, greedy merging and size repair."""

from __future__ import annotations

import numpy as np

from ..geo import is_connected_subset
from .solution import DistrictingSolution, check_districting, max_spanning_tree

REPAIR_THRESHOLD = 600


class StructureError(RuntimeError):
    pass


def modified_kruskal(theta, instance, cap):
    """Kruskal on cost -theta that refuses merges producing clusters larger than ``cap``.

    Returns ``(clusters, tree_edges)``; clusters are frozensets ordered by
    their smallest vertex.
    """
    if cap < 1:
        raise ValueError("cap must be >= 1")
    theta = np.asarray(theta, dtype=float)
    n = instance.n
    parent = list(range(n))
    size = [1] * n

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    merged = []
    for e in sorted(range(instance.n_edges), key=lambda e: (-theta[e], e)):
        u, v = instance.graph.edges[e]
        a, b = find(u), find(v)
        if a != b and size[a] + size[b] <= cap:
            parent[a] = b
            size[b] += size[a]
            merged.append(e)
    groups = {}
    for v in range(n):
        groups.setdefault(find(v), set()).add(v)
    return sorted((frozenset(g) for g in groups.values()), key=min), merged


def greedy_merge(clusters, k, adjacency):
    """Merge the adjacent pair with the smallest combined size until ``k`` clusters remain."""
    clusters = [frozenset(c) for c in clusters]
    while len(clusters) > k:
        owner = {}
        for i, c in enumerate(clusters):
            for v in c:
                owner[v] = i
        best = None
        for i, c in enumerate(clusters):
            nbrs = {owner[u] for v in c for u in adjacency[v]} - {i}
            for j in nbrs:
                if j <= i:
                    continue
                key = (len(c) + len(clusters[j]), tuple(sorted((min(c), min(clusters[j])))))
                if best is None or key < best[0]:
                    best = (key, i, j)
        if best is None:
            raise StructureError("no adjacent clusters left to merge")
        _, i, j = best
        merged = clusters[i] | clusters[j]
        clusters = [c for t, c in enumerate(clusters) if t not in (i, j)] + [merged]
        clusters.sort(key=min)
    return clusters


def split_to_count(clusters, k, instance, theta):
    """Split large clusters along their spanning tree until ``k`` clusters exist."""
    clusters = [frozenset(c) for c in clusters]
    t = instance.target_size
    while len(clusters) < k:
        clusters.sort(key=lambda c: (-len(c), min(c)))
        big = clusters.pop(0)
        if len(big) < 2:
            raise StructureError("cannot split singleton clusters further")
        edges, _ = max_spanning_tree(big, instance, theta)
        best = None
        for e in edges:
            rest = [instance.graph.edges[f] for f in edges if f != e]
            side = _component(instance.graph.edges[e][0], rest)
            key = (abs(len(side) - t), e)
            if best is None or key < best[0]:
                best = (key, side)
        side = frozenset(best[1])
        clusters += [side, big - side]
    return sorted(clusters, key=min)


def _component(start, edges):
    adj = {}
    for u, v in edges:
        adj.setdefault(u, []).append(v)
        adj.setdefault(v, []).append(u)
    seen = {start}
    stack = [start]
    while stack:
        x = stack.pop()
        for y in adj.get(x, ()):
            if y not in seen:
                seen.add(y)
                stack.append(y)
    return seen


def repair(solution, instance):
    """Grow undersized districts from their neighbours, then shrink oversized ones.

    Every district stays connected; bounds are restored on a best-effort
    basis and ``feasible`` reports the outcome.
    """
    lo, hi = instance.size_bounds
    adj = instance.graph.adjacency
    districts = [set(d) for d in solution.districts]
    owner = {v: i for i, d in enumerate(districts) for v in d}

    def movable(v, src):
        rest = districts[src] - {v}
        return bool(rest) and is_connected_subset(rest, adj)

    def move(v, src, dst):
        districts[src].discard(v)
        districts[dst].add(v)
        owner[v] = dst

    for i in sorted(range(len(districts)), key=lambda i: (len(districts[i]), min(districts[i]))):
        while len(districts[i]) < lo:
            cands = []
            for v in {u for x in districts[i] for u in adj[x]} - districts[i]:
                src = owner[v]
                if len(districts[src]) > lo and movable(v, src):
                    cands.append((-len(districts[src]), v, src))
            if not cands:
                break
            _, v, src = min(cands)
            move(v, src, i)

    for i in sorted(range(len(districts)), key=lambda i: (-len(districts[i]), min(districts[i]))):
        while len(districts[i]) > hi:
            cands = []
            for v in districts[i]:
                if not movable(v, i):
                    continue
                for u in adj[v]:
                    dst = owner[u]
                    if dst != i and len(districts[dst]) < hi:
                        cands.append((len(districts[dst]), v, dst))
            if not cands:
                break
            _, v, dst = min(cands)
            move(v, i, dst)

    return DistrictingSolution.from_districts(districts, instance)


def initial_solution(theta, instance, rng=None, repair_threshold=REPAIR_THRESHOLD):
    """Capped Kruskal clusters merged (or split) to exactly k, repaired on large graphs."""
    theta = np.asarray(theta, dtype=float)
    k = instance.num_districts
    clusters, _ = modified_kruskal(theta, instance, instance.size_bounds[1])
    if len(clusters) > k:
        clusters = greedy_merge(clusters, k, instance.graph.adjacency)
    elif len(clusters) < k:
        clusters = split_to_count(clusters, k, instance, theta)
    sol = DistrictingSolution.from_districts(clusters, instance)
    if instance.n >= repair_threshold and not sol.feasible:
        sol = repair(sol, instance)
    return sol


def is_feasible(solution, instance):
    return check_districting(solution.districts, instance, raise_=False)
