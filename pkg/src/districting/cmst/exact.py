"""Exact solvers: connected-subset enumeration and branch-and-bound set partitioning.

Both the spanning-forest surrogate and the districting problem reduce to
choosing exactly ``k`` disjoint connected vertex sets covering the graph,
each with a per-set value. The enumeration here is shared by the two.
"""

from __future__ import annotations

import itertools
from functools import cached_property

import numpy as np

from .solution import CmstSolution, DistrictingSolution, InfeasibleError, max_spanning_tree

DEFAULT_CAP = 16
PARTITION_CACHE_LIMIT = 200_000
TREE_ENUM_LIMIT = 200_000


class CapExceededError(ValueError):
    pass


def connected_subsets(adjacency, lo, hi):
    """All connected vertex sets with size in [lo, hi] (ESU enumeration, each set once)."""
    n = len(adjacency)
    out = []

    def extend(sub, ext, nbhd, root):
        if len(sub) >= lo:
            out.append(frozenset(sub))
        if len(sub) == hi:
            return
        ext = list(ext)
        while ext:
            w = ext.pop()
            new_ext = set(ext)
            for u in adjacency[w]:
                if u > root and u not in sub and u not in nbhd:
                    new_ext.add(u)
            extend(sub | {w}, sorted(new_ext, reverse=True), nbhd | adjacency[w], root)

    for v in range(n):
        ext = sorted((u for u in adjacency[v] if u > v), reverse=True)
        extend({v}, ext, set(adjacency[v]) | {v}, v)
    return out


def _spanning_trees(vertices, instance):
    """All spanning trees of the induced subgraph as sorted edge-index tuples."""
    vs = sorted(vertices)
    pos = {v: i for i, v in enumerate(vs)}
    edges = instance.graph.induced_edges(vs)
    trees = []
    for combo in itertools.combinations(edges, len(vs) - 1):
        parent = list(range(len(vs)))
        ok = True
        for e in combo:
            u, v = instance.graph.edges[e]
            a, b = pos[u], pos[v]
            while parent[a] != a:
                a = parent[a]
            while parent[b] != b:
                b = parent[b]
            if a == b:
                ok = False
                break
            parent[a] = b
        if ok:
            trees.append(combo)
    return trees


class PartitionEnumerator:
    """Connected sets of an instance and exact k-partitions over them."""

    def __init__(self, instance, cap=DEFAULT_CAP):
        if instance.n > cap:
            raise CapExceededError(f"N={instance.n} exceeds the exact-solver cap {cap}; use the ILS heuristic")
        self.instance = instance
        self.n = instance.n
        self.k = instance.num_districts
        self.lo, self.hi = instance.size_bounds
        self.subsets = connected_subsets(instance.graph.adjacency, self.lo, self.hi)
        self.masks = [sum(1 << v for v in s) for s in self.subsets]
        self.sizes = np.array([len(s) for s in self.subsets])
        by_min = [[] for _ in range(self.n)]
        for i, s in enumerate(self.subsets):
            by_min[min(s)].append(i)
        self.by_min = by_min
        self.full = (1 << self.n) - 1

    def _count_ok(self, covered_bits, used):
        rem_vertices = self.n - covered_bits
        rem_sets = self.k - used
        return self.lo * rem_sets <= rem_vertices <= self.hi * rem_sets

    @cached_property
    def partitions(self):
        """Every feasible partition as a (P, k) array of subset indices (DFS order)."""
        out = []
        chosen = []

        def dfs(mask, bits):
            if len(chosen) == self.k:
                if mask == self.full:
                    out.append(tuple(chosen))
                return
            if not self._count_ok(bits, len(chosen)):
                return
            v = _lowest_zero(mask)
            for i in self.by_min[v]:
                m = self.masks[i]
                if m & mask:
                    continue
                chosen.append(i)
                dfs(mask | m, bits + int(self.sizes[i]))
                chosen.pop()
                if len(out) > PARTITION_CACHE_LIMIT:
                    return

        dfs(0, 0)
        if len(out) > PARTITION_CACHE_LIMIT:
            raise CapExceededError("too many feasible partitions to cache")
        return np.array(out, dtype=np.int64).reshape(-1, self.k)

    def partitions_or_none(self):
        try:
            return self.partitions
        except CapExceededError:
            return None

    def best_partition(self, values, maximize=True):
        """Index tuple of the best k-partition for per-subset ``values``.

        Uses the cached partition table when available, otherwise
        branch-and-bound with a per-vertex share bound.
        """
        values = np.asarray(values, dtype=float)
        sign = 1.0 if maximize else -1.0
        parts = self.partitions_or_none()
        if parts is not None:
            if len(parts) == 0:
                raise InfeasibleError("no feasible partition into the requested districts")
            totals = (sign * values)[parts].sum(axis=1)
            return tuple(int(i) for i in parts[int(np.argmax(totals))])
        return self._branch_and_bound(sign * values)

    def _branch_and_bound(self, values):
        n = self.n
        share = np.full(n, -np.inf)
        for i, s in enumerate(self.subsets):
            r = values[i] / len(s)
            for v in s:
                if r > share[v]:
                    share[v] = r
        if np.isneginf(share).any():
            raise InfeasibleError("some unit belongs to no admissible district")
        share = share.tolist()
        best = [-np.inf, None]
        chosen = []
        order = [sorted(self.by_min[v], key=lambda i: -values[i]) for v in range(n)]

        def dfs(mask, bits, value):
            if len(chosen) == self.k:
                if mask == self.full and value > best[0]:
                    best[0] = value
                    best[1] = tuple(chosen)
                return
            if not self._count_ok(bits, len(chosen)):
                return
            bound = value + sum(share[v] for v in range(n) if not (mask >> v) & 1)
            if bound <= best[0]:
                return
            v = _lowest_zero(mask)
            for i in order[v]:
                m = self.masks[i]
                if m & mask:
                    continue
                chosen.append(i)
                dfs(mask | m, bits + int(self.sizes[i]), value + values[i])
                chosen.pop()

        dfs(0, 0, 0.0)
        if best[1] is None:
            raise InfeasibleError("no feasible partition into the requested districts")
        return tuple(sorted(best[1]))


def _lowest_zero(mask):
    return (~mask & (mask + 1)).bit_length() - 1


class ExactCmstSolver:
    """Exact maximiser of theta^T y over capacitated spanning forests with k trees."""

    def __init__(self, instance, cap=DEFAULT_CAP):
        self.instance = instance
        self.enum = PartitionEnumerator(instance, cap)

    @cached_property
    def _tree_table(self):
        """Spanning trees of every admissible set, stacked; None when too many."""
        trees, owner = [], []
        for i, s in enumerate(self.enum.subsets):
            ts = _spanning_trees(s, self.instance)
            trees.extend(ts)
            owner.extend([i] * len(ts))
            if len(trees) > TREE_ENUM_LIMIT:
                return None
        mat = np.zeros((len(trees), self.instance.n_edges))
        for r, t in enumerate(trees):
            mat[r, list(t)] = 1.0
        owner = np.array(owner, dtype=np.int64)
        starts = np.flatnonzero(np.r_[True, owner[1:] != owner[:-1]])
        return mat, owner, starts, trees

    def subset_values(self, theta):
        """Best spanning-tree weight of every admissible set, for one or many theta rows."""
        theta = np.asarray(theta, dtype=float)
        table = self._tree_table
        if table is not None:
            mat, owner, starts, _ = table
            w = theta @ mat.T
            return np.maximum.reduceat(w, starts, axis=-1)
        rows = np.atleast_2d(theta)
        out = np.array([[max_spanning_tree(s, self.instance, th)[1] for s in self.enum.subsets] for th in rows])
        return out if theta.ndim == 2 else out[0]

    def solve(self, theta):
        theta = np.asarray(theta, dtype=float)
        vals = self.subset_values(theta)
        chosen = self.enum.best_partition(vals, maximize=True)
        return self._build(chosen, theta)

    def solve_many(self, thetas):
        """Indicator vectors (M, |E|) of the optimal forests for each row of ``thetas``."""
        thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
        vals = self.subset_values(thetas)
        parts = self.enum.partitions_or_none()
        ys = np.zeros((len(thetas), self.instance.n_edges))
        if parts is not None and self._tree_table is not None:
            if len(parts) == 0:
                raise InfeasibleError("no feasible partition into the requested districts")
            best = np.argmax(vals[:, parts].sum(axis=2), axis=1)
            mat, owner, starts, _ = self._tree_table
            w = thetas @ mat.T
            for m, p in enumerate(best):
                for i in parts[p]:
                    lo = starts[i]
                    hi = starts[i + 1] if i + 1 < len(starts) else len(owner)
                    r = lo + int(np.argmax(w[m, lo:hi]))
                    ys[m] += mat[r]
            return ys
        for m, th in enumerate(thetas):
            ys[m] = self.solve(th).y
        return ys

    def _build(self, chosen, theta):
        y = np.zeros(self.instance.n_edges, dtype=np.int8)
        subtrees = []
        for i in chosen:
            s = self.enum.subsets[i]
            edges, _ = max_spanning_tree(s, self.instance, theta)
            y[edges] = 1
            subtrees.append(s)
        return CmstSolution(y, tuple(sorted(subtrees, key=min)))


def exact_cmst(theta, instance, cap=DEFAULT_CAP):
    return ExactCmstSolver(instance, cap).solve(theta)


def exact_districting(instance, cost_oracle, cap=DEFAULT_CAP, enumerator=None):
    """Minimum total-cost feasible districting under ``cost_oracle`` (full enumeration)."""
    enum = enumerator or PartitionEnumerator(instance, cap)
    costs = np.array([cost_oracle(s) for s in enum.subsets])
    chosen = enum.best_partition(costs, maximize=False)
    return DistrictingSolution.from_districts([enum.subsets[i] for i in chosen], instance)
