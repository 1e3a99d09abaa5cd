"""Solution types for the capacitated spanning-forest surrogate and districting."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..geo import connected_components, is_connected_subset


class InfeasibleError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class DistrictingSolution:
    districts: tuple  # frozensets, ordered by smallest member
    feasible: bool = True

    @classmethod
    def from_districts(cls, districts, instance=None):
        ds = tuple(sorted((frozenset(int(v) for v in d) for d in districts if d), key=min))
        feas = True if instance is None else check_districting(ds, instance, raise_=False)
        return cls(ds, feas)

    @classmethod
    def from_assignment(cls, assignment, instance=None):
        groups = {}
        for v, a in enumerate(assignment):
            groups.setdefault(int(a), set()).add(v)
        return cls.from_districts(groups.values(), instance)

    @property
    def k(self):
        return len(self.districts)

    @property
    def assignment(self):
        n = sum(len(d) for d in self.districts)
        out = np.full(n, -1, dtype=int)
        for i, d in enumerate(self.districts):
            out[list(d)] = i
        return out

    def key(self):
        return tuple(tuple(sorted(d)) for d in self.districts)

    def __eq__(self, other):
        return isinstance(other, DistrictingSolution) and self.key() == other.key()

    def __hash__(self):
        return hash(self.key())


def check_districting(districts, instance, raise_=True):
    """True when ``districts`` is a feasible districting of ``instance``."""
    lo, hi = instance.size_bounds
    n = instance.n
    problems = []
    seen = set()
    for d in districts:
        if seen & d:
            problems.append("overlapping districts")
        seen |= d
        if not lo <= len(d) <= hi:
            problems.append(f"district size {len(d)} outside [{lo}, {hi}]")
        if not is_connected_subset(d, instance.graph.adjacency):
            problems.append(f"district {sorted(d)} is disconnected")
    if seen != set(range(n)):
        problems.append("districts do not cover every unit")
    if len(districts) != instance.num_districts:
        problems.append(f"{len(districts)} districts, expected {instance.num_districts}")
    if problems and raise_:
        raise InfeasibleError("; ".join(problems))
    return not problems


@dataclass(frozen=True, eq=False)
class CmstSolution:
    y: np.ndarray  # 0/1 per edge
    subtrees: tuple  # frozensets

    def objective(self, theta):
        return float(np.asarray(theta) @ self.y)


def max_spanning_tree(vertices, instance, theta):
    """Kruskal on -theta over the induced subgraph -> (edge indices, weight) or None if disconnected.

    Ties are broken by lower edge index.
    """
    vs = sorted(vertices)
    pos = {v: i for i, v in enumerate(vs)}
    edges = instance.graph.induced_edges(vs)
    order = sorted(edges, key=lambda e: (-theta[e], e))
    parent = list(range(len(vs)))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    chosen = []
    for e in order:
        u, v = instance.graph.edges[e]
        a, b = find(pos[u]), find(pos[v])
        if a != b:
            parent[a] = b
            chosen.append(e)
            if len(chosen) == len(vs) - 1:
                break
    if len(chosen) != len(vs) - 1:
        return None
    return sorted(chosen), float(sum(theta[e] for e in chosen))


def cmst_from_districts(districts, instance, theta):
    y = np.zeros(instance.n_edges, dtype=np.int8)
    for d in districts:
        tree = max_spanning_tree(d, instance, theta)
        if tree is None:
            raise InfeasibleError(f"district {sorted(d)} is disconnected")
        y[tree[0]] = 1
    return CmstSolution(y, tuple(frozenset(d) for d in districts))


def decode(solution, instance):
    """Districts = connected components of the selected-edge forest."""
    edges = [instance.graph.edges[e] for e in np.flatnonzero(solution.y)]
    comps = connected_components(instance.n, edges)
    return DistrictingSolution.from_districts(comps, instance)
