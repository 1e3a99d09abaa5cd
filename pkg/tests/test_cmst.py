import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from shapely.geometry import box

from conftest import grid_city, instance_of, path_city
from districting import cmst, geo
from districting.cmst import exact as exact_mod
from oracles import mst_weight_brute, set_partitions


def triangle_instance(bounds=(1, 3), k=1):
    g = geo.build_city([box(0, 0, 1, 1), box(1, 0, 2, 1), box(0, 1, 2, 2)], [8000] * 3)
    assert g.edges == ((0, 1), (0, 2), (1, 2))
    return geo.make_instance(g, 3, bounds=bounds, k=k)


def random_instance(seed, n=10, t=3, bounds=None):
    r = np.random.default_rng(seed)
    city = geo.synth_city(3 * n, r)
    vs = geo.sample_connected_vertices(city, n, r)
    return geo.make_instance(city.subgraph(vs), t, bounds=bounds)


def brute_partitions(inst):
    lo, hi = inst.size_bounds
    adj = inst.graph.adjacency
    out = []
    for part in set_partitions(range(inst.n)):
        if len(part) == inst.num_districts and all(lo <= len(b) <= hi and geo.is_connected_subset(b, adj)
                                                   for b in part):
            out.append(part)
    return out


def brute_block_value(inst, block, theta):
    if len(block) == 1:
        return 0.0
    vs = sorted(block)
    pos = {v: i for i, v in enumerate(vs)}
    idx = inst.graph.induced_edges(vs)
    return mst_weight_brute(len(vs), [(pos[inst.graph.edges[e][0]], pos[inst.graph.edges[e][1]]) for e in idx],
                            [theta[e] for e in idx])


# ------------------------------------------------------------------ exact

def test_connected_subsets_match_brute_force():
    for seed in range(5):
        inst = random_instance(seed, n=9)
        got = cmst.connected_subsets(inst.graph.adjacency, 2, 4)
        want = {frozenset(c) for r in range(2, 5) for c in itertools.combinations(range(9), r)
                if geo.is_connected_subset(c, inst.graph.adjacency)}
        assert len(got) == len(set(got)) and set(got) == want


def test_path_exact_cmst():
    inst = instance_of(path_city(4), t=2, bounds=(2, 2), k=2)
    sol = cmst.exact_cmst(np.array([1.0, 0.0, 1.0]), inst)
    assert sol.subtrees == (frozenset({0, 1}), frozenset({2, 3}))
    assert sol.objective([1.0, 0.0, 1.0]) == 2.0


def test_uniform_theta_objective():
    inst = instance_of(grid_city(3, 4), t=3)
    theta = np.full(inst.n_edges, 0.7)
    assert cmst.exact_cmst(theta, inst).objective(theta) == pytest.approx((inst.n - inst.num_districts) * 0.7)


def test_single_tree_is_maximum_spanning_tree():
    for seed in range(5):
        inst = random_instance(seed, n=7)
        inst = geo.make_instance(inst.graph, 7, bounds=(7, 7), k=1)
        theta = np.random.default_rng(seed).normal(size=inst.n_edges)
        want = mst_weight_brute(inst.n, list(inst.graph.edges), theta)
        assert cmst.exact_cmst(theta, inst).objective(theta) == pytest.approx(want)


def test_exact_matches_partition_enumeration():
    for seed in range(6):
        inst = random_instance(seed, n=9, bounds=(2, 4))
        parts = brute_partitions(inst)
        enum = cmst.PartitionEnumerator(inst)
        assert len(enum.partitions) == len(parts)
        theta = np.random.default_rng(seed).normal(size=inst.n_edges)
        best = max(sum(brute_block_value(inst, b, theta) for b in p) for p in parts)
        assert cmst.exact_cmst(theta, inst).objective(theta) == pytest.approx(best)


def test_branch_and_bound_matches_table(monkeypatch):
    inst = random_instance(3, n=12)
    theta = np.random.default_rng(0).normal(size=inst.n_edges)
    ref = cmst.exact_cmst(theta, inst).objective(theta)
    monkeypatch.setattr(exact_mod, "PARTITION_CACHE_LIMIT", 0)
    monkeypatch.setattr(exact_mod, "TREE_ENUM_LIMIT", 0)
    assert cmst.exact_cmst(theta, inst).objective(theta) == pytest.approx(ref)


def test_infeasible_structure_and_cap():
    inst = instance_of(path_city(5), t=2, bounds=(2, 2), k=2)
    with pytest.raises(cmst.InfeasibleError):
        cmst.exact_cmst(np.ones(4), inst)
    with pytest.raises(cmst.CapExceededError):
        cmst.exact_cmst(np.ones(16), instance_of(path_city(17), t=3), cap=16)


def test_solve_many_matches_solve():
    inst = random_instance(8, n=12)
    solver = cmst.ExactCmstSolver(inst)
    thetas = np.random.default_rng(1).normal(size=(15, inst.n_edges))
    ys = solver.solve_many(thetas)
    for th, y in zip(thetas, ys):
        assert th @ y == pytest.approx(solver.solve(th).objective(th))
        assert y.sum() == inst.n - inst.num_districts


def test_exact_districting_agrees_with_surrogate():
    inst = instance_of(path_city(4), t=2, bounds=(2, 2), k=2)
    theta = np.array([0.2, 1.5, -0.3])
    sol = cmst.exact_districting(inst, cmst.cmst_cost_oracle(theta, inst))
    assert sol.districts == cmst.exact_cmst(theta, inst).subtrees
    one = geo.make_instance(inst.graph, 4, bounds=(4, 4), k=1)
    assert cmst.exact_districting(one, len).districts == (frozenset(range(4)),)


# ------------------------------------------------------------------ decode

def test_decode_forest():
    inst = instance_of(path_city(3), t=2, bounds=(1, 2), k=2)
    d = cmst.decode(cmst.CmstSolution(np.array([1, 0], dtype=np.int8), ()), inst)
    assert d.districts == (frozenset({0, 1}), frozenset({2})) and d.feasible


def test_decode_is_surjective():
    inst = triangle_instance()
    a = cmst.decode(cmst.CmstSolution(np.array([1, 1, 0], dtype=np.int8), ()), inst)
    b = cmst.decode(cmst.CmstSolution(np.array([0, 1, 1], dtype=np.int8), ()), inst)
    assert a == b and a.districts == (frozenset({0, 1, 2}),)


def test_feasible_forests_decode_feasibly():
    for seed in range(100):
        inst = random_instance(seed % 20, n=9, bounds=(2, 4))
        rng = np.random.default_rng(seed)
        theta = rng.normal(size=inst.n_edges)
        sol = cmst.exact_cmst(theta, inst)
        assert sol.y.sum() == inst.n - inst.num_districts
        d = cmst.decode(sol, inst)
        assert d.feasible and set(d.districts) == set(sol.subtrees)


# ------------------------------------------------------------------ oracle

def test_cmst_cost_oracle_cases():
    inst = triangle_instance()
    o = cmst.cmst_cost_oracle(np.array([1.0, 2.0, 3.0]), inst)
    assert o({1}) == 0.0
    assert o({0, 1}) == -1.0
    assert o({0, 1, 2}) == -5.0
    two = instance_of(path_city(2), t=2, bounds=(1, 2), k=1)
    assert cmst.cmst_cost_oracle(np.array([5.0]), two)({0, 1}) == -5.0
    p = instance_of(path_city(3), t=2, bounds=(1, 2), k=1)
    assert math.isinf(cmst.cmst_cost_oracle(np.ones(2), p)({0, 2}))


# ------------------------------------------------------------------ construction

def test_modified_kruskal_cases():
    two = instance_of(path_city(2), t=2, bounds=(1, 2), k=1)
    assert cmst.modified_kruskal(np.ones(1), two, 2)[0] == [frozenset({0, 1})]
    p4 = instance_of(path_city(4), t=2, bounds=(2, 2), k=2)
    clusters, merged = cmst.modified_kruskal(np.ones(3), p4, 1)
    assert clusters == [frozenset({i}) for i in range(4)] and merged == []
    clusters, merged = cmst.modified_kruskal(np.array([3.0, 1.0, 2.0]), p4, 2)
    assert clusters == [frozenset({0, 1}), frozenset({2, 3})] and merged == [0, 2]


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 6))
def test_modified_kruskal_respects_cap(seed, cap):
    inst = random_instance(seed % 15, n=12)
    theta = np.random.default_rng(seed).normal(size=inst.n_edges)
    clusters, _ = cmst.modified_kruskal(theta, inst, cap)
    assert all(len(c) <= cap for c in clusters)
    assert sorted(v for c in clusters for v in c) == list(range(inst.n))


def test_greedy_merge_cases():
    adj = path_city(3).adjacency
    single = [frozenset({i}) for i in range(3)]
    assert cmst.greedy_merge(single, 3, adj) == single
    assert cmst.greedy_merge(single, 2, adj) == [frozenset({0, 1}), frozenset({2})]
    for seed in range(10):
        inst = random_instance(seed, n=12)
        out = cmst.greedy_merge([frozenset({i}) for i in range(12)], 3, inst.graph.adjacency)
        assert len(out) == 3 and all(geo.is_connected_subset(c, inst.graph.adjacency) for c in out)


def test_repair_cases():
    inst = instance_of(path_city(6), t=3, bounds=(2, 4), k=2)
    ok = cmst.DistrictingSolution.from_districts([{0, 1, 2}, {3, 4, 5}], inst)
    assert cmst.repair(ok, inst) == ok
    bad = cmst.DistrictingSolution.from_districts([{0}, {1, 2, 3, 4, 5}], inst)
    assert not bad.feasible
    fixed = cmst.repair(bad, inst)
    assert fixed.districts == (frozenset({0, 1}), frozenset({2, 3, 4, 5})) and fixed.feasible


def test_repair_keeps_connectivity():
    for seed in range(500):
        inst = random_instance(seed % 25, n=12, bounds=(2, 4))
        rng = np.random.default_rng(seed)
        start = cmst.initial_solution(rng.normal(size=inst.n_edges), inst, repair_threshold=10**9)
        out = cmst.repair(start, inst)
        assert sorted(v for d in out.districts for v in d) == list(range(inst.n))
        assert all(geo.is_connected_subset(d, inst.graph.adjacency) for d in out.districts)


def test_initial_solution_cases():
    inst = geo.make_instance(grid_city(4, 4), 4)
    assert inst.size_bounds == (4, 4)
    sol = cmst.initial_solution(np.ones(inst.n_edges), inst)
    assert sol.k == 4 and all(len(d) == 4 for d in sol.districts)
    single = geo.make_instance(grid_city(2, 3), 1)
    assert cmst.initial_solution(np.ones(single.n_edges), single).districts == tuple(
        frozenset({i}) for i in range(6))


def test_initial_solution_partitions_connected():
    for seed in range(100):
        inst = random_instance(seed % 20, n=12)
        sol = cmst.initial_solution(np.random.default_rng(seed).normal(size=inst.n_edges), inst)
        assert sol.k == inst.num_districts
        assert sorted(v for d in sol.districts for v in d) == list(range(inst.n))
        assert all(geo.is_connected_subset(d, inst.graph.adjacency) for d in sol.districts)


# ------------------------------------------------------------------ local search

def test_local_search_single_district_unchanged():
    inst = geo.make_instance(grid_city(2, 2), 4)
    sol = cmst.DistrictingSolution.from_districts([range(4)], inst)
    assert cmst.local_search(sol, len, inst) == sol


def test_local_search_finds_horizontal_split():
    inst = geo.make_instance(grid_city(2, 2), 2, bounds=(2, 2), k=2)
    # units 0,1 bottom row; 2,3 top row
    horizontal = {frozenset({0, 1}), frozenset({2, 3})}
    oracle = lambda d: 1.0 if frozenset(d) in horizontal else 5.0  # noqa: E731
    vertical = cmst.DistrictingSolution.from_districts([{0, 2}, {1, 3}], inst)
    out = cmst.local_search(vertical, oracle, inst)
    assert set(out.districts) == horizontal


def test_local_search_monotone():
    for seed in range(20):
        inst = random_instance(seed, n=12)
        rng = np.random.default_rng(seed)
        theta = rng.normal(size=inst.n_edges)
        o = cmst.cmst_cost_oracle(theta, inst)
        start = cmst.initial_solution(rng.normal(size=inst.n_edges), inst)
        rho = cmst.penalty_weight(start.districts, o)
        pen = lambda s: sum(o(d) + rho * (max(0, inst.size_bounds[0] - len(d)) +  # noqa: E731
                                          max(0, len(d) - inst.size_bounds[1])) for d in s.districts)
        out = cmst.local_search(start, o, inst, rng=rng, rho=rho)
        assert pen(out) <= pen(start) + 1e-12
        assert all(geo.is_connected_subset(d, inst.graph.adjacency) for d in out.districts)


def test_ils_zero_iterations_is_local_search():
    inst = random_instance(2, n=12)
    theta = np.random.default_rng(0).normal(size=inst.n_edges)
    o = cmst.cmst_cost_oracle(theta, inst)
    init = cmst.initial_solution(theta, inst)
    a = cmst.ils(init, o, inst, iterations=0, rng=np.random.default_rng(4))
    b = cmst.local_search(init, o, inst, rng=np.random.default_rng(4))
    assert a == b


def test_ils_trace_non_increasing_and_bounded_by_exact():
    for seed in range(10):
        inst = random_instance(seed, n=12)
        theta = np.random.default_rng(seed).normal(size=inst.n_edges)
        o = cmst.cmst_cost_oracle(theta, inst)
        trace = []
        sol = cmst.ils(cmst.initial_solution(theta, inst), o, inst, iterations=200,
                       rng=np.random.default_rng(seed), trace=trace)
        assert all(b <= a for a, b in zip(trace, trace[1:]))
        assert len(trace) == 201
        best = cmst.exact_cmst(theta, inst).objective(theta)
        assert sol.feasible and -cmst.solution_cost(sol, o) <= best + 1e-9
        y = cmst.cmst_from_districts(sol.districts, inst, theta).y
        assert y.sum() == inst.n - inst.num_districts


def test_ils_deterministic():
    inst = random_instance(5, n=12)
    theta = np.random.default_rng(1).normal(size=inst.n_edges)
    run = lambda: cmst.ils(cmst.initial_solution(theta, inst), cmst.cmst_cost_oracle(theta, inst), inst,  # noqa
                           iterations=30, rng=np.random.default_rng(9))
    assert run().key() == run().key()


def test_districting_solution_helpers():
    inst = instance_of(path_city(6), t=3)
    s = cmst.DistrictingSolution.from_assignment([1, 1, 1, 0, 0, 0], inst)
    assert s.districts == (frozenset({0, 1, 2}), frozenset({3, 4, 5})) and s.feasible
    assert list(s.assignment) == [0, 0, 0, 1, 1, 1]
    with pytest.raises(cmst.InfeasibleError):
        cmst.check_districting((frozenset({0, 2, 1}), frozenset({3, 5}), frozenset({4})), inst)
