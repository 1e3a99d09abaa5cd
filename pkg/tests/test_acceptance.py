"""Acceptance criteria, one test each. Run with ``pytest tests/test_acceptance.py -s``.

Each test prints a single ``[criterion N] PASS|FAIL ...`` line; the lines are
repeated in the terminal summary so they show up even under output capture.
"""

import json
import time

import numpy as np
import pytest

from conftest import path_city
from districting import cli, cmst, estimators as est, geo, gnn, pipeline, tsp
from districting import structlearn as sl
from districting.geometry import reock_score
from oracles import held_karp
from shapely.geometry import Point, box
from test_cmst import random_instance, triangle_instance

pytestmark = pytest.mark.acceptance


VERDICTS = []


def verdict(n, ok, detail):
    line = f"[criterion {n}] {'PASS' if ok else 'FAIL'} {detail}"
    VERDICTS.append(line)
    print(line, flush=True)
    assert ok, detail


def feasible_instances(count, sizes=(9, 12), start=0):
    out, s = [], start
    while len(out) < count:
        inst = random_instance(s, n=sizes[len(out) % len(sizes)])
        s += 1
        if len(cmst.PartitionEnumerator(inst).partitions):
            out.append(inst)
    return out


# 1 ---------------------------------------------------------------- ILS vs exact surrogate

def test_ils_matches_exact_surrogate():
    t0 = time.perf_counter()
    hits = 0
    insts = feasible_instances(50)
    for i, inst in enumerate(insts):
        theta = np.random.default_rng(i).normal(size=inst.n_edges)
        best = cmst.exact_cmst(theta, inst).objective(theta)
        oracle = cmst.cmst_cost_oracle(theta, inst)
        sol = cmst.ils(cmst.initial_solution(theta, inst), oracle, inst, iterations=10 ** 9, time_limit=5.0,
                       rng=np.random.default_rng(i))
        got = cmst.cmst_from_districts(sol.districts, inst, theta).objective(theta) if sol.feasible else -np.inf
        hits += got >= best - 1e-9
    wall = time.perf_counter() - t0
    verdict(1, hits >= 48 and wall < 600, f"exact objective reached on {hits}/50 (need 48), {wall:.0f} s (limit 600)")


# 2 ---------------------------------------------------------------- forest invariants

def test_random_forests_decode_feasibly():
    rng = np.random.default_rng(2)
    insts = feasible_instances(20, start=500)
    bad = 0
    for j in range(1000):
        inst = insts[j % 20]
        parts = cmst.PartitionEnumerator(inst)
        p = parts.partitions[int(rng.integers(len(parts.partitions)))]
        blocks = [parts.subsets[i] for i in p]
        theta = rng.normal(size=inst.n_edges)
        sol = cmst.cmst_from_districts(blocks, inst, theta)
        dec = cmst.decode(sol, inst)
        ok = (int(sol.y.sum()) == inst.n - inst.num_districts and dec.feasible
              and set(dec.districts) == {frozenset(b) for b in blocks})
        bad += not ok
    verdict(2, bad == 0, f"{1000 - bad}/1000 forests with sum(y) = N-k and feasible decode")


# 3 ---------------------------------------------------------------- target invariants

def test_target_invariants():
    errs = []
    for i, inst in enumerate(feasible_instances(10, sizes=(9,), start=900)):
        sol = cmst.exact_districting(inst, lambda d: float(len(d) ** 2))
        mu = sl.construct_target(sol, inst, 1000, np.random.default_rng(i))
        if abs(mu.sum() - (inst.n - inst.num_districts)) > 1e-9:
            errs.append(f"sum {mu.sum()}")
        for e, (u, v) in enumerate(inst.graph.edges):
            if sol.assignment[u] != sol.assignment[v] and mu[e] != 0:
                errs.append(f"cross edge {e}")
    tri = triangle_instance()
    mu = sl.construct_target(cmst.DistrictingSolution.from_districts([{0, 1, 2}], tri), tri, 1000,
                             np.random.default_rng(3))
    dev = float(np.abs(mu - 2 / 3).max())
    path = geo.make_instance(path_city(4), 2, bounds=(2, 2), k=2)
    mp = sl.construct_target(cmst.DistrictingSolution.from_districts([{0, 1}, {2, 3}], path), path, 10)
    ok = not errs and dev <= 0.05 and mp.tolist() == [1, 0, 1]
    verdict(3, ok, f"sum/zero violations {len(errs)}; triangle max |mu - 2/3| = {dev:.3f} (tol 0.05)")


# 4 ---------------------------------------------------------------- gradients

def five_edge_instance(seed):
    r = np.random.default_rng(seed)
    city = geo.synth_city(20, r)
    while True:
        sub = city.subgraph(geo.sample_connected_vertices(city, int(r.integers(4, 7)), r))
        if len(sub.edges) == 5:
            return geo.make_instance(sub, 2, bounds=(1, 3), k=2)


def test_gradients():
    rng = np.random.default_rng(4)
    worst = 0.0
    for seed in range(20):
        inst = five_edge_instance(seed)
        p = gnn.GnnParams.init(geo.EDGE_FEATURE_DIM, seed=seed)
        p.shift, p.scale = gnn.feature_normalizer([inst])
        g = rng.normal(size=inst.n_edges)
        _, cache = gnn.forward(p, inst, return_cache=True)
        an = np.concatenate([a.ravel() for a in gnn.backward(p, inst, g, cache)])
        x0 = p.flat()
        d = rng.normal(size=x0.size)
        d /= np.linalg.norm(d)
        h = 1e-5
        fd = (gnn.forward(p.with_flat(x0 + h * d), inst) @ g - gnn.forward(p.with_flat(x0 - h * d), inst) @ g) / (2 * h)
        worst = max(worst, abs(fd - an @ d) / max(abs(an @ d), 1e-12))

    # Fenchel-Young gradient on a 4-edge instance, common random numbers
    inst = geo.make_instance(geo.build_city([box(0, 0, 1, 1), box(1, 0, 2, 1), box(0, 1, 1, 2), box(1, 1, 2, 2)],
                                            [8000] * 4), 2, bounds=(1, 3), k=2)
    solver = cmst.ExactCmstSolver(inst)
    theta = np.array([0.3, -0.2, 0.5, 0.1])
    mu = sl.construct_target(cmst.exact_districting(inst, lambda d: float(len(d) ** 2)), inst, 1000)
    cfg = sl.TrainConfig(M=10_000)
    grad = sl.fy_gradient(theta, mu, inst, cfg, solver, np.random.default_rng(0))
    Z = np.random.default_rng(0).standard_normal((cfg.M, 4))
    loss = lambda th: sl.perturbed_objective(th, Z, cfg.epsilon, solver) - th @ mu  # noqa: E731
    fy_worst = 0.0
    for d in np.eye(4) + 0.3:
        fd = (loss(theta + 1e-3 * d) - loss(theta - 1e-3 * d)) / 2e-3
        fy_worst = max(fy_worst, abs(fd - grad @ d) / abs(grad @ d))
    ok = worst <= 1e-4 and abs(grad.sum()) <= 1e-12 and fy_worst <= 0.05
    verdict(4, ok, f"network rel err {worst:.1e} (tol 1e-4); FY sum {grad.sum():.1e}, rel err {fy_worst:.3f} (tol 0.05)")


# 5 ---------------------------------------------------------------- TSP heuristic quality

def test_tsp_quality():
    rng = np.random.default_rng(5)
    t0 = time.perf_counter()
    ratios, exact = [], 0
    for _ in range(100):
        xy = tsp.with_depot(rng.uniform(size=(9, 2)), rng.uniform(size=2))
        h = tsp.solve(xy)[1]
        opt = held_karp(xy)
        ratios.append(h / opt)
        exact += h <= opt + 1e-9
    wall = time.perf_counter() - t0
    ok = max(ratios) <= 1.05 and exact >= 90 and wall < 120
    verdict(5, ok, f"worst ratio {max(ratios):.4f} (tol 1.05), exact {exact}/100 (need 90), {wall:.1f} s")


# 6 and 8 ---------------------------------------------------------- benchmark

BENCH = {"seed": 0, "n_units": 12, "t": 3, "n_train": 20, "n_test": 20, "methods": ["DistrictNet", "BD", "FIG"],
         "solver": "exact", "figures": False, "train": {"epochs": 100}}


@pytest.fixture(scope="module")
def bench(tmp_path_factory):
    return pipeline.run_benchmark(BENCH, tmp_path_factory.mktemp("bench"))


def test_districtnet_beats_estimators(bench):
    g = {r["method"]: r["mean_gap_pct"] for r in bench.gap_table}
    ok = g["DistrictNet"] < g["BD"] and g["DistrictNet"] < g["FIG"] and g["DistrictNet"] <= 6.0
    verdict(6, ok, "mean gap %: " + ", ".join(f"{m} {v:.2f}" for m, v in g.items()) + " (DN must be lowest and <= 6)")


def test_compactness(bench):
    errs = [abs(reock_score(box(0, 0, 1, 1)) - 2 / np.pi), abs(reock_score(box(0, 0, 2, 1)) - 2 / (np.pi * 1.25)),
            abs(reock_score(Point(0, 0).buffer(1, 256)) - 1.0)]
    dn = [r["reock_mean"] for r in bench.rows if r["method"] == "DistrictNet"]
    bd = [r["reock_mean"] for r in bench.rows if r["method"] == "BD"]
    wins = sum(a >= b for a, b in zip(dn, bd))
    ok = max(errs) <= 1e-3 and wins >= 0.7 * len(dn)
    verdict(8, ok, f"analytic err {max(errs):.1e} (tol 1e-3); DN Reock >= BD on {wins}/{len(dn)} (need 70%)")


# 7 ---------------------------------------------------------------- estimator regression

def test_estimator_recovery():
    rng = np.random.default_rng(7)
    stats = [est.DistrictStats(*rng.uniform([1, 1, 0.5], [20, 50, 10])) for _ in range(100)]
    errs = []
    ortho = 0.0
    for kind, n in est.KINDS.items():
        beta = rng.uniform(0.5, 3.0, size=n)
        clean = [(s, est.estimate_cost(est.EstimatorParams(kind, beta), s)) for s in stats]
        errs.append(float(np.abs(est.fit_estimator(kind, clean).beta - beta).max()))
        noisy = [(s, c + rng.normal()) for s, c in clean]
        p = est.fit_estimator(kind, noisy)
        X = np.array([est.design_row(kind, s)[0] for s, _ in noisy])
        r = np.array([c for _, c in noisy]) - np.array([est.estimate_cost(p, s) for s, _ in noisy])
        ortho = max(ortho, float(np.abs(X.T @ r).max() / (np.abs(X).sum(axis=0).max() * np.abs(r).max())))
    ok = max(errs) <= 1e-6 and ortho <= 1e-8
    verdict(7, ok, f"coefficient err {max(errs):.1e} (tol 1e-6); scaled |X^T r| {ortho:.1e} (tol 1e-8)")


# 9 ---------------------------------------------------------------- reproducibility

def test_cli_reruns_are_byte_identical(tmp_path):
    gen = tmp_path / "gen.json"
    gen.write_text(json.dumps({"count": 2, "n_units": 9, "pool_units": 30, "scenarios": 20}))
    tr = tmp_path / "train.json"
    tr.write_text(json.dumps({"train": {"epochs": 3, "M": 4, "target_samples": 50}}))
    bench = tmp_path / "bench.json"
    bench.write_text(json.dumps({"n_units": 9, "n_train": 2, "n_test": 2, "pool_units": 30, "scenarios": 20,
                                 "methods": ["DistrictNet", "BD", "AvgTSP"], "estimator_samples": 20,
                                 "train": {"epochs": 3, "M": 4, "target_samples": 50}}))
    diffs = []
    for run in ("a", "b"):
        d = tmp_path / run
        assert cli.main(["generate", "--config", str(gen), "--seed", "11", "--out", str(d / "data")]) == 0
        assert cli.main(["train", "--config", str(tr), "--seed", "11", "--data", str(d / "data"),
                         "--out", str(d / "model")]) == 0
        assert cli.main(["benchmark", "--config", str(bench), "--seed", "11", "--out", str(d / "bench")]) == 0
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    for f in files:
        if (tmp_path / "a" / f).read_bytes() != (tmp_path / "b" / f).read_bytes():
            diffs.append(str(f))
    verdict(9, not diffs and len(files) > 5, f"{len(files) - len(diffs)}/{len(files)} artifacts identical"
            + (f"; differ: {diffs}" if diffs else ""))
