"""End-to-end solving, paired Monte Carlo evaluation and the benchmark harness."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import cmst, estimators as est, gnn
from . import structlearn as sl
from .demand import CostEvaluator, avg_tsp_cost, sample_scenarios
from .geo import generate_training_instance, synth_city
from .geometry import reock_score, union

METHODS = ("DistrictNet", "BD", "FIG", "PredGNN", "AvgTSP")
CSV_FIELDS = ("instance_id", "method", "seed", "cost_km", "rel_cost_pct", "gap_pct", "reock_mean", "feasible",
              "wall_ms")


class ConfigError(ValueError):
    pass


@dataclass
class Budget:
    iterations: int = 200
    time_limit: float | None = None


# ------------------------------------------------------------------ metrics

def reock(district, instance):
    return reock_score(union(instance.graph.polygons(sorted(district))))


def mean_reock(solution, instance):
    return float(np.mean([reock(d, instance) for d in solution.districts]))


def exact_districting(instance, cost_oracle, cap=cmst.DEFAULT_CAP):
    return cmst.exact_districting(instance, cost_oracle, cap)


# ------------------------------------------------------------------ solvers

def solve_districtnet(instance, params, budget=None, rng=None, exact=False):
    """Predict edge weights, solve the spanning-forest surrogate, decode districts.

    ``exact=True`` replaces the local search by the enumeration solver
    (only for instances within its cap).
    """
    theta = gnn.forward(params, instance)
    if instance.num_districts == 1:
        return cmst.DistrictingSolution.from_districts([range(instance.n)], instance)
    if exact:
        return cmst.decode(cmst.ExactCmstSolver(instance).solve(theta), instance)
    budget = budget or Budget()
    rng = np.random.default_rng(0) if rng is None else rng
    init = cmst.initial_solution(theta, instance)
    best = cmst.ils(init, cmst.cmst_cost_oracle(theta, instance), instance, iterations=budget.iterations,
                    time_limit=budget.time_limit, rng=rng)
    if not best.feasible:
        return best
    return cmst.decode(cmst.cmst_from_districts(best.districts, instance, theta), instance)


def solve_with_estimator(instance, estimator, budget=None, rng=None, exact=False):
    """Local search (or enumeration) with ``estimator`` as the district cost."""
    if exact:
        return exact_districting(instance, estimator)
    budget = budget or Budget()
    rng = np.random.default_rng(0) if rng is None else rng
    init = cmst.initial_solution(np.ones(instance.n_edges), instance)
    return cmst.ils(init, estimator, instance, iterations=budget.iterations, time_limit=budget.time_limit, rng=rng)


# ------------------------------------------------------------------ evaluation

@dataclass
class MethodResult:
    method: str
    cost_km: float
    rel_cost_pct: float | None
    gap_pct: float | None
    reock_mean: float
    feasible: bool
    wall_ms: float | None = None
    district_costs: list = field(default_factory=list)


@dataclass
class EvaluationReport:
    instance_id: str
    reference: str | None
    optimum_km: float | None
    scenario_hash: str
    results: dict  # method -> MethodResult

    def to_dict(self):
        return {"instance_id": self.instance_id, "reference": self.reference, "optimum_km": self.optimum_km,
                "scenario_hash": self.scenario_hash, "results": {m: asdict(r) for m, r in self.results.items()}}


def evaluate(solutions, instance, scenarios, reference=None, optimum=None, evaluator=None, wall_ms=None,
             instance_id=""):
    """Paired Monte Carlo costs of named solutions on one shared scenario set.

    Relative costs are against ``reference`` (default: the first method);
    gaps are against ``optimum`` (km) when given.
    """
    ev = evaluator or CostEvaluator(instance, scenarios)
    names = list(solutions)
    if reference is None and names:
        reference = names[0]
    if names and reference not in solutions:
        raise KeyError(f"reference method {reference!r} not among {names}")
    costs = {}
    out = {}
    for m in names:
        sol = solutions[m]
        dc = [ev(d) for d in sol.districts]
        costs[m] = float(sum(dc))
        out[m] = MethodResult(m, costs[m], None, None, mean_reock(sol, instance), bool(sol.feasible),
                              None if wall_ms is None else wall_ms.get(m), dc)
    for m in names:
        out[m].rel_cost_pct = 100.0 * (costs[m] - costs[reference]) / costs[reference]
        if optimum is not None:
            out[m].gap_pct = 100.0 * (costs[m] - optimum) / optimum
    return EvaluationReport(instance_id, reference if names else None, optimum, scenarios.digest(), out)


# ------------------------------------------------------------------ benchmark config

@dataclass
class BenchmarkConfig:
    seed: int
    n_units: int = 12
    t: int = 3
    bounds: list | None = None
    n_train: int = 20
    n_test: int = 20
    pool_cities: int = 3
    pool_units: int = 60
    mean_area: float = 2.0
    scenarios: int = 100
    methods: list = field(default_factory=lambda: list(METHODS))
    reference: str = "DistrictNet"
    solver: str = "auto"
    ils_iterations: int = 200
    ils_time_limit: float | None = None
    estimator_samples: int = 100
    predgnn_rows: int = 200
    predgnn_epochs: int = 500
    train: dict = field(default_factory=dict)
    districtnet_params: str | None = None
    figures: bool = True
    record_time: bool = False

    @classmethod
    def from_dict(cls, doc):
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(doc) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        if "seed" not in doc:
            raise ConfigError("config needs an explicit seed")
        cfg = cls(**doc)
        bad = [m for m in cfg.methods if m not in METHODS]
        if bad:
            raise ConfigError(f"unknown methods {bad}; choose from {list(METHODS)}")
        if cfg.solver not in ("auto", "exact", "ils"):
            raise ConfigError("solver must be auto, exact or ils")
        try:
            sl.TrainConfig(**{**cfg.train, "seed": cfg.seed})
        except TypeError as exc:
            raise ConfigError(f"bad train section: {exc}") from exc
        if cfg.districtnet_params is not None and not Path(cfg.districtnet_params).exists():
            raise ConfigError(f"model file {cfg.districtnet_params} not found")
        return cfg

    def to_dict(self):
        return asdict(self)

    def digest(self):
        return config_hash(self.to_dict())


def config_hash(doc):
    return hashlib.sha256(json.dumps(doc, sort_keys=True, separators=(",", ":")).encode()).hexdigest()[:16]


def generate_instances(count, n_units, t, seed, bounds=None, pool_cities=3, pool_units=60, mean_area=2.0,
                       offset=0, max_tries=100):
    """Feasible random sub-city instances; draws without a feasible districting are skipped."""
    prng = np.random.default_rng([seed, 0])
    pool = [synth_city(pool_units, prng, mean_area, name=f"city{i}") for i in range(pool_cities)]
    rng = np.random.default_rng([seed, 1])
    out = []
    tries = 0
    while len(out) < offset + count:
        tries += 1
        if tries > max_tries * (offset + count + 1):
            raise RuntimeError("could not draw enough feasible instances")
        inst = generate_training_instance(pool, n_units, t, rng, bounds=bounds, seed=len(out))
        if inst.n <= cmst.DEFAULT_CAP:
            try:
                if len(cmst.PartitionEnumerator(inst).partitions) == 0:
                    continue
            except cmst.CapExceededError:
                pass
        out.append(inst)
    return out[offset:]


def _scenario_seed(seed, split, i):
    return int(seed) * 1_000_003 + split * 10_007 + i


# ------------------------------------------------------------------ benchmark

@dataclass
class BenchmarkResult:
    config: BenchmarkConfig
    reports: list
    rows: list
    gap_table: list
    summary: dict


def _use_exact(cfg, inst):
    if cfg.solver == "exact":
        return True
    return cfg.solver == "auto" and inst.n <= cmst.DEFAULT_CAP


def _target(inst, seed):
    ev = CostEvaluator(inst, sample_scenarios(inst, 100, seed))
    if inst.n <= cmst.DEFAULT_CAP:
        sol = sl.exact_training_target(inst, evaluator=ev)
    else:
        sol = solve_with_estimator(inst, ev, Budget(100), np.random.default_rng(seed))
    return sol, ev


def _fit_models(cfg, train_rows):
    models = {}
    if "DistrictNet" in cfg.methods:
        if cfg.districtnet_params:
            models["DistrictNet"] = gnn.GnnParams.load(cfg.districtnet_params)
        else:
            tc = sl.TrainConfig(**{**cfg.train, "seed": cfg.seed})
            models["DistrictNet"] = sl.train([(i, s) for i, s, _ in train_rows], tc)
    pairs = [(inst, d, c) for inst, _, ev in train_rows for d, c in sorted(ev.cache.items(), key=lambda x: sorted(x[0]))]
    for kind in ("BD", "FIG"):
        if kind in cfg.methods:
            data = []
            for j, (inst, d, c) in enumerate(pairs):
                rng = np.random.default_rng([cfg.seed, 3, j])
                data.append((est.district_stats(d, inst, cfg.estimator_samples, rng), c))
            models[kind] = est.fit_estimator(kind, data)
    if "PredGNN" in cfg.methods:
        rng = np.random.default_rng([cfg.seed, 4])
        pick = rng.permutation(len(pairs))[:cfg.predgnn_rows]
        rows = [(gnn.district_graph(pairs[j][0], pairs[j][1]), pairs[j][2]) for j in sorted(pick)]
        models["PredGNN"] = gnn.fit_predgnn(rows, gnn.PredGnnConfig(epochs=cfg.predgnn_epochs, seed=cfg.seed))
    return models


class _PredOracle:
    def __init__(self, params, instance):
        self.params, self.instance, self.cache = params, instance, {}

    def __call__(self, d):
        key = frozenset(d)
        if key not in self.cache:
            self.cache[key] = gnn.predgnn_cost(self.params, self.instance, key)
        return self.cache[key]


def method_oracle(method, model, inst, cfg):
    """District-cost function a benchmark method hands to the districting search."""
    if method in ("BD", "FIG"):
        return est.EstimatorOracle(model, inst, cfg.estimator_samples, seed=cfg.seed)
    if method == "PredGNN":
        return _PredOracle(model, inst)
    if method == "AvgTSP":
        cache = {}

        def oracle(d):
            key = frozenset(d)
            if key not in cache:
                cache[key] = avg_tsp_cost(key, inst)
            return cache[key]
        return oracle
    if method == "DistrictNet":
        return cmst.cmst_cost_oracle(gnn.forward(model, inst), inst)
    raise ConfigError(f"unknown method {method!r}")


def _solve_method(method, model, inst, cfg, idx):
    exact = _use_exact(cfg, inst)
    budget = Budget(cfg.ils_iterations, cfg.ils_time_limit)
    rng = np.random.default_rng([cfg.seed, 5, idx])
    if method == "DistrictNet":
        return solve_districtnet(inst, model, budget, rng, exact=exact)
    return solve_with_estimator(inst, method_oracle(method, model, inst, cfg), budget, rng, exact=exact)


def _run_instance(args):
    idx, inst, cfg, models = args
    scen = sample_scenarios(inst, cfg.scenarios, _scenario_seed(cfg.seed, 2, idx))
    ev = CostEvaluator(inst, scen)
    optimum = None
    if inst.n <= cmst.DEFAULT_CAP:
        opt = exact_districting(inst, ev)
        optimum = ev.total(opt.districts)
    sols, wall = {}, {}
    for m in cfg.methods:
        t0 = time.perf_counter()
        sols[m] = _solve_method(m, models[m], inst, cfg, idx)
        wall[m] = 1000.0 * (time.perf_counter() - t0) if cfg.record_time else None
    ref = cfg.reference if cfg.reference in sols else None
    rep = evaluate(sols, inst, scen, reference=ref, optimum=optimum, evaluator=ev, wall_ms=wall,
                   instance_id=f"test{idx:03d}")
    return rep, sols


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, bool):
        return str(v).lower()
    if isinstance(v, float):
        return repr(round(v, 10))
    return str(v)


def run_benchmark(config, out_dir=None, jobs=1):
    """Train/fit the configured methods, solve held-out instances, write CSV/JSON reports."""
    cfg = config if isinstance(config, BenchmarkConfig) else BenchmarkConfig.from_dict(
        json.loads(Path(config).read_text()) if isinstance(config, (str, Path)) else config)
    if not cfg.methods:
        res = BenchmarkResult(cfg, [], [], [], {})
        if out_dir is not None:
            _write_outputs(res, Path(out_dir), {}, [])
        return res
    bounds = tuple(cfg.bounds) if cfg.bounds else None
    kw = dict(bounds=bounds, pool_cities=cfg.pool_cities, pool_units=cfg.pool_units, mean_area=cfg.mean_area)
    allinst = generate_instances(cfg.n_train + cfg.n_test, cfg.n_units, cfg.t, cfg.seed, **kw)
    train_inst, test_inst = allinst[:cfg.n_train], allinst[cfg.n_train:]
    needs_train = any(m in cfg.methods for m in ("BD", "FIG", "PredGNN")) or (
        "DistrictNet" in cfg.methods and not cfg.districtnet_params)
    train_rows = []
    if needs_train:
        for i, inst in enumerate(train_inst):
            sol, ev = _target(inst, _scenario_seed(cfg.seed, 1, i))
            train_rows.append((inst, sol, ev))
    models = _fit_models(cfg, train_rows)
    for m in cfg.methods:
        models.setdefault(m, None)

    tasks = [(i, inst, cfg, models) for i, inst in enumerate(test_inst)]
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as pool:
            results = list(pool.map(_run_instance, tasks))
    else:
        results = [_run_instance(t) for t in tasks]
    reports = [r for r, _ in results]

    rows = []
    for rep in reports:
        for m in cfg.methods:
            r = rep.results[m]
            rows.append({"instance_id": rep.instance_id, "method": m, "seed": cfg.seed, "cost_km": r.cost_km,
                         "rel_cost_pct": r.rel_cost_pct if rep.reference else None, "gap_pct": r.gap_pct,
                         "reock_mean": r.reock_mean, "feasible": r.feasible, "wall_ms": r.wall_ms})
    gap_table, summary = [], {}
    for m in cfg.methods:
        mine = [r for r in rows if r["method"] == m]
        gaps = [r["gap_pct"] for r in mine if r["gap_pct"] is not None]
        rel = [r["rel_cost_pct"] for r in mine if r["rel_cost_pct"] is not None]
        summary[m] = {
            "mean_cost_km": float(np.mean([r["cost_km"] for r in mine])),
            "mean_rel_cost_pct": float(np.mean(rel)) if rel else None,
            "mean_gap_pct": float(np.mean(gaps)) if gaps else None,
            "mean_reock": float(np.mean([r["reock_mean"] for r in mine])),
            "all_feasible": all(r["feasible"] for r in mine),
        }
        if gaps:
            gap_table.append({"method": m, "mean_gap_pct": float(np.mean(gaps)), "max_gap_pct": float(np.max(gaps)),
                              "n_optimal": int(sum(g <= 1e-9 for g in gaps)), "n": len(gaps)})
    res = BenchmarkResult(cfg, reports, rows, gap_table, summary)
    if out_dir is not None:
        first = (test_inst[0], results[0][1]) if results else None
        _write_outputs(res, Path(out_dir), models, [first] if first else [])
    return res


def rows_to_csv(rows, columns=CSV_FIELDS):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r[c]) for c in columns])
    return buf.getvalue()


def _write_outputs(res, out, models, maps):
    out.mkdir(parents=True, exist_ok=True)
    cfgd = res.config.to_dict()
    (out / "report.csv").write_text(rows_to_csv(res.rows))
    doc = {
        "config": cfgd, "config_hash": res.config.digest(), "seed": res.config.seed,
        "scenario_hashes": {r.instance_id: r.scenario_hash for r in res.reports},
        "rows": res.rows, "summary": res.summary, "gap_table": res.gap_table,
        "reports": [r.to_dict() for r in res.reports],
    }
    (out / "report.json").write_text(json.dumps(doc, indent=1, sort_keys=True))
    if res.gap_table:
        (out / "gap_table.csv").write_text(rows_to_csv(res.gap_table, ("method", "mean_gap_pct", "max_gap_pct",
                                                                       "n_optimal", "n")))
    if res.config.figures and res.rows:
        from . import plots

        plots.gap_bars(res, out / "gaps.png")
        for inst, sols in maps:
            plots.district_maps(inst, sols, out / "districts.png")
