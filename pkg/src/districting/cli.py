"""Command line entry point: generate, train, solve, benchmark, evaluate."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import cmst, estimators as est, gnn, pipeline
from . import structlearn as sl
from .demand import CostEvaluator, sample_scenarios
from .geo import _jsonable, instance_to_dict, load_instance, read_feature_property, write_geojson

GENERATE_KEYS = {"count": 20, "n_units": 12, "t": 3, "bounds": None, "pool_cities": 3, "pool_units": 60,
                 "mean_area": 2.0, "scenarios": 100, "targets": True}
TRAIN_KEYS = {"method": "DistrictNet", "train": {}, "estimator_samples": 100, "predgnn_rows": 200,
              "predgnn_epochs": 500}
SOLVE_KEYS = {"iterations": 200, "time_limit": None, "exact": False, "estimator_samples": 100}
EVALUATE_KEYS = {"scenarios": 100, "reference": None}


class CliError(Exception):
    pass


def read_config(path, defaults):
    doc = {}
    if path is not None:
        try:
            doc = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise CliError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(doc, dict):
            raise CliError("config must be a JSON object")
        unknown = sorted(set(doc) - set(defaults))
        if unknown:
            raise CliError(f"unknown config keys: {unknown}")
    return {**defaults, **doc}


def _meta(cfg, seed, command):
    full = {"command": command, "seed": seed, **cfg}
    return {"command": command, "seed": seed, "config_hash": pipeline.config_hash(_jsonable(full))}


def _dump(path, doc):
    Path(path).write_text(json.dumps(_jsonable(doc), indent=1, sort_keys=True) + "\n")


# ------------------------------------------------------------------ commands

def cmd_generate(args):
    cfg = read_config(args.config, GENERATE_KEYS)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    meta = _meta(cfg, args.seed, "generate")
    insts = pipeline.generate_instances(int(cfg["count"]), int(cfg["n_units"]), int(cfg["t"]), args.seed,
                                        bounds=tuple(cfg["bounds"]) if cfg["bounds"] else None,
                                        pool_cities=cfg["pool_cities"], pool_units=cfg["pool_units"],
                                        mean_area=cfg["mean_area"]) if cfg["count"] else []
    rows = []
    for i, inst in enumerate(insts):
        iid = f"{i:04d}"
        _dump(out / f"instance_{iid}.json", {**instance_to_dict(inst), "meta": meta})
        row = {"id": iid, "n": inst.n, "k": inst.num_districts, "target": None, "note": None}
        if cfg["targets"]:
            try:
                ev = CostEvaluator(inst, sample_scenarios(inst, int(cfg["scenarios"]),
                                                          pipeline._scenario_seed(args.seed, 1, i)))
                sol, cost = sl.exact_training_target(inst, evaluator=ev, return_cost=True)
                _dump(out / f"target_{iid}.json", {"districts": [sorted(d) for d in sol.districts],
                                                   "cost_km": cost, "meta": meta})
                row["target"] = f"target_{iid}.json"
            except (cmst.CapExceededError, cmst.InfeasibleError) as exc:
                row["note"] = str(exc)
                print(f"instance {iid}: {exc}", file=sys.stderr)
        rows.append(row)
    _dump(out / "manifest.json", {"meta": meta, "config": cfg, "instances": rows})
    return 0


def _load_dataset(data):
    data = Path(data)
    try:
        manifest = json.loads((data / "manifest.json").read_text())
    except OSError as exc:
        raise CliError(f"no manifest in {data}") from exc
    rows, missing = [], []
    for r in manifest["instances"]:
        tpath = data / f"target_{r['id']}.json"
        if not tpath.exists():
            missing.append(r["id"])
            continue
        inst = load_instance(data / f"instance_{r['id']}.json")
        doc = json.loads(tpath.read_text())
        rows.append((inst, cmst.DistrictingSolution.from_districts(doc["districts"], inst), doc.get("cost_km")))
    if missing:
        raise CliError(f"missing targets for instances: {missing}")
    return rows


def cmd_train(args):
    cfg = read_config(args.config, TRAIN_KEYS)
    rows = _load_dataset(args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    meta = _meta(cfg, args.seed, "train")
    method = cfg["method"]
    if method == "DistrictNet":
        try:
            tc = sl.TrainConfig(**{**cfg["train"], "seed": args.seed})
        except TypeError as exc:
            raise CliError(f"bad train section: {exc}") from exc
        resume = sl.load_checkpoint(args.resume) if args.resume else None
        params = sl.train([(i, s) for i, s, _ in rows], tc, out_dir=out, resume=resume,
                          record_time=args.record_time)
        doc = params.to_dict()
    elif method in ("BD", "FIG", "PredGNN"):
        pairs = []
        for j, (inst, sol, cost) in enumerate(rows):
            ev = CostEvaluator(inst, sample_scenarios(inst, 100, pipeline._scenario_seed(args.seed, 1, j)))
            for d in sol.districts:
                pairs.append((inst, d, ev(d)))
            for d in est.sample_training_districts(inst, 10, np.random.default_rng([args.seed, 6, j])):
                pairs.append((inst, d, ev(d)))
        if method == "PredGNN":
            data = [(gnn.district_graph(i, d), c) for i, d, c in pairs[:cfg["predgnn_rows"]]]
            doc = gnn.fit_predgnn(data, gnn.PredGnnConfig(epochs=cfg["predgnn_epochs"], seed=args.seed)).to_dict()
        else:
            data = [(est.district_stats(d, i, cfg["estimator_samples"], np.random.default_rng([args.seed, 3, j])), c)
                    for j, (i, d, c) in enumerate(pairs)]
            doc = est.fit_estimator(method, data).to_dict()
    else:
        raise CliError(f"unknown method {method!r}")
    _dump(out / "model.json", {**doc, "meta": meta})
    return 0


def _load_model(path):
    doc = json.loads(Path(path).read_text())
    if "arch" in doc and doc["arch"]["kind"] == "edge-gnn":
        return "DistrictNet", gnn.GnnParams.from_dict(doc)
    if "arch" in doc and doc["arch"]["kind"] == "pred-gnn":
        return "PredGNN", gnn.PredGnnParams.from_dict(doc)
    if doc.get("kind") in est.KINDS:
        return doc["kind"], est.EstimatorParams.from_dict(doc)
    raise CliError(f"{path}: unrecognised model file")


def cmd_solve(args):
    cfg = read_config(args.config, SOLVE_KEYS)
    inst = load_instance(args.instance)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    meta = _meta(cfg, args.seed, "solve")
    rng = np.random.default_rng(args.seed)
    budget = pipeline.Budget(int(cfg["iterations"]), cfg["time_limit"])
    if args.model:
        method, model = _load_model(args.model)
    else:
        method, model = "AvgTSP", None
    bcfg = pipeline.BenchmarkConfig(seed=args.seed, solver="exact" if cfg["exact"] else "ils",
                                    ils_iterations=budget.iterations, ils_time_limit=budget.time_limit,
                                    estimator_samples=cfg["estimator_samples"])
    if method == "DistrictNet":
        sol = pipeline.solve_districtnet(inst, model, budget, rng, exact=cfg["exact"])
    else:
        sol = pipeline._solve_method(method, model, inst, bcfg, 0)
    oracle = pipeline.method_oracle(method, model, inst, bcfg)
    objective = float(sum(oracle(d) for d in sol.districts))
    doc = {"method": method, "feasible": sol.feasible, "districts": [sorted(d) for d in sol.districts],
           "assignment": sol.assignment.tolist(), "objective": objective, "seed": args.seed,
           "wall_time_ms": None, "meta": meta}
    _dump(out / "solution.json", doc)
    if args.geojson:
        write_geojson(inst.graph, out / "solution.geojson", {"district": sol.assignment.tolist()})
    if not sol.feasible:
        print("solution is infeasible", file=sys.stderr)
        return 2 if args.fail_infeasible else 0
    return 0


def cmd_benchmark(args):
    if args.config is None:
        raise CliError("benchmark needs --config")
    try:
        doc = json.loads(Path(args.config).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise CliError(f"cannot read config {args.config}: {exc}") from exc
    doc["seed"] = args.seed
    if args.record_time:
        doc["record_time"] = True
    try:
        cfg = pipeline.BenchmarkConfig.from_dict(doc)
    except pipeline.ConfigError as exc:
        raise CliError(str(exc)) from exc
    res = pipeline.run_benchmark(cfg, args.out, jobs=args.jobs)
    for g in res.gap_table:
        print(f"{g['method']:12s} mean gap {g['mean_gap_pct']:.3f}%  ({g['n_optimal']}/{g['n']} optimal)")
    return 0 if all(r["feasible"] for r in res.rows) else 1


def cmd_evaluate(args):
    cfg = read_config(args.config, EVALUATE_KEYS)
    inst = load_instance(args.instance)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    meta = _meta(cfg, args.seed, "evaluate")
    sols = {}
    for p in args.solutions:
        p = Path(p)
        if p.suffix == ".geojson":
            assign = read_feature_property(p, "district")
            name = p.stem
            sols[name] = cmst.DistrictingSolution.from_assignment(assign, inst)
        else:
            d = json.loads(p.read_text())
            name = d.get("method", p.stem)
            if name in sols:
                name = f"{name}:{p.stem}"
            sols[name] = cmst.DistrictingSolution.from_districts(d["districts"], inst)
    scen = sample_scenarios(inst, int(cfg["scenarios"]), args.seed)
    rep = pipeline.evaluate(sols, inst, scen, reference=cfg["reference"], instance_id=Path(args.instance).stem)
    rows = [{"instance_id": rep.instance_id, "method": m, "seed": args.seed, "cost_km": r.cost_km,
             "rel_cost_pct": r.rel_cost_pct, "gap_pct": r.gap_pct, "reock_mean": r.reock_mean, "feasible": r.feasible,
             "wall_ms": None} for m, r in rep.results.items()]
    (out / "evaluation.csv").write_text(pipeline.rows_to_csv(rows))
    _dump(out / "evaluation.json", {**rep.to_dict(), "meta": meta})
    return 0


# ------------------------------------------------------------------ parser

def build_parser():
    p = argparse.ArgumentParser(prog="districting", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config_required=False):
        sp.add_argument("--config", required=config_required, help="JSON config file")
        sp.add_argument("--seed", type=int, required=True, help="master seed (mandatory)")
        sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("--jobs", type=int, default=1, help="parallel instance solves")
        return sp

    common(sub.add_parser("generate", help="synthetic instances and exact targets")).set_defaults(func=cmd_generate)
    t = common(sub.add_parser("train", help="train the edge scorer or fit a benchmark estimator"))
    t.add_argument("--data", required=True, help="directory written by `generate`")
    t.add_argument("--resume", help="checkpoint to continue from")
    t.add_argument("--record-time", action="store_true", help="log wall times (breaks byte-identical reruns)")
    t.set_defaults(func=cmd_train)
    s = common(sub.add_parser("solve", help="districting for one instance"))
    s.add_argument("--instance", required=True)
    s.add_argument("--model", help="model.json from `train`; omit for the centroid-TSP estimator")
    s.add_argument("--geojson", action="store_true", help="also write solution.geojson with a district property")
    s.add_argument("--fail-infeasible", action="store_true", help="exit with status 2 on infeasible output")
    s.set_defaults(func=cmd_solve)
    b = common(sub.add_parser("benchmark", help="train, solve and report on held-out instances"), True)
    b.add_argument("--record-time", action="store_true", help="record wall times (breaks byte-identical reruns)")
    b.set_defaults(func=cmd_benchmark)
    e = common(sub.add_parser("evaluate", help="paired Monte Carlo evaluation of solution files"))
    e.add_argument("--instance", required=True)
    e.add_argument("--solutions", nargs="+", required=True, help="solution.json or solution.geojson files")
    e.set_defaults(func=cmd_evaluate)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (CliError, pipeline.ConfigError, sl.TrainingError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
