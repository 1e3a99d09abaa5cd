"""Fenchel-Young training of the edge scorer against randomised spanning-forest targets."""

from __future__ import annotations

import csv
import json
import time
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import gnn
from .cmst import (
    DEFAULT_CAP,
    CapExceededError,
    ExactCmstSolver,
    InfeasibleError,
    PartitionEnumerator,
    check_districting,
    cmst_cost_oracle,
    cmst_from_districts,
    ils,
    initial_solution,
    max_spanning_tree,
)
from .demand import CostEvaluator, sample_scenarios
from .geo import EDGE_FEATURE_DIM


class TrainingError(ValueError):
    pass


class PerturbationError(RuntimeError):
    def __init__(self, index, cause):
        super().__init__(f"perturbed solve {index} failed: {cause}")
        self.index = index


@dataclass
class TrainConfig:
    epochs: int = 100
    batch: int = 1
    lr: float = 1e-3
    lr_decay: float = 0.9
    decay_every: int = 10
    lr_min: float = 1e-4
    M: int = 20
    epsilon: float = 1.0
    target_samples: int = 1000
    seed: int = 0
    exact_cap: int = DEFAULT_CAP
    ils_iterations: int = 20
    checkpoint_every: int = 10

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name in ("seed", "epochs"):
                if v < 0:
                    raise ValueError(f"{f.name} must be >= 0")
            elif f.name in ("ils_iterations",):
                if v < 0:
                    raise ValueError(f"{f.name} must be >= 0")
            elif not v > 0:
                raise ValueError(f"{f.name} must be positive")

    def to_dict(self):
        return asdict(self)


def lr_at(epoch, config=None):
    c = config or TrainConfig()
    return max(c.lr * c.lr_decay ** (epoch // c.decay_every), c.lr_min)


# ------------------------------------------------------------------ targets

def construct_target(lambda_bar, instance, n_samples=1000, rng=None):
    """Average edge indicator of per-district minimum spanning trees under uniform random weights."""
    rng = np.random.default_rng(0) if rng is None else rng
    mu = np.zeros(instance.n_edges)
    for d in lambda_bar.districts:
        edges = instance.graph.induced_edges(sorted(d))
        if len(d) == 1:
            continue
        if max_spanning_tree(d, instance, np.zeros(instance.n_edges)) is None:
            raise InfeasibleError(f"district {sorted(d)} is disconnected")
        if len(edges) == len(d) - 1:
            mu[edges] += n_samples
            continue
        w = np.zeros(instance.n_edges)
        for _ in range(n_samples):
            w[edges] = -rng.random(len(edges))
            tree, _ = max_spanning_tree(d, instance, w)
            mu[tree] += 1.0
    return mu / n_samples


# ------------------------------------------------------------------ solvers

class IlsCmstSolver:
    """Heuristic spanning-forest maximiser for instances above the exact cap."""

    def __init__(self, instance, iterations=20, seed=0):
        self.instance = instance
        self.iterations = iterations
        self.seed = seed
        self.calls = 0

    def solve_y(self, theta):
        theta = np.asarray(theta, dtype=float)
        rng = np.random.default_rng([self.seed, self.calls])
        self.calls += 1
        init = initial_solution(theta, self.instance)
        oracle = cmst_cost_oracle(theta, self.instance)
        sol = ils(init, oracle, self.instance, iterations=self.iterations, rng=rng)
        return cmst_from_districts(sol.districts, self.instance, theta).y.astype(float)

    def solve_many(self, thetas):
        return np.array([self.solve_y(th) for th in np.atleast_2d(thetas)])


def make_solver(instance, config=None):
    config = config or TrainConfig()
    if instance.n <= config.exact_cap:
        return ExactCmstSolver(instance, config.exact_cap)
    return IlsCmstSolver(instance, config.ils_iterations, config.seed)


def perturbed_maximizer(theta, instance, epsilon, M, solver, rng):
    """Mean optimal forest indicator over ``M`` Gaussian perturbations of ``theta``.

    Returns ``(mean, samples, Z)``.
    """
    if not epsilon > 0 or M < 1:
        raise ValueError("epsilon must be > 0 and M >= 1")
    theta = np.asarray(theta, dtype=float)
    Z = rng.standard_normal((M, instance.n_edges))
    thetas = theta + epsilon * Z
    try:
        ys = solver.solve_many(thetas)
    except (InfeasibleError, CapExceededError):
        for m, th in enumerate(thetas):
            try:
                solver.solve_many(th[None])
            except (InfeasibleError, CapExceededError) as exc:
                raise PerturbationError(m, exc) from exc
        raise
    return ys.mean(axis=0), ys, Z


def fy_gradient(theta, mu_bar, instance, config, solver, rng):
    avg, _, _ = perturbed_maximizer(theta, instance, config.epsilon, config.M, solver, rng)
    return avg - np.asarray(mu_bar, dtype=float)


def perturbed_objective(theta, Z, epsilon, solver):
    """Sample mean of max (theta + eps Z)^T y for fixed draws ``Z``."""
    thetas = np.asarray(theta, dtype=float) + epsilon * Z
    ys = solver.solve_many(thetas)
    return float(np.mean(np.sum(thetas * ys, axis=1)))


# ------------------------------------------------------------------ training

LOG_FIELDS = ("epoch", "surrogate_loss", "fy_loss", "lr", "grad_norm", "wall_time")


def _checkpoint_doc(params, epoch, config):
    return {"epoch": epoch, "config": config.to_dict(), "params": params.to_dict()}


def save_checkpoint(params, epoch, config, path):
    Path(path).write_text(json.dumps(_checkpoint_doc(params, epoch, config)))


def load_checkpoint(path):
    doc = json.loads(Path(path).read_text())
    return gnn.GnnParams.from_dict(doc["params"]), int(doc["epoch"])


def train(dataset, config=None, out_dir=None, resume=None, record_time=False, log=None, targets=None):
    """SGD on the perturbed Fenchel-Young loss, one instance per step by default.

    ``dataset`` holds ``(instance, target_solution)`` rows. Per-epoch
    randomness comes from a stream keyed on ``(seed, epoch)``, so resuming from
    a checkpoint reproduces the uninterrupted run. When ``out_dir`` is set,
    ``train_log.csv`` and ``checkpoint_<epoch>.json`` files are written there.
    ``log`` (a list) receives one dict per epoch.
    """
    config = config or TrainConfig()
    dataset = list(dataset)
    if not dataset:
        raise TrainingError("empty dataset")
    for i, (inst, sol) in enumerate(dataset):
        if not check_districting(sol.districts, inst, raise_=False):
            raise TrainingError(f"row {i}: target is not a feasible districting")
    if targets is None:
        targets = [construct_target(sol, inst, config.target_samples, np.random.default_rng([config.seed, 1, i]))
                   for i, (inst, sol) in enumerate(dataset)]
    solvers = [make_solver(inst, config) for inst, _ in dataset]
    aggs = [gnn.line_graph_mean(inst) for inst, _ in dataset]

    if resume is not None:
        params, start = load_checkpoint(resume) if not isinstance(resume, tuple) else resume
    else:
        params = gnn.GnnParams.init(EDGE_FEATURE_DIM, seed=config.seed)
        params.shift, params.scale = gnn.feature_normalizer([inst for inst, _ in dataset])
        start = 0

    out = Path(out_dir) if out_dir is not None else None
    rows = []
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        logpath = out / "train_log.csv"
        if start > 0 and logpath.exists():
            with logpath.open() as fh:
                rows = [r for r in csv.DictReader(fh) if int(r["epoch"]) < start]

    arrays = params.arrays()
    for epoch in range(start, config.epochs):
        t0 = time.perf_counter()
        rng = np.random.default_rng([config.seed, 2, epoch])
        lr = lr_at(epoch, config)
        order = rng.permutation(len(dataset))
        sur, fy, gnorm = 0.0, 0.0, 0.0
        for b in range(0, len(order), config.batch):
            acc = [np.zeros_like(a) for a in arrays]
            chunk = order[b:b + config.batch]
            for i in chunk:
                inst, _ = dataset[i]
                theta, cache = gnn.forward(params, inst, return_cache=True, agg=aggs[i])
                avg, ys, Z = perturbed_maximizer(theta, inst, config.epsilon, config.M, solvers[i], rng)
                g = avg - targets[i]
                sur += float(theta @ g)
                fy += float(np.mean(np.sum((theta + config.epsilon * Z) * ys, axis=1)) - theta @ targets[i])
                for a, ga in zip(acc, gnn.backward(params, inst, g, cache)):
                    a += ga
            step = [a / len(chunk) for a in acc]
            gnorm += float(np.sqrt(sum(float((s * s).sum()) for s in step)))
            for a, s in zip(arrays, step):
                a -= lr * s
        n_steps = -(-len(dataset) // config.batch)
        row = {"epoch": epoch, "surrogate_loss": sur / len(dataset), "fy_loss": fy / len(dataset), "lr": lr,
               "grad_norm": gnorm / n_steps, "wall_time": (time.perf_counter() - t0) if record_time else None}
        rows.append(row)
        if log is not None:
            log.append(row)
        if out is not None and (epoch + 1) % config.checkpoint_every == 0:
            save_checkpoint(params, epoch + 1, config, out / f"checkpoint_{epoch + 1:04d}.json")
    if out is not None:
        with (out / "train_log.csv").open("w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=LOG_FIELDS)
            w.writeheader()
            for r in rows:
                w.writerow({k: ("" if r[k] is None or r[k] == "" else r[k]) for k in LOG_FIELDS})
    return params


# ------------------------------------------------------------------ targets by enumeration

def exact_training_target(instance, t=None, scenarios=None, n_scenarios=100, seed=0, cap=DEFAULT_CAP,
                          evaluator=None, return_cost=False):
    """Minimum expected-cost districting by full enumeration over a fixed scenario set."""
    from .cmst import exact_districting

    if t is not None and t != instance.target_size:
        raise ValueError(f"instance target size is {instance.target_size}, not {t}")
    try:
        enum = PartitionEnumerator(instance, cap)
    except CapExceededError as exc:
        raise CapExceededError(f"{exc}; generate targets with the heuristic solver instead") from exc
    if evaluator is None:
        scenarios = scenarios if scenarios is not None else sample_scenarios(instance, n_scenarios, seed)
        evaluator = CostEvaluator(instance, scenarios)
    sol = exact_districting(instance, evaluator, cap, enumerator=enum)
    if return_cost:
        return sol, evaluator.total(sol.districts)
    return sol
