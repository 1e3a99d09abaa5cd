"""Edge-scoring graph network and the node-level district cost regressor.

Both networks are small enough to be written directly in numpy with
hand-derived reverse-mode gradients.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

LEAKY_SLOPE = 0.01
HIDDEN = 64
CONV_LAYERS = 3
HEAD_WIDTHS = (64, 64, 32, 1)
FORMAT_VERSION = 1


class CacheMismatchError(RuntimeError):
    pass


def _lrelu(x):
    return np.where(x > 0, x, LEAKY_SLOPE * x)


def _lrelu_grad(x):
    return np.where(x > 0, 1.0, LEAKY_SLOPE)


def _glorot(rng, fan_out, fan_in):
    lim = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-lim, lim, size=(fan_out, fan_in))


def line_graph_mean(instance):
    """Row-normalised adjacency of the line graph (edges sharing an endpoint)."""
    edges = instance.graph.edges
    incident = [[] for _ in range(instance.n)]
    for e, (u, v) in enumerate(edges):
        incident[u].append(e)
        incident[v].append(e)
    rows, cols = [], []
    for e, (u, v) in enumerate(edges):
        nbrs = sorted((set(incident[u]) | set(incident[v])) - {e})
        rows.extend([e] * len(nbrs))
        cols.extend(nbrs)
    m = len(edges)
    a = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(m, m))
    deg = np.asarray(a.sum(axis=1)).ravel()
    inv = np.divide(1.0, deg, out=np.zeros_like(deg), where=deg > 0)
    return sp.diags(inv) @ a


def _instance_key(instance):
    return (id(instance), instance.n_edges, float(instance.edge_features.sum()))


# --------------------------------------------------------------- edge scorer

@dataclass
class GnnParams:
    conv: list  # [(W0, W1)] per layer
    head: list  # [(W, b)] per dense layer
    shift: np.ndarray
    scale: np.ndarray
    seed: int | None = None

    @classmethod
    def init(cls, in_dim, seed=0, hidden=HIDDEN, layers=CONV_LAYERS, head=HEAD_WIDTHS):
        rng = np.random.default_rng(seed)
        conv, d = [], in_dim
        for _ in range(layers):
            conv.append((_glorot(rng, hidden, d), _glorot(rng, hidden, d)))
            d = hidden
        dense = []
        for w in head:
            dense.append((_glorot(rng, w, d), np.zeros(w)))
            d = w
        return cls(conv, dense, np.zeros(in_dim), np.ones(in_dim), seed)

    def arrays(self):
        out = []
        for w0, w1 in self.conv:
            out += [w0, w1]
        for w, b in self.head:
            out += [w, b]
        return out

    def names(self):
        out = []
        for i in range(len(self.conv)):
            out += [f"conv{i}.W0", f"conv{i}.W1"]
        for i in range(len(self.head)):
            out += [f"head{i}.W", f"head{i}.b"]
        return out

    def copy(self):
        return GnnParams([(a.copy(), b.copy()) for a, b in self.conv], [(a.copy(), b.copy()) for a, b in self.head],
                         self.shift.copy(), self.scale.copy(), self.seed)

    def flat(self):
        return np.concatenate([a.ravel() for a in self.arrays()])

    def with_flat(self, vec):
        out = self.copy()
        arrs = out.arrays()
        pos = 0
        for a in arrs:
            a[...] = vec[pos:pos + a.size].reshape(a.shape)
            pos += a.size
        return out

    def to_dict(self):
        return {
            "version": FORMAT_VERSION,
            "arch": {"kind": "edge-gnn", "in_dim": int(self.conv[0][0].shape[1]), "hidden": int(self.conv[0][0].shape[0]),
                     "layers": len(self.conv), "head": [int(w.shape[0]) for w, _ in self.head],
                     "activation": f"leaky_relu({LEAKY_SLOPE})"},
            "seed": self.seed,
            "shift": self.shift.tolist(),
            "scale": self.scale.tolist(),
            "arrays": {n: a.ravel().tolist() for n, a in zip(self.names(), self.arrays())},
        }

    @classmethod
    def from_dict(cls, doc):
        arch = doc["arch"]
        p = cls.init(arch["in_dim"], seed=0, hidden=arch["hidden"], layers=arch["layers"], head=tuple(arch["head"]))
        for n, a in zip(p.names(), p.arrays()):
            a[...] = np.asarray(doc["arrays"][n], dtype=float).reshape(a.shape)
        p.shift = np.asarray(doc["shift"], dtype=float)
        p.scale = np.asarray(doc["scale"], dtype=float)
        p.seed = doc.get("seed")
        return p

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass
class ForwardCache:
    key: tuple
    agg: object
    xs: list = field(default_factory=list)   # conv inputs
    ax: list = field(default_factory=list)   # aggregated conv inputs
    pre: list = field(default_factory=list)  # conv pre-activations
    hs: list = field(default_factory=list)   # head inputs
    zs: list = field(default_factory=list)   # head pre-activations


def forward(params, instance, return_cache=False, agg=None):
    """Edge weights theta (one per edge) from the instance's edge features."""
    if agg is None:
        agg = line_graph_mean(instance)
    cache = ForwardCache(_instance_key(instance), agg)
    x = (instance.edge_features - params.shift) / params.scale
    for w0, w1 in params.conv:
        ax = agg @ x
        pre = x @ w0.T + ax @ w1.T
        cache.xs.append(x)
        cache.ax.append(ax)
        cache.pre.append(pre)
        x = _lrelu(pre)
    h = x
    last = len(params.head) - 1
    for i, (w, b) in enumerate(params.head):
        z = h @ w.T + b
        cache.hs.append(h)
        cache.zs.append(z)
        h = z if i == last else _lrelu(z)
    theta = h[:, 0]
    return (theta, cache) if return_cache else theta


def backward(params, instance, grad_theta, cache):
    """Gradients of ``theta . grad_theta`` for every parameter array (same order as ``arrays()``)."""
    if cache is None or cache.key != _instance_key(instance):
        raise CacheMismatchError("forward cache does not belong to this instance")
    g = np.asarray(grad_theta, dtype=float).reshape(-1, 1)
    head_grads = []
    last = len(params.head) - 1
    for i in range(last, -1, -1):
        w, _ = params.head[i]
        dz = g if i == last else g * _lrelu_grad(cache.zs[i])
        head_grads.append((dz.T @ cache.hs[i], dz.sum(axis=0)))
        g = dz @ w
    head_grads.reverse()
    conv_grads = []
    for l in range(len(params.conv) - 1, -1, -1):
        w0, w1 = params.conv[l]
        dp = g * _lrelu_grad(cache.pre[l])
        conv_grads.append((dp.T @ cache.xs[l], dp.T @ cache.ax[l]))
        g = dp @ w0 + cache.agg.T @ (dp @ w1)
    conv_grads.reverse()
    out = []
    for a, b in conv_grads:
        out += [a, b]
    for a, b in head_grads:
        out += [a, b]
    return out


def feature_normalizer(instances):
    feats = np.vstack([i.edge_features for i in instances])
    mu = feats.mean(axis=0)
    sd = feats.std(axis=0)
    return mu, np.where(sd > 1e-12, sd, 1.0)


# ------------------------------------------------------------ district GNN

PRED_HIDDEN = 64
PRED_LAYERS = 4
PRED_OUT = 1028
PRED_DENSE = 100
PRED_IN = 8


@dataclass
class PredGnnParams:
    conv: list  # [(W_self, W_nbr, b)]
    head: list  # [(W, b)]
    shift: np.ndarray
    scale: np.ndarray
    y_shift: float = 0.0
    y_scale: float = 1.0
    seed: int | None = None

    @classmethod
    def init(cls, seed=0, hidden=PRED_HIDDEN, layers=PRED_LAYERS, out=PRED_OUT, dense=PRED_DENSE):
        rng = np.random.default_rng(seed)
        widths = [hidden] * (layers - 1) + [out]
        conv, d = [], PRED_IN
        for w in widths:
            conv.append((_glorot(rng, w, d), _glorot(rng, w, d), np.zeros(w)))
            d = w
        head = [(_glorot(rng, dense, d), np.zeros(dense)), (_glorot(rng, 1, dense), np.zeros(1))]
        return cls(conv, head, np.zeros(PRED_IN), np.ones(PRED_IN), 0.0, 1.0, seed)

    def arrays(self):
        out = []
        for a, b, c in self.conv:
            out += [a, b, c]
        for a, b in self.head:
            out += [a, b]
        return out

    def names(self):
        out = []
        for i in range(len(self.conv)):
            out += [f"conv{i}.W1", f"conv{i}.W2", f"conv{i}.b"]
        for i in range(len(self.head)):
            out += [f"head{i}.W", f"head{i}.b"]
        return out

    def to_dict(self):
        return {
            "version": FORMAT_VERSION,
            "arch": {"kind": "pred-gnn", "hidden": int(self.conv[0][0].shape[0]), "layers": len(self.conv),
                     "out": int(self.conv[-1][0].shape[0]), "dense": int(self.head[0][0].shape[0])},
            "seed": self.seed, "shift": self.shift.tolist(), "scale": self.scale.tolist(),
            "y_shift": self.y_shift, "y_scale": self.y_scale,
            "arrays": {n: a.ravel().tolist() for n, a in zip(self.names(), self.arrays())},
        }

    @classmethod
    def from_dict(cls, doc):
        arch = doc["arch"]
        p = cls.init(0, arch["hidden"], arch["layers"], arch["out"], arch["dense"])
        for n, a in zip(p.names(), p.arrays()):
            a[...] = np.asarray(doc["arrays"][n], dtype=float).reshape(a.shape)
        p.shift = np.asarray(doc["shift"], dtype=float)
        p.scale = np.asarray(doc["scale"], dtype=float)
        p.y_shift, p.y_scale, p.seed = float(doc["y_shift"]), float(doc["y_scale"]), doc.get("seed")
        return p

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))


def district_graph(instance, district):
    """District plus its neighbouring units: (node features, sum-adjacency).

    Feature order is population, sqrt(population), area, sqrt(area),
    perimeter, density, depot distance, inclusion flag.
    """
    g = instance.graph
    members = set(district)
    nodes = sorted(members | {u for v in members for u in g.adjacency[v]})
    pos = {v: i for i, v in enumerate(nodes)}
    x = np.empty((len(nodes), PRED_IN))
    for i, v in enumerate(nodes):
        u = g.units[v]
        x[i] = (u.population, np.sqrt(u.population), u.area, np.sqrt(u.area), u.perimeter, u.density,
                u.depot_distance, 1.0 if v in members else 0.0)
    rows, cols = [], []
    for a, b in g.edges:
        if a in pos and b in pos:
            rows += [pos[a], pos[b]]
            cols += [pos[b], pos[a]]
    adj = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(len(nodes), len(nodes)))
    return x, adj


def _batch(graphs):
    xs = np.vstack([g[0] for g in graphs])
    adj = sp.block_diag([g[1] for g in graphs], format="csr")
    sizes = np.array([len(g[0]) for g in graphs])
    owner = np.repeat(np.arange(len(graphs)), sizes)
    pool = sp.csr_matrix((1.0 / sizes[owner], (owner, np.arange(len(owner)))), shape=(len(graphs), len(owner)))
    return xs, adj, pool


def _pred_forward(params, xs, adj, pool):
    cache = {"x": [], "ax": [], "pre": []}
    x = (xs - params.shift) / params.scale
    for w1, w2, b in params.conv:
        ax = adj @ x
        pre = x @ w1.T + ax @ w2.T + b
        cache["x"].append(x)
        cache["ax"].append(ax)
        cache["pre"].append(pre)
        x = np.maximum(pre, 0.0)
    g = pool @ x
    (wa, ba), (wb, bb) = params.head
    za = g @ wa.T + ba
    ha = np.maximum(za, 0.0)
    out = ha @ wb.T + bb
    cache.update(g=g, za=za, ha=ha, adj=adj, pool=pool)
    return out[:, 0], cache


def _pred_backward(params, cache, dout):
    (wa, _), (wb, _) = params.head
    d = dout.reshape(-1, 1)
    gwb, gbb = d.T @ cache["ha"], d.sum(axis=0)
    dza = (d @ wb) * (cache["za"] > 0)
    gwa, gba = dza.T @ cache["g"], dza.sum(axis=0)
    dx = cache["pool"].T @ (dza @ wa)
    conv = []
    for l in range(len(params.conv) - 1, -1, -1):
        w1, w2, _ = params.conv[l]
        dp = dx * (cache["pre"][l] > 0)
        conv.append((dp.T @ cache["x"][l], dp.T @ cache["ax"][l], dp.sum(axis=0)))
        dx = dp @ w1 + cache["adj"].T @ (dp @ w2)
    conv.reverse()
    out = []
    for a, b, c in conv:
        out += [a, b, c]
    return out + [gwa, gba, gwb, gbb]


def predgnn_cost(params, instance, district):
    x, adj = district_graph(instance, district)
    out, _ = _pred_forward(params, *_batch([(x, adj)]))
    return float(params.y_shift + params.y_scale * out[0])


def predgnn_costs(params, graphs):
    out, _ = _pred_forward(params, *_batch(graphs))
    return params.y_shift + params.y_scale * out


@dataclass
class PredGnnConfig:
    epochs: int = 10_000
    batch: int = 64
    lr: float = 1e-4
    patience: int = 1000
    tol: float = 1e-4
    seed: int = 0


def fit_predgnn(rows, config=None, log=None):
    """Mean-squared-error fit with Adam on standardised targets.

    ``rows`` holds ``(district_graph, cost)`` pairs. Stops at ``config.epochs``
    or once the epoch loss moved by less than ``config.tol`` over the last
    ``config.patience`` epochs. ``log`` (a list) receives per-epoch losses.
    """
    config = config or PredGnnConfig()
    if not rows:
        raise ValueError("empty training set")
    graphs = [r[0] for r in rows]
    y = np.array([r[1] for r in rows], dtype=float)
    params = PredGnnParams.init(config.seed)
    feats = np.vstack([g[0] for g in graphs])
    params.shift = feats.mean(axis=0)
    sd = feats.std(axis=0)
    params.scale = np.where(sd > 1e-12, sd, 1.0)
    params.y_shift = float(y.mean())
    ysd = float(y.std())
    params.y_scale = ysd if ysd > 1e-12 * max(1.0, abs(params.y_shift)) else 1.0
    target = (y - params.y_shift) / params.y_scale

    rng = np.random.default_rng(config.seed)
    arrs = params.arrays()
    m = [np.zeros_like(a) for a in arrs]
    v = [np.zeros_like(a) for a in arrs]
    b1, b2, eps = 0.9, 0.999, 1e-8
    step = 0
    history = []
    batches = [list(range(len(rows)))] if len(rows) <= config.batch else None
    static = [_batch([graphs[i] for i in idx]) for idx in batches] if batches else None
    for epoch in range(config.epochs):
        if static is None:
            perm = rng.permutation(len(rows))
            chunks = [perm[i:i + config.batch] for i in range(0, len(rows), config.batch)]
            packed = [(_batch([graphs[i] for i in c]), c) for c in chunks]
        else:
            packed = list(zip(static, batches))
        total = 0.0
        for (xs, adj, pool), idx in packed:
            out, cache = _pred_forward(params, xs, adj, pool)
            err = out - target[idx]
            total += float((err ** 2).sum())
            grads = _pred_backward(params, cache, 2.0 * err / len(idx))
            step += 1
            for a, gr, mi, vi in zip(arrs, grads, m, v):
                mi *= b1
                mi += (1 - b1) * gr
                vi *= b2
                vi += (1 - b2) * gr * gr
                a -= config.lr * (mi / (1 - b1 ** step)) / (np.sqrt(vi / (1 - b2 ** step)) + eps)
        loss = total / len(rows)
        history.append(loss)
        if log is not None:
            log.append(loss)
        if epoch >= config.patience and abs(history[-1 - config.patience] - loss) < config.tol:
            break
    return params
