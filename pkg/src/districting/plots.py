"""Report figures (PNG, written without timestamps so reruns are byte-identical)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

PNG_META = {"Software": None}


def _save(fig, path):
    fig.savefig(path, dpi=100, metadata=PNG_META)
    plt.close(fig)


def gap_bars(result, path):
    """Mean optimality gap per method (falls back to relative cost without optima)."""
    methods = list(result.summary)
    use_gap = all(result.summary[m]["mean_gap_pct"] is not None for m in methods)
    key = "mean_gap_pct" if use_gap else "mean_rel_cost_pct"
    vals = [result.summary[m][key] or 0.0 for m in methods]
    fig, ax = plt.subplots(figsize=(5, 3))
    ax.bar(methods, vals, color="0.4")
    ax.set_ylabel("gap to optimum (%)" if use_gap else "cost vs reference (%)")
    ax.tick_params(axis="x", labelrotation=20)
    fig.tight_layout()
    _save(fig, path)


def district_maps(instance, solutions, path):
    """One panel per method, units coloured by district, depot marked."""
    names = list(solutions)
    fig, axes = plt.subplots(1, len(names), figsize=(3 * len(names), 3), squeeze=False)
    cmap = plt.get_cmap("tab20")
    for ax, m in zip(axes[0], names):
        assign = solutions[m].assignment
        for v, u in enumerate(instance.graph.units):
            geoms = getattr(u.polygon, "geoms", [u.polygon])
            for g in geoms:
                x, y = g.exterior.xy
                ax.fill(np.asarray(x), np.asarray(y), color=cmap(int(assign[v]) % 20), ec="k", lw=0.4)
        ax.plot(*instance.graph.depot, marker="*", color="k", ms=9)
        ax.set_title(m, fontsize=9)
        ax.set_aspect("equal")
        ax.set_axis_off()
    fig.tight_layout()
    _save(fig, path)
