"""Static vector charts rendered from metrics and efficiency CSVs.

Output is deterministic: fixed hash salt, no embedded dates, fixed colors
per algorithm — re-plotting from the same CSVs reproduces the bytes.
"""

from __future__ import annotations

import matplotlib
from matplotlib.figure import Figure

import numpy as np

from .errors import MetricError
from .training import MetricsRow

HASH_SALT = "scoutsim"
ALGO_COLORS = {
    "pspo": "tab:blue",
    "ppo_token": "tab:orange",
    "gspo": "tab:green",
    "pspo_star": "tab:red",
}
FALLBACK_COLOR = "tab:gray"
PANELS = (
    ("mean_return", "mean return"),
    ("actor_grad_norm", "actor grad norm"),
    ("critic_loss", "critic loss"),
)


def _color(algorithm: str) -> str:
    return ALGO_COLORS.get(algorithm, FALLBACK_COLOR)


def _save(fig: Figure, path) -> None:
    with matplotlib.rc_context({"svg.hashsalt": HASH_SALT}):
        fig.savefig(path, format="svg", metadata={"Date": None})


def plot_training_curves(rows: list[MetricsRow], path) -> None:
    """Three panels over training steps: return, actor grad norm, critic
    loss. Thin lines are single seeds; bold lines are per-algorithm means."""
    if not rows:
        raise MetricError("no metrics rows to plot")
    series: dict[tuple[str, int], list[MetricsRow]] = {}
    for row in rows:
        series.setdefault((row.algorithm, row.seed), []).append(row)
    algorithms = sorted({a for a, _ in series})

    fig = Figure(figsize=(12.0, 3.6))
    axes = fig.subplots(1, len(PANELS))
    for ax, (field, label) in zip(axes, PANELS):
        for algo in algorithms:
            keys = sorted(k for k in series if k[0] == algo)
            stacks = []
            for key in keys:
                run = series[key]
                steps = [r.step for r in run]
                values = [getattr(r, field) for r in run]
                ax.plot(steps, values, color=_color(algo), alpha=0.25, linewidth=0.8)
                stacks.append(values)
            if stacks and len({len(s) for s in stacks}) == 1:
                mean = np.mean(np.array(stacks), axis=0)
                ax.plot(
                    [r.step for r in series[keys[0]]], mean,
                    color=_color(algo), linewidth=2.0, label=algo,
                )
        ax.set_xlabel("step")
        ax.set_ylabel(label)
        ax.grid(True, alpha=0.3)
    axes[0].legend(loc="best", fontsize=8)
    fig.tight_layout()
    _save(fig, path)


def _step_interp(xs: np.ndarray, points: list[tuple[int, float]]) -> np.ndarray:
    """Piecewise-constant (hold-last) evaluation of an efficiency curve."""
    px = np.array([p[0] for p in points])
    py = np.array([p[1] for p in points])
    idx = np.searchsorted(px, xs, side="right") - 1
    idx = np.clip(idx, 0, len(px) - 1)
    return py[idx]


def plot_recall_curves(
    records: list[tuple[int, str, int, int, float]], path
) -> None:
    """Recall against cumulative tool calls: thin per-query curves plus a
    bold per-algorithm macro-average on the union call grid."""
    if not records:
        raise MetricError("no efficiency records to plot")
    by_algo: dict[str, dict[int, list[tuple[int, float]]]] = {}
    for qid, algo, _turn, calls, recall in records:
        by_algo.setdefault(algo, {}).setdefault(qid, []).append((calls, recall))

    fig = Figure(figsize=(5.0, 3.6))
    ax = fig.subplots(1, 1)
    for algo in sorted(by_algo):
        queries = by_algo[algo]
        for qid in sorted(queries):
            pts = sorted(queries[qid])
            ax.plot(
                [p[0] for p in pts], [p[1] for p in pts],
                color=_color(algo), alpha=0.2, linewidth=0.7,
                drawstyle="steps-post",
            )
        grid = np.array(sorted({p[0] for pts in queries.values() for p in pts}))
        mean = np.mean(
            [_step_interp(grid, sorted(pts)) for pts in queries.values()], axis=0
        )
        ax.plot(
            grid, mean, color=_color(algo), linewidth=2.0, label=algo,
            drawstyle="steps-post",
        )
    ax.set_xlabel("cumulative tool calls")
    ax.set_ylabel("recall")
    ax.set_ylim(-0.02, 1.02)
    ax.grid(True, alpha=0.3)
    ax.legend(loc="lower right", fontsize=8)
    fig.tight_layout()
    _save(fig, path)
