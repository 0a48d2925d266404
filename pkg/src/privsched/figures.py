"""Figure rendering for simulation and accounting reports.

Every report-producing CLI path drops a PNG next to its delimited output.
Rendering is headless (Agg) and deterministic for fixed inputs.
"""

from __future__ import annotations

import math

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

_SAVE_KW = {"dpi": 110, "metadata": {"Software": "privsched"}}


def save_metrics_figure(metrics, path) -> None:
    """Grant outcomes by class plus the scheduling-delay distribution."""
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.6))
    labels = sorted(set(metrics.arrived_by_class) | set(metrics.granted_by_class))
    xs = range(len(labels))
    arrived = [metrics.arrived_by_class.get(k, 0) for k in labels]
    granted = [metrics.granted_by_class.get(k, 0) for k in labels]
    ax1.bar(xs, arrived, width=0.6, color="lightgray", label="arrived")
    ax1.bar(xs, granted, width=0.6, color="tab:blue", label="granted")
    ax1.set_xticks(list(xs), labels or ["(none)"])
    ax1.set_ylabel("pipelines")
    ax1.set_title(f"{metrics.policy}: {metrics.granted} granted / {metrics.arrived} arrived")
    ax1.legend(frameon=False)
    if metrics.delays:
        ax2.hist(metrics.delays, bins=min(30, max(5, len(set(metrics.delays)))),
                 color="tab:orange")
    ax2.set_xlabel("scheduling delay (ticks)")
    ax2.set_ylabel("granted pipelines")
    ax2.set_title("delay distribution")
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)


def save_sweep_figure(rows: list[dict], x_key: str, path) -> None:
    """Granted count against one grid axis, one line per policy."""
    fig, ax = plt.subplots(figsize=(6, 3.8))
    policies = sorted({r["policy"] for r in rows})
    for policy in policies:
        pts = sorted((r[x_key], r["granted"]) for r in rows if r["policy"] == policy)
        ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o", label=policy)
    ax.set_xlabel(x_key)
    ax.set_ylabel("granted pipelines")
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)


def save_curves_figure(orders, named_curves: dict, path) -> None:
    """Privacy-loss curves over the order grid (finite orders only)."""
    fig, ax = plt.subplots(figsize=(6, 3.8))
    for name, eps in named_curves.items():
        xs = [a for a in orders if math.isfinite(a)]
        ys = [e for a, e in zip(orders, eps) if math.isfinite(a)]
        ax.plot(xs, ys, marker=".", label=name)
    ax.set_xscale("log")
    ax.set_xlabel("order")
    ax.set_ylabel("eps")
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)


def save_counter_figure(trace: list[dict], path) -> None:
    """True versus released counts with the high-probability bounds."""
    fig, ax = plt.subplots(figsize=(6, 3.8))
    ts = [row["tick"] for row in trace]
    ax.plot(ts, [row["true_count"] for row in trace], label="true", color="black")
    ax.plot(ts, [row["released"] for row in trace], label="released",
            color="tab:blue", alpha=0.8)
    ax.fill_between(ts, [row["lower"] for row in trace],
                    [row["upper"] for row in trace], alpha=0.2, label="bounds")
    ax.set_xlabel("tick")
    ax.set_ylabel("users")
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)
