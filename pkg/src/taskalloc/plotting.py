"""PNG figures written next to the CSV outputs."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def plot_trajectory(record, path, title: str = "", q_star=None, schedule=None) -> Path:
    """Game state, population state and revision rate against time."""
    fig, axes = plt.subplots(3, 1, figsize=(7, 7.5), sharex=True)
    t = record.t
    for i in range(record.n):
        axes[0].plot(t, record.q[:, i], lw=1.0, label=f"q_{i + 1}")
        axes[1].plot(t, record.x[:, i], lw=1.0, label=f"x_{i + 1}")
    if q_star is not None:
        axes[0].axhline(float(np.mean(q_star)), color="k", ls="--", lw=0.8, label="q*")
    axes[0].set_ylabel("game state q")
    axes[1].set_ylabel("population state x")
    axes[2].step(t, record.lam, where="post", color="tab:purple")
    axes[2].set_yscale("log")
    axes[2].set_ylabel("revision rate")
    axes[2].set_xlabel("t")
    if schedule:
        for _, t_m, _ in schedule[1:]:
            axes[2].axvline(t_m, color="0.8", lw=0.5)
    axes[0].legend(loc="upper right", fontsize=8, ncol=4)
    axes[1].legend(loc="upper right", fontsize=8, ncol=3)
    if title:
        axes[0].set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return Path(path)


def plot_overview(runs, path, q_star, title: str = "") -> Path:
    """Distance to equilibrium for several runs of one config."""
    fig, ax = plt.subplots(figsize=(7, 4))
    for res in runs:
        err = np.linalg.norm(res.record.q - np.asarray(q_star), axis=1)
        ax.plot(res.record.t, err, lw=1.0, label=res.run_id)
    ax.set_xlabel("t")
    ax.set_ylabel("|q - q*|")
    ax.legend(fontsize=8)
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return Path(path)


def plot_sweep(rows, parameter: str, path, title: str = "") -> Path:
    """Long-run error per grid value, individual seeds and their mean."""
    ok = [r for r in rows if r["status"] == "ok"]
    fig, ax = plt.subplots(figsize=(6, 4))
    if ok:
        v = np.array([r[parameter] for r in ok])
        e = np.array([r["longrun_err"] for r in ok])
        ax.scatter(v, e, s=12, color="0.5", label="seeds")
        grid = np.unique(v)
        ax.plot(grid, [e[v == g].mean() for g in grid], "o-", label="mean")
        if np.all(grid > 0) and grid.max() / grid.min() > 10:
            ax.set_xscale("log")
    ax.set_xlabel(parameter)
    ax.set_ylabel("long-run error")
    ax.legend(fontsize=8)
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return Path(path)
