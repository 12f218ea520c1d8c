"""PNG figures rendered next to the CSV/JSON result files."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_META = {"Software": None}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=100, metadata=_META)
    plt.close(fig)
    return path


def plot_loss(history: list[dict], path, key: str = "loss", title: str = "training loss") -> Path:
    """Per-epoch loss curve; rows with a ``stage`` field are drawn per stage."""
    fig, ax = plt.subplots(figsize=(6, 3.5))
    stages = sorted({row.get("stage", 0) for row in history})
    x0 = 0
    for s in stages:
        rows = [r for r in history if r.get("stage", 0) == s]
        x = np.arange(len(rows)) + x0
        ax.plot(x, [r[key] for r in rows], label=f"stage {s}" if len(stages) > 1 else key)
        x0 += len(rows)
    ax.set_yscale("log")
    ax.set_xlabel("epoch")
    ax.set_ylabel(key)
    ax.set_title(title)
    ax.legend()
    ax.grid(alpha=0.3)
    fig.tight_layout()
    return _save(fig, path)


def plot_srp_heatmap(maps: list[dict], azimuth_deg: np.ndarray, path, true_az=None) -> Path:
    """One panel per condition: scenes x azimuth normalized SRP."""
    conditions = list(dict.fromkeys(c for m in maps for c in m))
    fig, axes = plt.subplots(1, len(conditions), figsize=(4 * len(conditions), 3.5), squeeze=False)
    for ax, cond in zip(axes[0], conditions):
        rows = np.array([m[cond] for m in maps if cond in m], dtype=float)
        rows = rows / np.maximum(rows.max(axis=1, keepdims=True), 1e-300)
        ax.imshow(rows, aspect="auto", origin="lower", cmap="magma",
                  extent=(azimuth_deg[0], azimuth_deg[-1], -0.5, rows.shape[0] - 0.5))
        if true_az is not None:
            ax.plot(np.asarray(true_az), np.arange(len(true_az)), "c.", ms=3)
        ax.set_title(cond)
        ax.set_xlabel("azimuth [deg]")
    axes[0][0].set_ylabel("scene")
    fig.tight_layout()
    return _save(fig, path)


def plot_table(table: dict, path, metrics=None) -> Path:
    """Bar chart of mean +- std per metric and condition."""
    conditions = list(table)
    metrics = metrics or list(next(iter(table.values())))
    fig, axes = plt.subplots(1, len(metrics), figsize=(3.2 * len(metrics), 3.2), squeeze=False)
    for ax, m in zip(axes[0], metrics):
        means = [table[c][m]["mean"] for c in conditions]
        stds = [table[c][m]["std"] for c in conditions]
        ax.bar(np.arange(len(conditions)), means, yerr=stds, capsize=3, color="tab:blue")
        ax.set_xticks(np.arange(len(conditions)), conditions, rotation=30, ha="right")
        ax.set_title(m)
        ax.grid(axis="y", alpha=0.3)
    fig.tight_layout()
    return _save(fig, path)


def plot_beampattern(patterns: dict, azimuth_deg: np.ndarray, path) -> Path:
    """Beampatterns in dB relative to each peak."""
    fig, ax = plt.subplots(figsize=(6, 3.5))
    for name, p in patterns.items():
        p = np.asarray(p, dtype=float)
        ax.plot(azimuth_deg, 10 * np.log10(np.maximum(p / p.max(), 1e-6)), label=name)
    ax.set_xlabel("azimuth [deg]")
    ax.set_ylabel("power [dB]")
    ax.set_ylim(-40, 1)
    ax.legend()
    ax.grid(alpha=0.3)
    fig.tight_layout()
    return _save(fig, path)
