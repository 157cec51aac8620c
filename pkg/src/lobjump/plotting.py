"""PNG figures written next to the text and CSV reports."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .evaluation import Grid  # noqa: E402

# fixed metadata keeps PNG bytes identical across runs
_PNG_META = {"Software": None}


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=100, format="png", metadata=_PNG_META)
    plt.close(fig)


def plot_grid(grid: Grid, path, metric: str = "f1") -> None:
    data = np.full((len(grid.sets), len(grid.stocks)), np.nan)
    for i, s in enumerate(grid.sets):
        for j, k in enumerate(grid.stocks):
            if (s, k) in grid.cells:
                data[i, j] = getattr(grid.cells[(s, k)], metric)
    fig, ax = plt.subplots(figsize=(1.2 * len(grid.stocks) + 2, 0.5 * len(grid.sets) + 1.5))
    im = ax.imshow(data, vmin=0, vmax=1, cmap="viridis", aspect="auto")
    ax.set_xticks(range(len(grid.stocks)), grid.stocks)
    ax.set_yticks(range(len(grid.sets)), [f"set {s}" for s in grid.sets])
    for i in range(data.shape[0]):
        for j in range(data.shape[1]):
            txt = "ERR" if np.isnan(data[i, j]) else f"{data[i, j]:.2f}"
            ax.text(j, i, txt, ha="center", va="center", color="w")
    fig.colorbar(im, ax=ax, label=metric)
    _save(fig, path)


def plot_history(history: list[dict], path, title: str = "") -> None:
    ep = [h["epoch"] for h in history]
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.plot(ep, [h["train_loss"] for h in history], label="train")
    ax.plot(ep, [h["val_loss"] for h in history], label="validation")
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    if title:
        ax.set_title(title)
    ax.legend()
    _save(fig, path)


def plot_attention(top: list[tuple[str, float]], n_features: int, path) -> None:
    names = [n for n, _ in top][::-1]
    vals = [v for _, v in top][::-1]
    fig, ax = plt.subplots(figsize=(6, 0.3 * len(top) + 1))
    ax.barh(names, vals)
    ax.axvline(1.0 / n_features, color="k", ls="--", lw=1, label="uniform")
    ax.set_xlabel("attention weight")
    ax.legend(loc="lower right")
    _save(fig, path)
