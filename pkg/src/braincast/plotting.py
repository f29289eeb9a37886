"""Figures written next to the CSV/JSON reports.

Everything renders through the non-interactive Agg backend to files; no
function opens a window.
"""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

RC = {
    "figure.dpi": 110,
    "font.size": 9,
    "axes.titlesize": 10,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
}


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def training_curve(history, path):
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(5, 3.2))
        ep = [r["epoch"] for r in history]
        ax.plot(ep, [r["train_mse"] for r in history], "o-", ms=3, label="train")
        ax.plot(ep, [r["val_mse"] for r in history], "s-", ms=3, label="validation")
        best = min(history, key=lambda r: r["val_mse"])
        ax.axvline(best["epoch"], color="0.6", lw=0.8, ls="--")
        ax.set_xlabel("epoch")
        ax.set_ylabel("MSE (normalized)")
        ax.legend(frameon=False)
        return _save(fig, path)


def metric_table(rows, key, path, metrics=("mse", "r"), kind="line"):
    """One panel per metric; ``key`` names the x column (e.g. ``L`` or ``variant``)."""
    with plt.rc_context(RC):
        fig, axes = plt.subplots(1, len(metrics), figsize=(3.2 * len(metrics), 3))
        axes = np.atleast_1d(axes)
        xs = [r[key] for r in rows]
        for ax, m in zip(axes, metrics):
            ys = [r[m] for r in rows]
            if kind == "bar":
                ax.bar(range(len(xs)), ys, color="0.45")
                ax.set_xticks(range(len(xs)), [str(x) for x in xs])
            else:
                ax.plot(xs, ys, "o-")
            ax.set_xlabel(key)
            ax.set_ylabel(m.upper())
        return _save(fig, path)


def attention_map(M, path, title=""):
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(4, 3.5))
        im = ax.imshow(M, cmap="viridis", interpolation="nearest")
        fig.colorbar(im, ax=ax, fraction=0.046, pad=0.04)
        ax.set_xlabel("key variate")
        ax.set_ylabel("query variate")
        if title:
            ax.set_title(title)
        return _save(fig, path)


def forecast(lookback, horizon, pred, path, variate=0):
    """Observed look-back, true continuation (if known) and forecast of one variate."""
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(6, 2.8))
        L = lookback.shape[-1]
        T = pred.shape[-1]
        ax.plot(np.arange(L), lookback[variate], ".", color="k", ms=3, label="observed")
        if horizon is not None:
            ax.plot(np.arange(L, L + T), horizon[variate], ".", color="0.5", ms=3, label="actual")
        ax.plot(np.arange(L, L + T), pred[variate], ".-", color="tab:blue", ms=3, label="forecast")
        ax.set_xlabel("time point")
        ax.set_ylabel(f"v{variate}")
        ax.legend(frameon=False)
        return _save(fig, path)
