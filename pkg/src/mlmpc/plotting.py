"""Static SVG line charts of sessions and prediction runs."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

__all__ = ["plot_session", "plot_comparison", "plot_prediction"]


def _save(fig, path):
    plt.rcParams["svg.hashsalt"] = "mlmpc"
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def _channel_axes(n):
    fig, axes = plt.subplots(n, 1, figsize=(8, 2.6 * n), sharex=True, squeeze=False)
    return fig, axes[:, 0]


def plot_session(log, path, channels=None, title="", names=None):
    """Output and reference against time, one panel per tracked channel."""
    channels = list(range(log.outputs.shape[1]) if channels is None else channels)
    fig, axes = _channel_axes(len(channels))
    t = np.arange(len(log))
    for ax, ch in zip(axes, channels):
        ax.plot(t, log.reference[:, ch], "k--", lw=1, label="reference")
        ax.plot(t, log.outputs[:, ch], lw=1.2, label="output")
        ax.set_ylabel(names[ch] if names else f"y{ch}")
        ax.legend(loc="best", fontsize=8)
    axes[0].set_title(title)
    axes[-1].set_xlabel("step")
    _save(fig, path)


def plot_comparison(logs, path, channels=None, title=""):
    """Several sessions over one reference; ``logs`` maps a label to a log."""
    first = next(iter(logs.values()))
    channels = list(range(first.outputs.shape[1]) if channels is None else channels)
    fig, axes = _channel_axes(len(channels))
    t = np.arange(len(first))
    for ax, ch in zip(axes, channels):
        ax.plot(t, first.reference[:, ch], "k--", lw=1, label="reference")
        for label, log in logs.items():
            ax.plot(np.arange(len(log)), log.outputs[:, ch], lw=1.2, label=label)
        ax.set_ylabel(f"y{ch}")
        ax.legend(loc="best", fontsize=8)
    axes[0].set_title(title)
    axes[-1].set_xlabel("step")
    _save(fig, path)


def plot_prediction(outputs, corrected, uncorrected, path, title=""):
    """True output next to corrected and free-running predictions."""
    fig, axes = _channel_axes(outputs.shape[1])
    t = np.arange(len(outputs))
    for ch, ax in enumerate(axes):
        ax.plot(t, outputs[:, ch], "k", lw=1.4, label="plant")
        ax.plot(t, corrected[:, ch], lw=1, label="corrected")
        ax.plot(t, uncorrected[:, ch], lw=1, label="uncorrected")
        ax.set_ylabel(f"y{ch}")
        ax.legend(loc="best", fontsize=8)
    axes[0].set_title(title)
    axes[-1].set_xlabel("step")
    _save(fig, path)
