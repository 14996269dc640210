"""Figure rendering for trajectory reports.

Overlays one polyline per run with a horizontal line at the fixed point,
written to whatever format the output suffix selects (svg, png, pdf).
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402


def render_trajectory_overlay(runs, K: float, path, title: str | None = None) -> Path:
    """Plot the state sequences in ``runs`` against the step index.

    ``runs`` is an iterable of 1-d arrays (one per trial).  Returns the
    written path.
    """
    path = Path(path)
    fig, ax = plt.subplots(figsize=(7.0, 3.2))
    for states in runs:
        ax.plot(range(len(states)), states, lw=0.8)
    ax.axhline(K, color="black", ls="--", lw=1.0, label=f"K = {K:g}")
    ax.set_xlabel("step")
    ax.set_ylabel("z")
    if title:
        ax.set_title(title)
    ax.legend(loc="upper right", frameon=False)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path
