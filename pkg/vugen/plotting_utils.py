"""
vugen/plotting_utils.py

Helper functions for creating plots of:
- Sweep curves (a metric against CFG scale, reduction ratio or training step)
- The eFID-vs-alignment trade-off of a CFG sweep
- Per-system metric comparisons (bar chart)
- Grids of generated or reconstructed images

All plotting functions return matplotlib Figure objects so they can be
saved by the harness or displayed in Streamlit via st.pyplot(fig).
"""

from __future__ import annotations

from typing import Optional, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
import pandas as pd

from vugen import config


def plot_metric_curves(
    table: pd.DataFrame,
    x: str,
    y: str,
    group: Optional[str] = None,
    title: str = "",
    log_x: bool = False,
):
    """
    Line plot of ``y`` against ``x``, one line per value of ``group``.

    Parameters
    ----------
    table : pandas.DataFrame
        Long-format sweep table, e.g. columns ``system, step, efid``.
    x, y : str
        Column names for the axes.
    group : str, optional
        Column whose values get separate lines (colored via
        ``config.SYSTEM_COLORS`` when known).

    Returns
    -------
    matplotlib.figure.Figure
    """
    fig, ax = plt.subplots()

    groups = [(None, table)] if group is None else list(table.groupby(group, sort=False))
    for name, rows in groups:
        rows = rows.sort_values(x)
        ax.plot(
            rows[x],
            rows[y],
            marker="o",
            label=None if name is None else str(name),
            linewidth=config.DEFAULT_LINE_WIDTH,
            color=config.SYSTEM_COLORS.get(str(name), None),
        )

    if log_x:
        ax.set_xscale("log", base=2)
    ax.set_xlabel(x.replace("_", " "))
    ax.set_ylabel(y.replace("_", " "))
    ax.set_title(title or f"{y} vs {x}")
    if group is not None:
        ax.legend(loc="best")
    ax.grid(True, alpha=0.3)

    fig.tight_layout()
    return fig


def plot_tradeoff(table: pd.DataFrame, x: str = "efid", y: str = "alignment", label: str = "cfg_scale"):
    """
    Scatter + path of two metrics across a sweep, each point annotated with
    its axis value (the CFG trade-off curve).
    """
    fig, ax = plt.subplots()
    rows = table.sort_values(label)
    ax.plot(rows[x], rows[y], marker="o", linewidth=config.DEFAULT_LINE_WIDTH, color=config.SYSTEM_COLORS["vugen"])
    for _, row in rows.iterrows():
        ax.annotate(f"{row[label]:g}", (row[x], row[y]), textcoords="offset points", xytext=(4, 4), fontsize=8)
    ax.set_xlabel(x)
    ax.set_ylabel(y)
    ax.set_title(f"{y} vs {x} across {label}")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    return fig


def plot_metric_bar_chart(values: dict, metric: str, reference: Optional[float] = None):
    """
    Bar chart of one metric per system.

    Parameters
    ----------
    values : dict
        System name -> metric value.
    metric : str
        Axis label.
    reference : float, optional
        Dashed horizontal reference line (e.g. the real-vs-real floor).
    """
    fig, ax = plt.subplots()

    if not values:
        ax.text(0.5, 0.5, "No results available", ha="center", va="center")
        ax.axis("off")
        fig.tight_layout()
        return fig

    names = list(values)
    x = np.arange(len(names))
    ax.bar(x, [values[n] for n in names], color=[config.SYSTEM_COLORS.get(n, "#757575") for n in names])
    ax.set_xticks(x)
    ax.set_xticklabels(names)
    ax.set_ylabel(metric)
    ax.set_title(f"{metric} by system")
    if reference is not None:
        ax.axhline(reference, color="gray", linestyle="--", linewidth=1)
    ax.grid(axis="y", alpha=0.3)

    fig.tight_layout()
    return fig


def to_uint8(images: np.ndarray) -> np.ndarray:
    """``(n, H, W, 3)`` floats in [-1, 1] -> uint8."""
    return np.clip(np.rint((np.asarray(images) + 1.0) * 127.5), 0, 255).astype(np.uint8)


def plot_image_grid(images: np.ndarray, captions: Optional[Sequence[str]] = None, ncols: int = config.GRID_COLUMNS):
    """
    Grid of images ``(n, H, W, 3)`` in [-1, 1] with optional captions.
    """
    images = to_uint8(images)
    n = len(images)
    ncols = max(1, min(ncols, n))
    nrows = max(1, int(np.ceil(n / ncols)))
    fig, axes = plt.subplots(nrows, ncols, figsize=(1.6 * ncols, 1.8 * nrows), squeeze=False)
    for i, ax in enumerate(axes.flat):
        ax.axis("off")
        if i >= n:
            continue
        ax.imshow(images[i], interpolation="nearest")
        if captions is not None:
            ax.set_title(captions[i], fontsize=5)
    fig.tight_layout()
    return fig
