"""Optional figures written next to the CSV output.

Figures are drawn on standalone Figure objects with the Agg canvas, so no
pyplot state or display is touched.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import numpy as np
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure

STYLE = {"figsize": (5.0, 3.4), "dpi": 120}


def _new(xlabel: str, ylabel: str, title: str):
    fig = Figure(figsize=STYLE["figsize"], dpi=STYLE["dpi"])
    FigureCanvasAgg(fig)
    ax = fig.add_subplot(1, 1, 1)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.set_title(title, fontsize=9)
    ax.spines[["top", "right"]].set_visible(False)
    return fig, ax


def _save(fig: Figure, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path)
    return path


def bars(path: Path, labels: Sequence[str], values: Sequence[float], title: str, ylabel: str = "probability") -> Path:
    fig, ax = _new("", ylabel, title)
    x = np.arange(len(labels))
    ax.bar(x, values, color="0.45")
    ax.set_xticks(x, labels, rotation=60, ha="right", fontsize=7)
    return _save(fig, path)


def expected_vs_observed(path: Path, labels: Sequence[str], expected, observed, title: str) -> Path:
    fig, ax = _new("", "probability", title)
    x = np.arange(len(labels))
    ax.bar(x - 0.2, expected, width=0.4, label="exact", color="0.3")
    ax.bar(x + 0.2, observed, width=0.4, label="simulated", color="0.7")
    ax.set_xticks(x, labels, rotation=60, ha="right", fontsize=7)
    top = max(max(expected, default=0), max(observed, default=0))
    ax.set_ylim(0, 1.2 * top if top > 0 else 1)
    ax.legend(frameon=False, fontsize=8, ncol=2, loc="upper center")
    return _save(fig, path)


def curve(path: Path, x, ys: dict[str, Sequence[float]], xlabel: str, ylabel: str, title: str, logy=False) -> Path:
    fig, ax = _new(xlabel, ylabel, title)
    for name, y in ys.items():
        ax.plot(x, y, marker="o", ms=3, lw=1, label=name)
    if logy:
        ax.set_yscale("log")
    if len(ys) > 1:
        ax.legend(frameon=False, fontsize=8)
    return _save(fig, path)


def convergence(path: Path, rows, title: str) -> Path:
    """Gap against horizon, one line per probe, from (T, probe, finite, limit, gap) rows."""
    fig, ax = _new("T", "|finite - limit|", title)
    for probe in sorted({r[1] for r in rows}):
        sel = sorted((r[0], r[4]) for r in rows if r[1] == probe)
        ax.plot([a for a, _ in sel], [max(b, 1e-300) for _, b in sel], marker="o", ms=3, lw=1, label=f"probe {probe:g}")
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.legend(frameon=False, fontsize=8)
    return _save(fig, path)
