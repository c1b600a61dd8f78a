"""Render the aggregated metric series to PNG files.

The CSV files stay the canonical, byte-stable output; these plots draw the
same numbers with the confidence band, phase boundaries, and oracle
reference levels for a quick visual check.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")  # file output only, no display

import matplotlib.pyplot as plt

from .runner import MetricSeries

__all__ = ["render_cvar", "render_occupancy"]


def _draw_band(ax, series: MetricSeries, color: str) -> None:
    ax.fill_between(series.times, series.ci_low, series.ci_high,
                    color=color, alpha=0.25, linewidth=0)
    ax.plot(series.times, series.mean, color=color, linewidth=1.2)


def _draw_breaks(ax, breakpoints: Sequence[int]) -> None:
    for b in breakpoints:
        ax.axvline(b, color="gray", linestyle=":", linewidth=1)


def render_occupancy(series: MetricSeries, breakpoints: Sequence[int], path) -> Path:
    """Rolling occupancy with its confidence band and phase boundaries."""
    fig, ax = plt.subplots(figsize=(7.0, 3.2), constrained_layout=True)
    _draw_band(ax, series, color="tab:blue")
    _draw_breaks(ax, breakpoints)
    ax.set_ylim(-0.02, 1.02)
    ax.set_xlabel("step")
    ax.set_ylabel(series.label or "occupancy")
    ax.set_title(f"rolling occupancy (window {series.window}, {series.runs} runs)")
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return Path(path)


def render_cvar(
    series: MetricSeries,
    breakpoints: Sequence[int],
    oracle_refs: Sequence[float],
    path,
) -> Path:
    """Rolling CVaR with its band plus the per-phase oracle level as a
    dashed reference segment over each phase's active stretch."""
    fig, ax = plt.subplots(figsize=(7.0, 3.2), constrained_layout=True)
    _draw_band(ax, series, color="tab:red")
    _draw_breaks(ax, breakpoints)
    t_lo = int(series.times[0])
    t_hi = int(series.times[-1])
    starts = [0, *breakpoints]
    stops = [*breakpoints, t_hi]
    for ref, seg_start, seg_stop in zip(oracle_refs, starts, stops):
        lo = max(seg_start, t_lo)
        hi = min(seg_stop, t_hi)
        if lo < hi:
            ax.hlines(ref, lo, hi, color="black", linestyle="--", linewidth=1)
    ax.set_xlabel("step")
    ax.set_ylabel(series.label or "cvar")
    ax.set_title(f"rolling reward CVaR (window {series.window}, {series.runs} runs)")
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return Path(path)
