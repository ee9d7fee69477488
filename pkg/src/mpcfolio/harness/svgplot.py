"""Dependency-free SVG line plots with mean curves and +/- 1 std bands."""

from __future__ import annotations

import numpy as np

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e",
           "#8c564b", "#e377c2", "#17becf")

WIDTH, HEIGHT = 860, 460
MARGIN_L, MARGIN_R, MARGIN_T, MARGIN_B = 70, 170, 40, 45


def _fmt(x: float) -> str:
    return f"{x:.2f}"


def _ticks(lo: float, hi: float, n: int = 5) -> list:
    if hi <= lo:
        hi = lo + 1.0
    step = (hi - lo) / (n - 1)
    return [lo + i * step for i in range(n)]


def render_curves(groups, title: str = "") -> str:
    """`groups` is a list of dicts: label, mean (list), optional std (list)."""
    all_lo, all_hi, n_steps = np.inf, -np.inf, 0
    for g in groups:
        mean = np.asarray(g["mean"], dtype=np.float64)
        std = np.asarray(g.get("std") or np.zeros_like(mean), dtype=np.float64)
        all_lo = min(all_lo, float((mean - std).min()))
        all_hi = max(all_hi, float((mean + std).max()))
        n_steps = max(n_steps, mean.size)
    if not np.isfinite(all_lo):
        all_lo, all_hi, n_steps = 0.0, 1.0, 2
    pad = 0.03 * (all_hi - all_lo or 1.0)
    y_lo, y_hi = all_lo - pad, all_hi + pad

    plot_w = WIDTH - MARGIN_L - MARGIN_R
    plot_h = HEIGHT - MARGIN_T - MARGIN_B

    def sx(i):
        return MARGIN_L + plot_w * (i / max(n_steps - 1, 1))

    def sy(v):
        return MARGIN_T + plot_h * (1.0 - (v - y_lo) / (y_hi - y_lo))

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="monospace" font-size="12">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{MARGIN_L}" y="24" font-size="15">{title}</text>',
        f'<rect x="{MARGIN_L}" y="{MARGIN_T}" width="{plot_w}" height="{plot_h}" '
        f'fill="none" stroke="#999"/>',
    ]
    for tick in _ticks(y_lo, y_hi):
        y = sy(tick)
        parts.append(f'<line x1="{MARGIN_L}" y1="{_fmt(y)}" x2="{MARGIN_L + plot_w}" '
                     f'y2="{_fmt(y)}" stroke="#eee"/>')
        parts.append(f'<text x="{MARGIN_L - 8}" y="{_fmt(y + 4)}" text-anchor="end">'
                     f'{tick:.0f}</text>')
    for tick in _ticks(0, max(n_steps - 1, 1)):
        x = sx(tick)
        parts.append(f'<text x="{_fmt(x)}" y="{HEIGHT - 18}" text-anchor="middle">'
                     f'{tick:.0f}</text>')
    parts.append(f'<text x="{MARGIN_L + plot_w / 2}" y="{HEIGHT - 4}" '
                 f'text-anchor="middle">step</text>')

    for gi, g in enumerate(groups):
        color = PALETTE[gi % len(PALETTE)]
        mean = np.asarray(g["mean"], dtype=np.float64)
        std = g.get("std")
        if std is not None:
            std = np.asarray(std, dtype=np.float64)
            upper = [f"{_fmt(sx(i))},{_fmt(sy(v))}" for i, v in enumerate(mean + std)]
            lower = [f"{_fmt(sx(i))},{_fmt(sy(v))}"
                     for i, v in reversed(list(enumerate(mean - std)))]
            parts.append(f'<polygon points="{" ".join(upper + lower)}" '
                         f'fill="{color}" fill-opacity="0.15" stroke="none"/>')
        pts = " ".join(f"{_fmt(sx(i))},{_fmt(sy(v))}" for i, v in enumerate(mean))
        parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" '
                     f'stroke-width="1.5"/>')
        ly = MARGIN_T + 16 + 18 * gi
        lx = MARGIN_L + plot_w + 12
        parts.append(f'<line x1="{lx}" y1="{ly - 4}" x2="{lx + 18}" y2="{ly - 4}" '
                     f'stroke="{color}" stroke-width="2"/>')
        parts.append(f'<text x="{lx + 24}" y="{ly}">{g["label"]}</text>')

    parts.append("</svg>")
    return "\n".join(parts) + "\n"
