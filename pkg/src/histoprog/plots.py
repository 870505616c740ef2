"""Standalone SVG line and step charts with their data written as CSV siblings."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

WIDTH, HEIGHT = 480, 320
MARGIN = 50
COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e")


@dataclass
class Series:
    name: str
    x: np.ndarray
    y: np.ndarray
    step: bool = False


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def _scale(lo: float, hi: float, a: float, b: float):
    span = hi - lo if hi > lo else 1.0
    return lambda v: a + (v - lo) / span * (b - a)


def line_chart(series, title: str, xlabel: str, ylabel: str, ylim=None) -> str:
    """SVG text for one chart; ``step=True`` series are drawn as right-continuous steps."""
    xs = np.concatenate([np.asarray(s.x, dtype=np.float64) for s in series])
    ys = np.concatenate([np.asarray(s.y, dtype=np.float64) for s in series])
    y0, y1 = ylim if ylim is not None else (float(ys.min()), float(ys.max()))
    sx = _scale(float(xs.min()), float(xs.max()), MARGIN, WIDTH - MARGIN)
    sy = _scale(y0, y1, HEIGHT - MARGIN, MARGIN)
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
           f'viewBox="0 0 {WIDTH} {HEIGHT}">',
           f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
           f'<text x="{WIDTH // 2}" y="20" text-anchor="middle" font-size="14">{escape(title)}</text>',
           f'<line x1="{MARGIN}" y1="{HEIGHT - MARGIN}" x2="{WIDTH - MARGIN}" y2="{HEIGHT - MARGIN}" stroke="black"/>',
           f'<line x1="{MARGIN}" y1="{MARGIN}" x2="{MARGIN}" y2="{HEIGHT - MARGIN}" stroke="black"/>',
           f'<text x="{WIDTH // 2}" y="{HEIGHT - 12}" text-anchor="middle" font-size="12">{escape(xlabel)}</text>',
           f'<text x="14" y="{HEIGHT // 2}" text-anchor="middle" font-size="12" '
           f'transform="rotate(-90 14 {HEIGHT // 2})">{escape(ylabel)}</text>']
    for v in (y0, (y0 + y1) / 2, y1):
        out.append(f'<text x="{MARGIN - 4}" y="{_fmt(sy(v) + 4)}" text-anchor="end" font-size="10">{v:.3g}</text>')
    for v in (float(xs.min()), float(xs.max())):
        out.append(f'<text x="{_fmt(sx(v))}" y="{HEIGHT - MARGIN + 14}" text-anchor="middle" '
                   f'font-size="10">{v:.3g}</text>')
    for k, s in enumerate(series):
        pts = []
        x, y = np.asarray(s.x, dtype=np.float64), np.asarray(s.y, dtype=np.float64)
        for i in range(len(x)):
            if s.step and i > 0:
                pts.append(f"{_fmt(sx(x[i]))},{_fmt(sy(y[i - 1]))}")
            pts.append(f"{_fmt(sx(x[i]))},{_fmt(sy(y[i]))}")
        color = COLORS[k % len(COLORS)]
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{" ".join(pts)}"/>')
        out.append(f'<text x="{WIDTH - MARGIN + 4}" y="{MARGIN + 14 * k}" font-size="10" '
                   f'fill="{color}">{escape(s.name)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_chart(path, series, title: str, xlabel: str, ylabel: str, ylim=None) -> tuple:
    """Write ``path`` (.svg) and a ``.csv`` sibling with columns series,x,y."""
    svg = Path(path)
    svg.write_text(line_chart(series, title, xlabel, ylabel, ylim))
    data = svg.with_suffix(".csv")
    with open(data, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["series", "x", "y"])
        for s in series:
            for a, b in zip(s.x, s.y):
                w.writerow([s.name, repr(float(a)), repr(float(b))])
    return svg, data
