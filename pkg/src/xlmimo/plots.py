"""Minimal SVG line charts for quick inspection of CSV outputs."""
from __future__ import annotations

from typing import Mapping, Sequence
from xml.sax.saxutils import escape

import numpy as np

_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf")
_W, _H, _PAD = 640, 420, 60


def _ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if hi <= lo:
        return [lo]
    return [float(x) for x in np.linspace(lo, hi, n)]


def line_chart(path: str, series: Mapping[str, tuple[Sequence[float], Sequence[float]]],
               xlabel: str = "", ylabel: str = "", title: str = "") -> None:
    """Write ``series`` (name to x/y arrays) as polylines on shared axes."""
    pts = [(np.asarray(x, float), np.asarray(y, float)) for x, y in series.values()]
    xs = np.concatenate([p[0][np.isfinite(p[1])] for p in pts] or [np.zeros(1)])
    ys = np.concatenate([p[1][np.isfinite(p[1])] for p in pts] or [np.zeros(1)])
    if xs.size == 0:
        xs = ys = np.zeros(1)
    x0, x1 = float(xs.min()), float(xs.max())
    y0, y1 = float(ys.min()), float(ys.max())
    if x1 == x0:
        x1 = x0 + 1.0
    if y1 == y0:
        y1 = y0 + 1.0

    def sx(v):
        return _PAD + (v - x0) / (x1 - x0) * (_W - 2 * _PAD)

    def sy(v):
        return _H - _PAD - (v - y0) / (y1 - y0) * (_H - 2 * _PAD)

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" font-family="sans-serif" font-size="11">',
           f'<rect width="{_W}" height="{_H}" fill="white"/>',
           f'<text x="{_W / 2}" y="20" text-anchor="middle" font-size="13">{escape(title)}</text>',
           f'<line x1="{_PAD}" y1="{_H - _PAD}" x2="{_W - _PAD}" y2="{_H - _PAD}" stroke="black"/>',
           f'<line x1="{_PAD}" y1="{_PAD}" x2="{_PAD}" y2="{_H - _PAD}" stroke="black"/>']
    for t in _ticks(x0, x1):
        out.append(f'<text x="{sx(t):.1f}" y="{_H - _PAD + 16}" text-anchor="middle">{t:.3g}</text>')
    for t in _ticks(y0, y1):
        out.append(f'<text x="{_PAD - 6}" y="{sy(t) + 4:.1f}" text-anchor="end">{t:.3g}</text>')
    out.append(f'<text x="{_W / 2}" y="{_H - 15}" text-anchor="middle">{escape(xlabel)}</text>')
    out.append(f'<text x="15" y="{_H / 2}" text-anchor="middle" transform="rotate(-90 15 {_H / 2})">{escape(ylabel)}</text>')
    for i, (name, (x, y)) in enumerate(zip(series, pts)):
        color = _COLORS[i % len(_COLORS)]
        keep = np.isfinite(y)
        coords = " ".join(f"{sx(a):.1f},{sy(b):.1f}" for a, b in zip(x[keep], y[keep]))
        if coords:
            out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{coords}"/>')
        out.append(f'<text x="{_W - _PAD + 4}" y="{_PAD + 14 * i}" fill="{color}">{escape(name)}</text>')
    out.append("</svg>")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(out) + "\n")
