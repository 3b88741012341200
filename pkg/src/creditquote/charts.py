"""Minimal deterministic SVG line charts with +/- one-sd shaded bands."""
from __future__ import annotations

from typing import Dict, Sequence, Tuple

_COLORS = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b"]

_W, _H = 360, 260
_ML, _MR, _MT, _MB = 52, 12, 28, 36


def _fmt(v: float) -> str:
    return f"{v:.2f}".rstrip("0").rstrip(".")


def _scale(vals, lo, hi, out_lo, out_hi):
    span = hi - lo if hi > lo else 1.0
    return [out_lo + (v - lo) / span * (out_hi - out_lo) for v in vals]


def line_chart_svg(x: Sequence[float],
                   series: Dict[str, Tuple[Sequence[float], Sequence[float]]],
                   title: str = "", x_label: str = "t",
                   y_label: str = "cumulative regret") -> str:
    """One panel: ``series`` maps a name to (mean, sd) arrays over ``x``."""
    xs = list(x)
    lo_y, hi_y = float("inf"), float("-inf")
    for mean, sd in series.values():
        for m, s in zip(mean, sd):
            lo_y = min(lo_y, m - s)
            hi_y = max(hi_y, m + s)
    if not xs or lo_y > hi_y:
        lo_y, hi_y = 0.0, 1.0
        xs = [0.0, 1.0]
    lo_x, hi_x = min(xs), max(xs)

    px = _scale(xs, lo_x, hi_x, _ML, _W - _MR)
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" '
             f'viewBox="0 0 {_W} {_H}">',
             f'<rect width="{_W}" height="{_H}" fill="white"/>']
    if title:
        parts.append(f'<text x="{_W / 2}" y="16" text-anchor="middle" '
                     f'font-size="12" font-family="sans-serif">{title}</text>')
    # axes
    parts.append(f'<line x1="{_ML}" y1="{_H - _MB}" x2="{_W - _MR}" y2="{_H - _MB}" '
                 f'stroke="black"/>')
    parts.append(f'<line x1="{_ML}" y1="{_MT}" x2="{_ML}" y2="{_H - _MB}" '
                 f'stroke="black"/>')
    parts.append(f'<text x="{(_ML + _W - _MR) / 2}" y="{_H - 8}" text-anchor="middle" '
                 f'font-size="10" font-family="sans-serif">{x_label}</text>')
    parts.append(f'<text x="12" y="{(_MT + _H - _MB) / 2}" text-anchor="middle" '
                 f'font-size="10" font-family="sans-serif" '
                 f'transform="rotate(-90 12 {(_MT + _H - _MB) / 2})">{y_label}</text>')
    parts.append(f'<text x="{_ML - 4}" y="{_H - _MB + 4}" text-anchor="end" '
                 f'font-size="9" font-family="sans-serif">{_fmt(lo_y)}</text>')
    parts.append(f'<text x="{_ML - 4}" y="{_MT + 4}" text-anchor="end" '
                 f'font-size="9" font-family="sans-serif">{_fmt(hi_y)}</text>')

    for idx, (name, (mean, sd)) in enumerate(series.items()):
        color = _COLORS[idx % len(_COLORS)]
        upper = _scale([m + s for m, s in zip(mean, sd)], lo_y, hi_y,
                       _H - _MB, _MT)
        lower = _scale([m - s for m, s in zip(mean, sd)], lo_y, hi_y,
                       _H - _MB, _MT)
        mid = _scale(list(mean), lo_y, hi_y, _H - _MB, _MT)
        band = " ".join(f"{bx:.2f},{by:.2f}" for bx, by in
                        list(zip(px, upper)) + list(zip(px[::-1], lower[::-1])))
        parts.append(f'<polygon points="{band}" fill="{color}" opacity="0.15"/>')
        line = " ".join(f"{bx:.2f},{by:.2f}" for bx, by in zip(px, mid))
        parts.append(f'<polyline points="{line}" fill="none" stroke="{color}" '
                     f'stroke-width="1.5"/>')
        ly = _MT + 12 * (idx + 1)
        parts.append(f'<line x1="{_W - _MR - 70}" y1="{ly}" x2="{_W - _MR - 54}" '
                     f'y2="{ly}" stroke="{color}" stroke-width="2"/>')
        parts.append(f'<text x="{_W - _MR - 50}" y="{ly + 3}" font-size="9" '
                     f'font-family="sans-serif">{name}</text>')
    parts.append("</svg>")
    return "\n".join(parts)


def small_multiples_svg(panels: Sequence[Tuple[str, Sequence[float], Dict]],
                        columns: int = 3) -> str:
    """Grid of line-chart panels: (title, x, series) triples."""
    rows = (len(panels) + columns - 1) // columns
    width = columns * _W
    height = rows * _H
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
             f'height="{height}" viewBox="0 0 {width} {height}">']
    for i, (title, x, series) in enumerate(panels):
        ox = (i % columns) * _W
        oy = (i // columns) * _H
        inner = line_chart_svg(x, series, title=title)
        body = inner.split("\n", 1)[1].rsplit("</svg>", 1)[0]
        parts.append(f'<g transform="translate({ox},{oy})">\n{body}</g>')
    parts.append("</svg>")
    return "\n".join(parts)
