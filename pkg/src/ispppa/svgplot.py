"""Minimal deterministic log-log SVG plots (no plotting dependency)."""

from __future__ import annotations

import math
from pathlib import Path

_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")
_W, _H = 640, 440
_ML, _MR, _MT, _MB = 70, 20, 34, 50


def _ticks(lo: float, hi: float):
    out = []
    e = math.floor(math.log10(lo))
    while 10.0**e <= hi * 1.0000001:
        if 10.0**e >= lo * 0.9999999:
            out.append(10.0**e)
        e += 1
    return out or [lo, hi]


def write_loglog_svg(path, ks, series: dict, guides=(), title="", xlabel="k", ylabel="value"):
    """Write a log-log polyline chart; `guides` are reference slopes drawn
    as dashed lines anchored at the first point of the first series."""
    ks = [float(k) for k in ks]
    finite_vals = [v for vs in series.values() for v in vs if v > 0 and math.isfinite(v)]
    if not finite_vals or not ks:
        raise ValueError("nothing positive to plot on log axes")
    x_lo, x_hi = min(ks), max(ks)
    y_lo, y_hi = min(finite_vals), max(finite_vals)
    if x_lo == x_hi:
        x_hi = x_lo * 10
    if y_lo == y_hi:
        y_hi = y_lo * 10

    def sx(x):
        return _ML + (math.log10(x) - math.log10(x_lo)) / (
            math.log10(x_hi) - math.log10(x_lo)) * (_W - _ML - _MR)

    def sy(y):
        return _H - _MB - (math.log10(y) - math.log10(y_lo)) / (
            math.log10(y_hi) - math.log10(y_lo)) * (_H - _MT - _MB)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" '
        f'viewBox="0 0 {_W} {_H}">',
        f'<rect width="{_W}" height="{_H}" fill="white"/>',
        f'<text x="{_W / 2:.1f}" y="20" text-anchor="middle" font-size="14">{title}</text>',
    ]
    for t in _ticks(x_lo, x_hi):
        x = sx(t)
        parts.append(f'<line x1="{x:.2f}" y1="{_MT}" x2="{x:.2f}" y2="{_H - _MB}" '
                     f'stroke="#dddddd"/>')
        parts.append(f'<text x="{x:.2f}" y="{_H - _MB + 16}" text-anchor="middle" '
                     f'font-size="11">1e{int(math.log10(t))}</text>')
    for t in _ticks(y_lo, y_hi):
        y = sy(t)
        parts.append(f'<line x1="{_ML}" y1="{y:.2f}" x2="{_W - _MR}" y2="{y:.2f}" '
                     f'stroke="#dddddd"/>')
        parts.append(f'<text x="{_ML - 6}" y="{y + 4:.2f}" text-anchor="end" '
                     f'font-size="11">1e{int(math.log10(t))}</text>')
    parts.append(f'<rect x="{_ML}" y="{_MT}" width="{_W - _ML - _MR}" '
                 f'height="{_H - _MT - _MB}" fill="none" stroke="black"/>')
    parts.append(f'<text x="{_W / 2:.1f}" y="{_H - 12}" text-anchor="middle" '
                 f'font-size="12">{xlabel}</text>')
    parts.append(f'<text x="16" y="{_H / 2:.1f}" text-anchor="middle" font-size="12" '
                 f'transform="rotate(-90 16 {_H / 2:.1f})">{ylabel}</text>')

    for i, (label, vals) in enumerate(series.items()):
        color = _COLORS[i % len(_COLORS)]
        pts = " ".join(
            f"{sx(k):.2f},{sy(v):.2f}" for k, v in zip(ks, vals)
            if v > 0 and math.isfinite(v)
        )
        parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" '
                     f'stroke-width="1.5"/>')
        parts.append(f'<text x="{_W - _MR - 6}" y="{_MT + 16 + 14 * i}" text-anchor="end" '
                     f'font-size="11" fill="{color}">{label}</text>')

    first = next(iter(series.values()))
    anchor_k = ks[len(ks) // 2]
    anchor_v = None
    for k, v in zip(ks, first):
        if k >= anchor_k and v > 0:
            anchor_v = v
            anchor_k = k
            break
    if anchor_v is not None:
        for slope in guides:
            y_end = anchor_v * (x_hi / anchor_k) ** slope
            y_end = min(max(y_end, y_lo), y_hi)
            parts.append(
                f'<line x1="{sx(anchor_k):.2f}" y1="{sy(anchor_v):.2f}" '
                f'x2="{sx(x_hi):.2f}" y2="{sy(y_end):.2f}" stroke="#888888" '
                f'stroke-dasharray="5,4"/>'
            )
            parts.append(
                f'<text x="{sx(x_hi) - 4:.2f}" y="{sy(y_end) - 4:.2f}" text-anchor="end" '
                f'font-size="10" fill="#888888">slope {slope:.2f}</text>'
            )
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n")
