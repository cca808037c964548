"""Tiny native SVG line plots (axes, ticks, legend, one polyline per series).

Figures here are static artifacts for reports; keeping the writer local
avoids a plotting dependency and makes the output byte-deterministic.
"""
from __future__ import annotations

from xml.sax.saxutils import escape

import numpy as np

_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")
_MARGIN = dict(left=64, right=16, top=34, bottom=44)


def _fmt(x: float) -> str:
    return f"{x:.6g}"


def _ticks(lo: float, hi: float, n: int = 5):
    if hi <= lo:
        hi = lo + 1.0
    span = hi - lo
    raw = span / max(1, n - 1)
    mag = 10.0 ** np.floor(np.log10(raw))
    for mult in (1.0, 2.0, 2.5, 5.0, 10.0):
        step = mult * mag
        if span / step <= n:
            break
    first = np.ceil(lo / step) * step
    vals = np.arange(first, hi + step * 0.5, step)
    return [float(v) for v in vals if lo - 1e-12 <= v <= hi + 1e-12]


def line_plot(series, path, title="", xlabel="", ylabel="",
              width: int = 640, height: int = 420):
    """Write an SVG plot of [(label, xs, ys), ...] line series."""
    if not series:
        raise ValueError("need at least one series")
    clean = []
    for label, xs, ys in series:
        xs = np.asarray(xs, dtype=np.float64)
        ys = np.asarray(ys, dtype=np.float64)
        if xs.shape != ys.shape or xs.ndim != 1 or xs.size < 2:
            raise ValueError(f"series {label!r} needs matching 1-D x/y, >= 2 points")
        keep = np.isfinite(xs) & np.isfinite(ys)
        if keep.sum() < 2:
            raise ValueError(f"series {label!r} has fewer than 2 finite points")
        clean.append((str(label), xs[keep], ys[keep]))

    x_lo = min(float(xs.min()) for _, xs, _ in clean)
    x_hi = max(float(xs.max()) for _, xs, _ in clean)
    y_lo = min(float(ys.min()) for _, _, ys in clean)
    y_hi = max(float(ys.max()) for _, _, ys in clean)
    if x_hi == x_lo:
        x_hi = x_lo + 1.0
    if y_hi == y_lo:
        y_lo, y_hi = y_lo - 0.5, y_hi + 0.5
    pad = 0.04 * (y_hi - y_lo)
    y_lo -= pad
    y_hi += pad

    px0, px1 = _MARGIN["left"], width - _MARGIN["right"]
    py0, py1 = height - _MARGIN["bottom"], _MARGIN["top"]

    def to_px(xs, ys):
        fx = px0 + (xs - x_lo) / (x_hi - x_lo) * (px1 - px0)
        fy = py0 + (ys - y_lo) / (y_hi - y_lo) * (py1 - py0)
        return fx, fy

    parts = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
        f'height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
    ]
    if title:
        parts.append(
            f'<text x="{width / 2:.1f}" y="20" text-anchor="middle" '
            f'font-family="sans-serif" font-size="14">{escape(title)}</text>')

    # axes
    parts.append(f'<line x1="{px0}" y1="{py0}" x2="{px1}" y2="{py0}" '
                 'stroke="black" stroke-width="1"/>')
    parts.append(f'<line x1="{px0}" y1="{py0}" x2="{px0}" y2="{py1}" '
                 'stroke="black" stroke-width="1"/>')
    for tx in _ticks(x_lo, x_hi):
        fx, _ = to_px(np.array([tx]), np.array([y_lo]))
        parts.append(f'<line x1="{fx[0]:.1f}" y1="{py0}" x2="{fx[0]:.1f}" '
                     f'y2="{py0 + 5}" stroke="black" stroke-width="1"/>')
        parts.append(f'<text x="{fx[0]:.1f}" y="{py0 + 18}" text-anchor="middle" '
                     f'font-family="sans-serif" font-size="11">{_fmt(tx)}</text>')
    for ty in _ticks(y_lo, y_hi):
        _, fy = to_px(np.array([x_lo]), np.array([ty]))
        parts.append(f'<line x1="{px0 - 5}" y1="{fy[0]:.1f}" x2="{px0}" '
                     f'y2="{fy[0]:.1f}" stroke="black" stroke-width="1"/>')
        parts.append(f'<text x="{px0 - 8}" y="{fy[0] + 4:.1f}" text-anchor="end" '
                     f'font-family="sans-serif" font-size="11">{_fmt(ty)}</text>')
    if xlabel:
        parts.append(f'<text x="{(px0 + px1) / 2:.1f}" y="{height - 8}" '
                     'text-anchor="middle" font-family="sans-serif" '
                     f'font-size="12">{escape(xlabel)}</text>')
    if ylabel:
        cy = (py0 + py1) / 2
        parts.append(f'<text x="16" y="{cy:.1f}" text-anchor="middle" '
                     f'font-family="sans-serif" font-size="12" '
                     f'transform="rotate(-90 16 {cy:.1f})">{escape(ylabel)}</text>')

    # data series + legend
    for idx, (label, xs, ys) in enumerate(clean):
        color = _COLORS[idx % len(_COLORS)]
        fx, fy = to_px(xs, ys)
        pts = " ".join(f"{x:.2f},{y:.2f}" for x, y in zip(fx, fy))
        parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" '
                     'stroke-width="1.5"/>')
        ly = _MARGIN["top"] + 14 * idx
        parts.append(f'<line x1="{px1 - 110}" y1="{ly:.1f}" x2="{px1 - 88}" '
                     f'y2="{ly:.1f}" stroke="{color}" stroke-width="1.5"/>')
        parts.append(f'<text x="{px1 - 84}" y="{ly + 4:.1f}" '
                     f'font-family="sans-serif" font-size="11">{escape(label)}</text>')

    parts.append("</svg>")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(parts))
        fh.write("\n")
