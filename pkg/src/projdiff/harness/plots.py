"""Minimal deterministic SVG line and bar charts."""

from __future__ import annotations

import math
from xml.sax.saxutils import escape

import numpy as np

from ..core import ConfigurationError

WIDTH, HEIGHT, PAD = 480, 320, 48
COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def _scale(lo, hi, a, b):
    if hi == lo:
        lo, hi = lo - 0.5, hi + 0.5
    return lambda v: a + (v - lo) * (b - a) / (hi - lo)


def _series_items(series):
    if isinstance(series, dict):
        items = list(series.items())
    else:
        items = [("series", series)]
    if not items:
        raise ConfigurationError("need at least one series")
    return items


def emit_plot(series, kind: str, path, title: str = "", log_y: bool = False) -> str:
    """Write a standalone SVG to ``path`` and return its text.

    Parameters
    ----------
    series : dict of name -> (xs, ys) for ``kind="line"``, or name -> value
        for ``kind="bar"``; a bare ``(xs, ys)`` pair is accepted for lines.
    kind : ``"line"`` or ``"bar"``
    log_y : plot ``log10(y)``; non-positive values are dropped.
    """
    if kind not in ("line", "bar"):
        raise ConfigurationError("kind must be 'line' or 'bar'")
    body = _line(series, log_y) if kind == "line" else _bar(series)
    svg = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
           f'viewBox="0 0 {WIDTH} {HEIGHT}">\n'
           f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>\n'
           f'<text x="{WIDTH // 2}" y="20" text-anchor="middle" font-size="14">{escape(title)}</text>\n'
           f'<line x1="{PAD}" y1="{HEIGHT - PAD}" x2="{WIDTH - PAD}" y2="{HEIGHT - PAD}" stroke="black"/>\n'
           f'<line x1="{PAD}" y1="{PAD}" x2="{PAD}" y2="{HEIGHT - PAD}" stroke="black"/>\n'
           + body + "</svg>\n")
    with open(path, "w", newline="\n") as fh:
        fh.write(svg)
    return svg


def _line(series, log_y):
    items = []
    for name, (xs, ys) in _series_items(series):
        xs, ys = np.asarray(xs, dtype=float), np.asarray(ys, dtype=float)
        if xs.shape != ys.shape or xs.size == 0:
            raise ConfigurationError(f"series {name!r} needs matching, nonempty x and y")
        if log_y:
            keep = ys > 0
            xs, ys = xs[keep], np.log10(ys[keep])
        items.append((name, xs, ys))
    allx = np.concatenate([x for _, x, _ in items] + [np.zeros(0)])
    ally = np.concatenate([y for _, _, y in items] + [np.zeros(0)])
    if allx.size == 0:
        raise ConfigurationError("no plottable points")
    sx = _scale(allx.min(), allx.max(), PAD, WIDTH - PAD)
    sy = _scale(ally.min(), ally.max(), HEIGHT - PAD, PAD)
    out = []
    for k, (name, xs, ys) in enumerate(items):
        color = COLORS[k % len(COLORS)]
        pts = " ".join(f"{_fmt(sx(x))},{_fmt(sy(y))}" for x, y in zip(xs, ys))
        if xs.size > 1:
            out.append(f'<polyline fill="none" stroke="{color}" points="{pts}"/>\n')
        for x, y in zip(xs, ys):
            out.append(f'<circle cx="{_fmt(sx(x))}" cy="{_fmt(sy(y))}" r="2.5" fill="{color}"/>\n')
        out.append(f'<text x="{WIDTH - PAD}" y="{PAD + 14 * k}" text-anchor="end" font-size="11" '
                   f'fill="{color}">{escape(str(name))}</text>\n')
    lo_y, hi_y = ally.min(), ally.max()
    label = "log10 " if log_y else ""
    out.append(f'<text x="4" y="{HEIGHT - PAD}" font-size="10">{label}{lo_y:.3g}</text>\n')
    out.append(f'<text x="4" y="{PAD}" font-size="10">{label}{hi_y:.3g}</text>\n')
    out.append(f'<text x="{PAD}" y="{HEIGHT - PAD + 16}" font-size="10">{allx.min():.3g}</text>\n')
    out.append(f'<text x="{WIDTH - PAD}" y="{HEIGHT - PAD + 16}" text-anchor="end" '
               f'font-size="10">{allx.max():.3g}</text>\n')
    return "".join(out)


def _bar(series):
    items = [(name, float(v)) for name, v in _series_items(series)]
    if not all(math.isfinite(v) for _, v in items):
        raise ConfigurationError("bar values must be finite")
    top = max(max(v for _, v in items), 0.0)
    bottom = min(min(v for _, v in items), 0.0)
    sy = _scale(bottom, top, HEIGHT - PAD, PAD)
    slot = (WIDTH - 2 * PAD) / len(items)
    out = []
    for k, (name, v) in enumerate(items):
        x = PAD + k * slot + 0.15 * slot
        y0, y1 = sorted((sy(0.0), sy(v)))
        out.append(f'<rect x="{_fmt(x)}" y="{_fmt(y0)}" width="{_fmt(0.7 * slot)}" '
                   f'height="{_fmt(y1 - y0)}" fill="{COLORS[k % len(COLORS)]}"/>\n')
        out.append(f'<text x="{_fmt(x + 0.35 * slot)}" y="{HEIGHT - PAD + 16}" text-anchor="middle" '
                   f'font-size="10">{escape(str(name))}</text>\n')
        out.append(f'<text x="{_fmt(x + 0.35 * slot)}" y="{_fmt(y0 - 4)}" text-anchor="middle" '
                   f'font-size="10">{v:.4g}</text>\n')
    return "".join(out)
