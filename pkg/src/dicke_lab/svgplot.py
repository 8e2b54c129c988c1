"""Minimal SVG line plots of columnar CSV files."""

from __future__ import annotations

import csv
import math
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from .errors import DataError

COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf")
WIDTH, HEIGHT = 640, 420
MARGIN = (70, 20, 30, 50)  # left, right, top, bottom


def read_columns(path) -> tuple[list[str], np.ndarray]:
    """Header and float matrix of a CSV file; '#' lines are skipped."""
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    if len(rows) < 2:
        raise DataError(f"{path}: no data rows")
    header = [h.strip() for h in rows[0]]
    try:
        data = np.array([[float(v) for v in r] for r in rows[1:]], dtype=float)
    except ValueError as exc:
        raise DataError(f"{path}: non-numeric field ({exc})") from exc
    if data.shape[1] != len(header):
        raise DataError(f"{path}: row width does not match header")
    return header, data


def _ticks(lo: float, hi: float, log: bool) -> list[float]:
    if log:
        a, b = math.floor(math.log10(lo)), math.ceil(math.log10(hi))
        return [10.0**k for k in range(a, b + 1) if lo <= 10.0**k <= hi] or [lo, hi]
    span = hi - lo
    step = 10 ** math.floor(math.log10(span / 5)) if span > 0 else 1.0
    for m in (1, 2, 5, 10):
        if span / (m * step) <= 6:
            step *= m
            break
    start = math.ceil(lo / step) * step
    return [start + i * step for i in range(int((hi - start) / step + 1e-9) + 1)]


def _range(v: np.ndarray, log: bool) -> tuple[float, float]:
    v = v[np.isfinite(v) & (v > 0)] if log else v[np.isfinite(v)]
    if v.size == 0:
        raise DataError("nothing to plot on this axis")
    lo, hi = float(v.min()), float(v.max())
    if hi == lo:
        lo, hi = (lo / 2, hi * 2) if log else (lo - 1, hi + 1)
    return lo, hi


def line_plot(x: np.ndarray, ys: dict[str, np.ndarray], xlabel: str = "", ylabel: str = "",
              logx: bool = False, logy: bool = False, title: str = "") -> str:
    """SVG document with one polyline per entry of ``ys``."""
    left, right, top, bottom = MARGIN
    pw, ph = WIDTH - left - right, HEIGHT - top - bottom
    x0, x1 = _range(np.asarray(x, float), logx)
    y0, y1 = _range(np.concatenate([np.asarray(v, float) for v in ys.values()]), logy)
    fx = (lambda v: math.log10(v)) if logx else (lambda v: v)
    fy = (lambda v: math.log10(v)) if logy else (lambda v: v)
    X = lambda v: left + pw * (fx(v) - fx(x0)) / (fx(x1) - fx(x0))
    Y = lambda v: top + ph * (1 - (fy(v) - fy(y0)) / (fy(y1) - fy(y0)))
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
           f'font-family="sans-serif" font-size="11">',
           f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>']
    for t in _ticks(x0, x1, logx):
        out.append(f'<line x1="{X(t):.2f}" y1="{top + ph}" x2="{X(t):.2f}" y2="{top + ph + 4}" stroke="black"/>')
        out.append(f'<text x="{X(t):.2f}" y="{top + ph + 16}" text-anchor="middle">{t:.4g}</text>')
    for t in _ticks(y0, y1, logy):
        out.append(f'<line x1="{left - 4}" y1="{Y(t):.2f}" x2="{left}" y2="{Y(t):.2f}" stroke="black"/>')
        out.append(f'<text x="{left - 6}" y="{Y(t) + 4:.2f}" text-anchor="end">{t:.4g}</text>')
    out.append(f'<text x="{left + pw / 2}" y="{HEIGHT - 12}" text-anchor="middle">{escape(xlabel)}</text>')
    out.append(f'<text x="14" y="{top + ph / 2}" text-anchor="middle" '
               f'transform="rotate(-90 14 {top + ph / 2})">{escape(ylabel)}</text>')
    if title:
        out.append(f'<text x="{left + pw / 2}" y="{top - 10}" text-anchor="middle">{escape(title)}</text>')
    for k, (name, y) in enumerate(ys.items()):
        y = np.asarray(y, float)
        ok = np.isfinite(x) & np.isfinite(y)
        if logx:
            ok &= np.asarray(x) > 0
        if logy:
            ok &= y > 0
        pts = " ".join(f"{X(a):.2f},{Y(b):.2f}" for a, b in zip(np.asarray(x)[ok], y[ok]))
        color = COLORS[k % len(COLORS)]
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.3" points="{pts}"/>')
        out.append(f'<text x="{left + pw - 6}" y="{top + 14 + 13 * k}" text-anchor="end" '
                   f'fill="{color}">{escape(name)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def plot_csv(path, columns: list[str] | None = None, logx: bool = False, logy: bool = False) -> str:
    """Plot every column (or ``columns``) against the first one; error columns are skipped."""
    header, data = read_columns(path)
    names = columns or [h for h in header[1:] if not h.endswith("_err")]
    missing = [n for n in names if n not in header]
    if missing:
        raise DataError(f"{path}: no column(s) {', '.join(missing)}")
    ys = {n: data[:, header.index(n)] for n in names}
    return line_plot(data[:, 0], ys, xlabel=header[0], logx=logx, logy=logy, title=Path(path).name)
