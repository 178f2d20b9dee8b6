"""Self-contained SVG plots: convergence curves and raster field maps."""
from __future__ import annotations

import math
from pathlib import Path

import numpy as np

_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e")


def _fmt(v: float) -> str:
    return f"{v:.4g}"


def convergence_svg(iterations, series: dict, title: str = "", log_y: bool = True, size=(640, 400)) -> str:
    """Line plot of several series sharing an iteration axis; one polyline per series."""
    w, h = size
    left, right, top, bottom = 70, 150, 30, 45
    pw, ph = w - left - right, h - top - bottom
    it = np.asarray(iterations, dtype=float)
    cleaned = {}
    for name, vals in series.items():
        v = np.asarray(vals, dtype=float)
        if log_y:
            v = np.where(v > 0, v, np.nan)
            v = np.log10(v)
        cleaned[name] = v
    finite = np.concatenate([v[np.isfinite(v)] for v in cleaned.values()] or [np.zeros(1)])
    y0, y1 = (finite.min(), finite.max()) if finite.size else (0.0, 1.0)
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5
    x0, x1 = (it.min(), it.max()) if it.size else (0.0, 1.0)
    if x1 == x0:
        x1 = x0 + 1.0

    def px(x):
        return left + (x - x0) / (x1 - x0) * pw

    def py(y):
        return top + (1 - (y - y0) / (y1 - y0)) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">',
        f'<rect x="0" y="0" width="{w}" height="{h}" fill="white"/>',
        f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
        f'<text x="{left + pw / 2}" y="20" text-anchor="middle" font-size="14">{title}</text>',
        f'<text x="{left + pw / 2}" y="{h - 10}" text-anchor="middle" font-size="12">iteration</text>',
    ]
    for frac in (0.0, 0.5, 1.0):
        yv = y0 + frac * (y1 - y0)
        label = _fmt(10**yv) if log_y else _fmt(yv)
        out.append(f'<text x="{left - 5}" y="{py(yv) + 4:.2f}" text-anchor="end" font-size="10">{label}</text>')
        xv = x0 + frac * (x1 - x0)
        out.append(f'<text x="{px(xv):.2f}" y="{top + ph + 15}" text-anchor="middle" font-size="10">{_fmt(xv)}</text>')
    for k, (name, v) in enumerate(cleaned.items()):
        color = _COLORS[k % len(_COLORS)]
        pts = " ".join(f"{px(x):.2f},{py(y):.2f}" for x, y in zip(it, v) if math.isfinite(y))
        out.append(f'<polyline class="series" data-name="{name}" fill="none" stroke="{color}" points="{pts}"/>')
        ly = top + 15 + 18 * k
        out.append(f'<line x1="{left + pw + 10}" y1="{ly}" x2="{left + pw + 30}" y2="{ly}" stroke="{color}"/>')
        out.append(f'<text x="{left + pw + 35}" y="{ly + 4}" font-size="11">{name}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _viridis_like(t: float) -> str:
    # piecewise-linear blue -> green -> yellow ramp
    stops = [(0.0, (68, 1, 84)), (0.5, (33, 145, 140)), (1.0, (253, 231, 37))]
    t = min(max(t, 0.0), 1.0)
    for (ta, ca), (tb, cb) in zip(stops[:-1], stops[1:]):
        if t <= tb:
            f = (t - ta) / (tb - ta)
            rgb = tuple(round(a + f * (b - a)) for a, b in zip(ca, cb))
            return "#%02x%02x%02x" % rgb
    return "#%02x%02x%02x" % stops[-1][1]


def field_svg(grid: np.ndarray, title: str = "", cell: int = 8, vmin=None, vmax=None) -> str:
    """Colour raster of a (rows, cols) array; row 0 is drawn at the bottom (y=0)."""
    grid = np.asarray(grid, dtype=float)
    rows, cols = grid.shape
    lo = np.nanmin(grid) if vmin is None else vmin
    hi = np.nanmax(grid) if vmax is None else vmax
    span = hi - lo if hi > lo else 1.0
    w, h = cols * cell, rows * cell
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w + 90}" height="{h + 30}" viewBox="0 0 {w + 90} {h + 30}">',
        f'<text x="{w / 2}" y="14" text-anchor="middle" font-size="12">{title}</text>',
        f'<g class="raster" data-rows="{rows}" data-cols="{cols}" transform="translate(0,20)">',
    ]
    for r in range(rows):
        y = (rows - 1 - r) * cell
        for c in range(cols):
            v = grid[r, c]
            color = "#cccccc" if not math.isfinite(v) else _viridis_like((v - lo) / span)
            out.append(f'<rect class="px" x="{c * cell}" y="{y}" width="{cell}" height="{cell}" fill="{color}"/>')
    out.append("</g>")
    out.append(f'<text x="{w + 8}" y="30" font-size="10">max {_fmt(hi)}</text>')
    out.append(f'<text x="{w + 8}" y="{h + 18}" font-size="10">min {_fmt(lo)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def element_grid(values: np.ndarray, grid_n: int) -> np.ndarray:
    """Per-cell mean of the four crossed triangles, as a (grid_n, grid_n) array."""
    values = np.asarray(values, dtype=float)
    if values.shape[0] != 4 * grid_n * grid_n:
        raise ValueError(f"expected {4 * grid_n * grid_n} element values, got {values.shape[0]}")
    return values.reshape(grid_n, grid_n, 4).mean(axis=2)


def write(path: str | Path, svg: str) -> None:
    Path(path).write_text(svg)
