"""Minimal SVG line/scatter plots.

Each series is a ``<g class="series">`` whose ``data-x`` and ``data-y``
attributes hold the plotted values at full precision, so numbers can be
checked from the emitted file without parsing path geometry.
"""

from __future__ import annotations

import math
import xml.etree.ElementTree as ET
from dataclasses import dataclass
from xml.sax.saxutils import escape, quoteattr

import numpy as np

WIDTH, HEIGHT = 720, 480
MARGIN = dict(left=80, right=160, top=40, bottom=60)
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
           "#bcbd22", "#17becf")


@dataclass
class Series:
    name: str
    x: np.ndarray
    y: np.ndarray
    kind: str = "line"  # line | points | area
    color: str | None = None


def _nums(values) -> str:
    return ",".join(repr(float(v)) for v in values)


def _ticks(lo, hi, n=5):
    if hi <= lo:
        return [lo]
    raw = (hi - lo) / n
    mag = 10 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 5, 10) if m * mag >= raw), default=10 * mag)
    start = math.ceil(lo / step) * step
    return [start + i * step for i in range(int((hi - start) / step + 1e-9) + 1)]


def render(series, title="", xlabel="", ylabel="") -> str:
    """SVG document for a list of :class:`Series`."""
    xs = [np.asarray(s.x, dtype=float) for s in series]
    ys = [np.asarray(s.y, dtype=float) for s in series]
    finite_x = np.concatenate([x[np.isfinite(x)] for x in xs]) if xs else np.zeros(1)
    finite_y = np.concatenate([y[np.isfinite(y)] for y in ys]) if ys else np.zeros(1)
    x0, x1 = float(finite_x.min()), float(finite_x.max())
    y0, y1 = min(0.0, float(finite_y.min())), float(finite_y.max())
    if x1 == x0:
        x1 = x0 + 1.0
    if y1 == y0:
        y1 = y0 + 1.0
    pw = WIDTH - MARGIN["left"] - MARGIN["right"]
    ph = HEIGHT - MARGIN["top"] - MARGIN["bottom"]

    def px(x):
        return MARGIN["left"] + (x - x0) / (x1 - x0) * pw

    def py(y):
        return MARGIN["top"] + (1 - (y - y0) / (y1 - y0)) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">',
        f'<title>{escape(title)}</title>',
        f'<rect x="{MARGIN["left"]}" y="{MARGIN["top"]}" width="{pw}" height="{ph}" fill="none" stroke="#000"/>',
        f'<text x="{WIDTH / 2:.1f}" y="24" text-anchor="middle" font-size="14">{escape(title)}</text>',
        f'<text x="{MARGIN["left"] + pw / 2:.1f}" y="{HEIGHT - 15}" text-anchor="middle">{escape(xlabel)}</text>',
        f'<text x="18" y="{MARGIN["top"] + ph / 2:.1f}" text-anchor="middle" '
        f'transform="rotate(-90 18 {MARGIN["top"] + ph / 2:.1f})">{escape(ylabel)}</text>',
    ]
    for t in _ticks(x0, x1):
        out.append(f'<text x="{px(t):.1f}" y="{MARGIN["top"] + ph + 18}" text-anchor="middle">{t:.4g}</text>')
    for t in _ticks(y0, y1):
        out.append(f'<text x="{MARGIN["left"] - 6}" y="{py(t) + 4:.1f}" text-anchor="end">{t:.4g}</text>')

    for i, (s, x, y) in enumerate(zip(series, xs, ys)):
        color = s.color or PALETTE[i % len(PALETTE)]
        attrs = (f'class="series" data-name={quoteattr(s.name)} data-kind="{s.kind}" '
                 f'data-x="{_nums(x)}" data-y="{_nums(y)}"')
        out.append(f"<g {attrs}>")
        ok = np.isfinite(x) & np.isfinite(y)
        pts = " ".join(f"{px(a):.2f},{py(b):.2f}" for a, b in zip(x[ok], y[ok]))
        if s.kind == "points":
            out += [f'<circle cx="{px(a):.2f}" cy="{py(b):.2f}" r="2" fill="{color}"/>' for a, b in zip(x[ok], y[ok])]
        elif s.kind == "area" and ok.any():
            base = f"{px(x[ok][-1]):.2f},{py(0):.2f} {px(x[ok][0]):.2f},{py(0):.2f}"
            out.append(f'<polygon points="{pts} {base}" fill="{color}" fill-opacity="0.3" stroke="none"/>')
        else:
            out.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        out.append("</g>")
        ly = MARGIN["top"] + 14 + 18 * i
        lx = WIDTH - MARGIN["right"] + 10
        out.append(f'<rect x="{lx}" y="{ly - 9}" width="12" height="10" fill="{color}"/>')
        out.append(f'<text x="{lx + 18}" y="{ly}">{escape(s.name)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def read_series(svg_text: str) -> dict:
    """``{name: (x, y)}`` recovered from the ``data-*`` attributes of a rendered plot."""
    root = ET.fromstring(svg_text)
    out = {}
    for g in root.iter("{http://www.w3.org/2000/svg}g"):
        if g.get("class") != "series":
            continue

        def parse(v):
            return np.array([float(t) for t in v.split(",")]) if v else np.zeros(0)

        out[g.get("data-name")] = (parse(g.get("data-x")), parse(g.get("data-y")))
    return out
