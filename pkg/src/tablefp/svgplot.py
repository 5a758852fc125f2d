"""Minimal deterministic SVG emitter.

Byte-identical output for identical inputs: no timestamps, no float
formatting drift (fixed %.3f), stable element order. Grayscale arrays
embed as base64 PNGs rendered by Pillow with fixed settings.
"""

from __future__ import annotations

import base64
import io

import numpy as np
from PIL import Image

from .errors import DataError


def _f(v: float) -> str:
    return f"{float(v):.3f}"


class SvgCanvas:
    def __init__(self, width: float, height: float, background: str | None = "#ffffff"):
        self.width = width
        self.height = height
        self.parts: list[str] = []
        if background:
            self.rect(0, 0, width, height, fill=background, stroke="none")

    def rect(self, x, y, w, h, fill="none", stroke="#000000", width=1.0, opacity=1.0):
        self.parts.append(
            f'<rect x="{_f(x)}" y="{_f(y)}" width="{_f(w)}" height="{_f(h)}" '
            f'fill="{fill}" stroke="{stroke}" stroke-width="{_f(width)}" opacity="{_f(opacity)}"/>')

    def line(self, x0, y0, x1, y1, color="#000000", width=1.0, opacity=1.0):
        self.parts.append(
            f'<line x1="{_f(x0)}" y1="{_f(y0)}" x2="{_f(x1)}" y2="{_f(y1)}" '
            f'stroke="{color}" stroke-width="{_f(width)}" stroke-opacity="{_f(opacity)}"/>')

    def circle(self, x, y, r, fill="#000000", opacity=1.0):
        self.parts.append(
            f'<circle cx="{_f(x)}" cy="{_f(y)}" r="{_f(r)}" fill="{fill}" '
            f'opacity="{_f(opacity)}"/>')

    def polyline(self, points, color="#000000", width=1.0, opacity=1.0):
        pts = " ".join(f"{_f(x)},{_f(y)}" for x, y in points)
        self.parts.append(
            f'<polyline points="{pts}" fill="none" stroke="{color}" '
            f'stroke-width="{_f(width)}" stroke-opacity="{_f(opacity)}"/>')

    def text(self, x, y, s, size=11, color="#000000", anchor="start"):
        esc = (str(s).replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;"))
        self.parts.append(
            f'<text x="{_f(x)}" y="{_f(y)}" font-size="{_f(size)}" fill="{color}" '
            f'text-anchor="{anchor}" font-family="sans-serif">{esc}</text>')

    def image(self, x, y, gray: np.ndarray):
        """Embed a [0,1] grayscale array at 1 px per cell."""
        if gray.ndim != 2:
            raise DataError("image expects a 2-D grayscale array")
        arr = np.clip(np.asarray(gray, dtype=np.float64), 0.0, 1.0)
        img = Image.fromarray((arr * 255.0).round().astype(np.uint8), mode="L")
        buf = io.BytesIO()
        img.save(buf, format="PNG", compress_level=6)
        b64 = base64.b64encode(buf.getvalue()).decode("ascii")
        h, w = arr.shape
        self.parts.append(
            f'<image x="{_f(x)}" y="{_f(y)}" width="{_f(w)}" height="{_f(h)}" '
            f'preserveAspectRatio="none" href="data:image/png;base64,{b64}"/>')

    def to_string(self) -> str:
        body = "\n".join(self.parts)
        return (f'<svg xmlns="http://www.w3.org/2000/svg" width="{_f(self.width)}" '
                f'height="{_f(self.height)}" viewBox="0 0 {_f(self.width)} {_f(self.height)}">\n'
                f"{body}\n</svg>\n")

    def save(self, path: str) -> str:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_string())
        return path


def line_chart(path: str, xs, series: dict[str, np.ndarray],
               width: int = 640, height: int = 360,
               title: str = "", ylabel: str = "",
               band: dict[str, np.ndarray] | None = None) -> str:
    """Plain line chart; series maps label to y arrays over shared xs."""
    xs = np.asarray(xs, dtype=float)
    colors = ("#1565c0", "#c62828", "#2e7d32", "#6a1b9a", "#ef6c00", "#00838f")
    all_y = np.concatenate([np.asarray(v, dtype=float) for v in series.values()])
    if band:
        all_y = np.concatenate([all_y] + [np.asarray(v, float) for v in band.values()])
    y0, y1 = float(all_y.min()), float(all_y.max())
    if y1 - y0 < 1e-12:
        y0, y1 = y0 - 0.5, y1 + 0.5
    pad = 0.06 * (y1 - y0)
    y0, y1 = y0 - pad, y1 + pad
    ml, mr, mt, mb = 56, 16, 30, 36
    pw, ph = width - ml - mr, height - mt - mb

    def px(x):
        return ml + (x - xs.min()) / max(xs.max() - xs.min(), 1e-12) * pw

    def py(y):
        return mt + (y1 - y) / (y1 - y0) * ph

    c = SvgCanvas(width, height)
    c.rect(ml, mt, pw, ph, fill="none", stroke="#888888", width=0.8)
    for frac in (0.0, 0.25, 0.5, 0.75, 1.0):
        yv = y0 + frac * (y1 - y0)
        c.line(ml, py(yv), ml + pw, py(yv), color="#dddddd", width=0.6)
        c.text(ml - 6, py(yv) + 4, f"{yv:.2f}", size=9, anchor="end")
        xv = xs.min() + frac * (xs.max() - xs.min())
        c.text(px(xv), height - mb + 14, f"{xv:.0f}", size=9, anchor="middle")
    if title:
        c.text(width / 2, 18, title, size=13, anchor="middle")
    if ylabel:
        c.text(14, mt - 8, ylabel, size=10)
    for i, (label, ys) in enumerate(sorted(series.items())):
        ys = np.asarray(ys, dtype=float)
        color = colors[i % len(colors)]
        c.polyline([(px(x), py(y)) for x, y in zip(xs, ys)], color=color, width=1.6)
        c.text(ml + pw - 4, mt + 14 + 13 * i, label, size=10, color=color, anchor="end")
    return c.save(path)


def scatter_chart(path: str, points: np.ndarray, groups: list | None = None,
                  width: int = 560, height: int = 560, title: str = "") -> str:
    """2-D scatter, one color per group label."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise DataError("scatter expects (n, 2) points")
    colors = ("#1565c0", "#c62828", "#2e7d32", "#6a1b9a", "#ef6c00", "#00838f",
              "#5d4037", "#455a64", "#9e9d24", "#880e4f")
    m = 30
    lo = pts.min(axis=0)
    hi = pts.max(axis=0)
    span = np.maximum(hi - lo, 1e-12)
    c = SvgCanvas(width, height)
    if title:
        c.text(width / 2, 18, title, size=13, anchor="middle")
    if groups is None:
        groups = [0] * len(pts)
    uniq = sorted(set(groups), key=str)
    cmap = {g: colors[i % len(colors)] for i, g in enumerate(uniq)}
    for (x, y), g in zip(pts, groups):
        sx = m + (x - lo[0]) / span[0] * (width - 2 * m)
        sy = m + (y - lo[1]) / span[1] * (height - 2 * m)
        c.circle(sx, sy, 2.2, fill=cmap[g], opacity=0.8)
    for i, g in enumerate(uniq[:12]):
        c.circle(m, height - 14 - 13 * i, 3, fill=cmap[g])
        c.text(m + 8, height - 10 - 13 * i, str(g), size=9)
    return c.save(path)
