"""Minimal deterministic SVG charts.

Output is self-contained (no external references, fonts or scripts) and
byte-stable for identical input, which keeps figures diff-able.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from xml.sax.saxutils import escape

PALETTE = ("#1b6ca8", "#d1495b", "#2e933c", "#edae49", "#7b4b94", "#00798c", "#6c757d", "#8c564b", "#e377c2")


def _n(x: float) -> str:
    return f"{x:.2f}".rstrip("0").rstrip(".") if math.isfinite(x) else "0"


def nice_ticks(lo: float, hi: float, target: int = 5) -> list[float]:
    """Round tick positions covering ``[lo, hi]``."""
    if not (math.isfinite(lo) and math.isfinite(hi)):
        return [0.0]
    if hi <= lo:
        hi = lo + 1.0
    raw = (hi - lo) / max(target, 1)
    mag = 10 ** math.floor(math.log10(raw))
    step = next(m * mag for m in (1, 2, 2.5, 5, 10) if m * mag >= raw)
    start = math.ceil(lo / step - 1e-9) * step
    ticks = []
    t = start
    while t <= hi + 1e-9 * step:
        ticks.append(round(t, 10) + 0.0)
        t += step
    return ticks


def _tick_label(v: float) -> str:
    if v == int(v) and abs(v) < 1e6:
        return str(int(v))
    return f"{v:.3g}"


@dataclass
class Panel:
    """One plotting area with its own data coordinates."""

    title: str = ""
    xlabel: str = ""
    ylabel: str = ""
    xlim: tuple[float, float] | None = None
    ylim: tuple[float, float] | None = None
    xticks: list[float] | None = None
    xticklabels: list[str] | None = None
    items: list[tuple] = field(default_factory=list)
    legend: list[tuple[str, str]] = field(default_factory=list)

    def line(self, xs, ys, color: str, label: str | None = None, dash: bool = False, markers: bool = True):
        self.items.append(("line", list(map(float, xs)), list(map(float, ys)), color, dash, markers))
        if label:
            self.legend.append((label, color))

    def ribbon(self, xs, lo, hi, color: str):
        self.items.append(("ribbon", list(map(float, xs)), list(map(float, lo)), list(map(float, hi)), color))

    def hline(self, y: float, color: str = "#444444", dash: bool = True, label: str | None = None):
        self.items.append(("hline", float(y), color, dash))
        if label:
            self.legend.append((label, color))

    def bars(self, xs, heights, colors, width: float = 0.8):
        self.items.append(("bars", list(map(float, xs)), list(map(float, heights)), list(colors), width))

    def points(self, xs, ys, color: str, label: str | None = None):
        self.items.append(("points", list(map(float, xs)), list(map(float, ys)), color))
        if label:
            self.legend.append((label, color))

    def _extent(self) -> tuple[float, float, float, float]:
        xs, ys = [], []
        for it in self.items:
            kind = it[0]
            if kind in ("line", "points"):
                xs += it[1]
                ys += it[2]
            elif kind == "ribbon":
                xs += it[1]
                ys += it[2] + it[3]
            elif kind == "hline":
                ys.append(it[1])
            elif kind == "bars":
                xs += [x - it[4] / 2 for x in it[1]] + [x + it[4] / 2 for x in it[1]]
                ys += it[2] + [0.0]
        xs = [v for v in xs if math.isfinite(v)] or [0.0, 1.0]
        ys = [v for v in ys if math.isfinite(v)] or [0.0, 1.0]
        x0, x1 = self.xlim or (min(xs), max(xs))
        y0, y1 = self.ylim or (min(ys), max(ys))
        if x1 <= x0:
            x0, x1 = x0 - 0.5, x1 + 0.5
        if y1 <= y0:
            y0, y1 = y0 - 0.5, y1 + 0.5
        if self.ylim is None:
            pad = 0.05 * (y1 - y0)
            y0, y1 = y0 - pad, y1 + pad
        return x0, x1, y0, y1

    def render(self, ox: float, oy: float, w: float, h: float) -> list[str]:
        ml, mr, mt, mb = 56.0, 12.0, 26.0, 40.0
        pw, ph = w - ml - mr, h - mt - mb
        x0, x1, y0, y1 = self._extent()

        def sx(v):
            return ox + ml + (v - x0) / (x1 - x0) * pw

        def sy(v):
            return oy + mt + (1.0 - (v - y0) / (y1 - y0)) * ph

        out = ['<g class="panel">']
        out.append(f'<rect x="{_n(ox + ml)}" y="{_n(oy + mt)}" width="{_n(pw)}" height="{_n(ph)}" '
                   f'fill="#ffffff" stroke="#888888"/>')
        for t in nice_ticks(y0, y1):
            if y0 <= t <= y1:
                out.append(f'<line x1="{_n(ox + ml)}" y1="{_n(sy(t))}" x2="{_n(ox + ml + pw)}" y2="{_n(sy(t))}" '
                           f'stroke="#eeeeee"/>')
                out.append(f'<text x="{_n(ox + ml - 4)}" y="{_n(sy(t) + 3)}" text-anchor="end" '
                           f'font-size="10">{_tick_label(t)}</text>')
        xticks = self.xticks if self.xticks is not None else nice_ticks(x0, x1)
        labels = self.xticklabels or [_tick_label(t) for t in xticks]
        for t, lab in zip(xticks, labels):
            if x0 <= t <= x1:
                out.append(f'<text x="{_n(sx(t))}" y="{_n(oy + mt + ph + 14)}" text-anchor="middle" '
                           f'font-size="10">{escape(lab)}</text>')
        clip = f"clip{int(ox)}_{int(oy)}"
        out.append(f'<clipPath id="{clip}"><rect x="{_n(ox + ml)}" y="{_n(oy + mt)}" width="{_n(pw)}" '
                   f'height="{_n(ph)}"/></clipPath>')
        out.append(f'<g clip-path="url(#{clip})">')
        for it in self.items:
            out += self._item(it, sx, sy)
        out.append("</g>")
        if self.title:
            out.append(f'<text x="{_n(ox + ml + pw / 2)}" y="{_n(oy + 16)}" text-anchor="middle" '
                       f'font-size="12" font-weight="bold">{escape(self.title)}</text>')
        if self.xlabel:
            out.append(f'<text x="{_n(ox + ml + pw / 2)}" y="{_n(oy + h - 8)}" text-anchor="middle" '
                       f'font-size="11">{escape(self.xlabel)}</text>')
        if self.ylabel:
            cx, cy = ox + 14, oy + mt + ph / 2
            out.append(f'<text x="{_n(cx)}" y="{_n(cy)}" text-anchor="middle" font-size="11" '
                       f'transform="rotate(-90 {_n(cx)} {_n(cy)})">{escape(self.ylabel)}</text>')
        for k, (lab, color) in enumerate(self.legend):
            ly = oy + mt + 12 + 13 * k
            lx = ox + ml + pw - 120
            out.append(f'<line x1="{_n(lx)}" y1="{_n(ly - 3)}" x2="{_n(lx + 14)}" y2="{_n(ly - 3)}" '
                       f'stroke="{color}" stroke-width="2"/>')
            out.append(f'<text x="{_n(lx + 18)}" y="{_n(ly)}" font-size="10">{escape(lab)}</text>')
        out.append("</g>")
        return out

    @staticmethod
    def _item(it, sx, sy) -> list[str]:
        kind = it[0]
        if kind == "line":
            _, xs, ys, color, dash, markers = it
            pts = [(x, y) for x, y in zip(xs, ys) if math.isfinite(y)]
            coords = " ".join(f"{_n(sx(x))},{_n(sy(y))}" for x, y in pts)
            style = ' stroke-dasharray="5,3"' if dash else ""
            out = [f'<polyline points="{coords}" fill="none" stroke="{color}" stroke-width="1.8"{style}/>']
            if markers:
                out += [f'<circle cx="{_n(sx(x))}" cy="{_n(sy(y))}" r="2.5" fill="{color}"/>' for x, y in pts]
            return out
        if kind == "points":
            _, xs, ys, color = it
            return [f'<circle cx="{_n(sx(x))}" cy="{_n(sy(y))}" r="3" fill="{color}"/>'
                    for x, y in zip(xs, ys) if math.isfinite(y)]
        if kind == "ribbon":
            _, xs, lo, hi, color = it
            upper = [f"{_n(sx(x))},{_n(sy(y))}" for x, y in zip(xs, hi)]
            lower = [f"{_n(sx(x))},{_n(sy(y))}" for x, y in zip(reversed(xs), reversed(lo))]
            return [f'<polygon points="{" ".join(upper + lower)}" fill="{color}" fill-opacity="0.2" stroke="none"/>']
        if kind == "hline":
            _, y, color, dash = it
            style = ' stroke-dasharray="4,3"' if dash else ""
            return [f'<line x1="0" y1="{_n(sy(y))}" x2="10000" y2="{_n(sy(y))}" stroke="{color}"{style}/>']
        _, xs, hs, colors, width = it
        out = []
        for x, hgt, color in zip(xs, hs, colors):
            if not math.isfinite(hgt):
                continue
            top, bottom = sy(max(hgt, 0.0)), sy(min(hgt, 0.0))
            left, right = sx(x - width / 2), sx(x + width / 2)
            out.append(f'<rect x="{_n(left)}" y="{_n(top)}" width="{_n(right - left)}" '
                       f'height="{_n(bottom - top)}" fill="{color}"/>')
        return out


@dataclass
class Figure:
    """A grid of panels rendered into one SVG document."""

    title: str = ""
    ncols: int = 1
    panel_width: float = 420.0
    panel_height: float = 280.0
    panels: list[Panel] = field(default_factory=list)

    def add(self, panel: Panel) -> Panel:
        self.panels.append(panel)
        return panel

    def to_svg(self) -> str:
        n = max(len(self.panels), 1)
        ncols = min(self.ncols, n)
        nrows = math.ceil(n / ncols)
        head = 28.0 if self.title else 0.0
        width = ncols * self.panel_width
        height = nrows * self.panel_height + head
        out = [
            '<?xml version="1.0" encoding="UTF-8"?>',
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{_n(width)}" height="{_n(height)}" '
            f'viewBox="0 0 {_n(width)} {_n(height)}" font-family="sans-serif">',
            f'<rect width="{_n(width)}" height="{_n(height)}" fill="#ffffff"/>',
        ]
        if self.title:
            out.append(f'<text x="{_n(width / 2)}" y="19" text-anchor="middle" font-size="14" '
                       f'font-weight="bold">{escape(self.title)}</text>')
        for k, panel in enumerate(self.panels):
            r, c = divmod(k, ncols)
            out += panel.render(c * self.panel_width, head + r * self.panel_height,
                                self.panel_width, self.panel_height)
        out.append("</svg>")
        return "\n".join(out) + "\n"
