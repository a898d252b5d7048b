"""Minimal self-contained SVG renderer: axes, polylines, scatter, bars, and
grayscale heatmaps, with the plotted numbers embedded as CSV data tables
(one ``<desc>`` element per series) so every figure is also a data file.

No external plotting dependency; output is deliberately plain XML that any
SVG viewer or XML parser can read.
"""

from __future__ import annotations

import math
from pathlib import Path
from xml.sax.saxutils import escape

PALETTE = ("#4477aa", "#ee6677", "#228833", "#ccbb44",
           "#66ccee", "#aa3377", "#999999")


def _fmt(x):
    if isinstance(x, float) and (math.isnan(x) or math.isinf(x)):
        return "nan"
    return f"{x:.6g}"


class Figure:
    """One plot. Add series, then `to_svg()` or `save(path)`."""

    def __init__(self, title="", xlabel="", ylabel="", width=640, height=420):
        self.title = title
        self.xlabel = xlabel
        self.ylabel = ylabel
        self.width = width
        self.height = height
        self.margin = (56, 16, 42, 44)  # left, right, bottom, top
        self.series = []

    def _color(self, explicit):
        return explicit or PALETTE[len(self.series) % len(PALETTE)]

    def polyline(self, xs, ys, label="", color=None):
        self.series.append({"kind": "line", "label": label,
                            "color": self._color(color),
                            "x": [float(v) for v in xs],
                            "y": [float(v) for v in ys]})
        return self

    def scatter(self, xs, ys, label="", color=None, radius=2.0):
        self.series.append({"kind": "scatter", "label": label,
                            "color": self._color(color), "radius": radius,
                            "x": [float(v) for v in xs],
                            "y": [float(v) for v in ys]})
        return self

    def bars(self, lefts, rights, heights, label="", color=None):
        """Vertical bars spanning [left, right] in data units, from y=0."""
        self.series.append({"kind": "bars", "label": label,
                            "color": self._color(color),
                            "left": [float(v) for v in lefts],
                            "right": [float(v) for v in rights],
                            "y": [float(v) for v in heights]})
        return self

    def heatmap(self, grid, label="", vmin=None, vmax=None):
        """Grayscale cell grid; row 0 drawn at the top like an image."""
        rows = [[float(v) for v in row] for row in grid]
        self.series.append({"kind": "heatmap", "label": label, "grid": rows,
                            "vmin": vmin, "vmax": vmax})
        return self

    # -- layout ------------------------------------------------------------

    def _bounds(self):
        xs, ys = [], []
        for s in self.series:
            if s["kind"] == "heatmap":
                xs += [0.0, float(len(s["grid"][0]) if s["grid"] else 1)]
                ys += [0.0, float(len(s["grid"]))]
            elif s["kind"] == "bars":
                xs += s["left"] + s["right"]
                ys += s["y"] + [0.0]
            else:
                xs += s["x"]
                ys += s["y"]
        xs = [v for v in xs if math.isfinite(v)]
        ys = [v for v in ys if math.isfinite(v)]
        if not xs:
            return 0.0, 1.0, 0.0, 1.0
        x0, x1 = min(xs), max(xs)
        y0, y1 = min(ys), max(ys)
        if x0 == x1:
            x0, x1 = x0 - 0.5, x1 + 0.5
        if y0 == y1:
            y0, y1 = y0 - 0.5, y1 + 0.5
        pad_x = 0.04 * (x1 - x0)
        pad_y = 0.06 * (y1 - y0)
        return x0 - pad_x, x1 + pad_x, y0 - pad_y, y1 + pad_y

    def _frame(self):
        left, right, bottom, top = self.margin
        return left, top, self.width - left - right, self.height - top - bottom

    def to_svg(self):
        x0, x1, y0, y1 = self._bounds()
        fx, fy, fw, fh = self._frame()

        def px(x):
            return fx + (x - x0) / (x1 - x0) * fw

        def py(y):
            return fy + (1.0 - (y - y0) / (y1 - y0)) * fh

        out = [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{self.width}" '
            f'height="{self.height}" viewBox="0 0 {self.width} {self.height}">',
            f'<rect x="0" y="0" width="{self.width}" height="{self.height}" fill="white"/>',
        ]
        out += self._data_tables()
        out += self._draw_series(px, py)
        out += self._draw_frame_and_ticks(x0, x1, y0, y1, px, py)
        out += self._draw_labels()
        out += self._draw_legend()
        out.append("</svg>")
        return "\n".join(out) + "\n"

    def save(self, path):
        Path(path).write_text(self.to_svg())
        return path

    # -- pieces ------------------------------------------------------------

    def _data_tables(self):
        """CSV of every series, embedded so the figure doubles as data."""
        out = []
        for i, s in enumerate(self.series):
            rows = []
            if s["kind"] == "heatmap":
                rows.append("row,col,value")
                for r, row in enumerate(s["grid"]):
                    rows += [f"{r},{c},{_fmt(v)}" for c, v in enumerate(row)]
            elif s["kind"] == "bars":
                rows.append("left,right,height")
                rows += [f"{_fmt(l)},{_fmt(r)},{_fmt(h)}"
                         for l, r, h in zip(s["left"], s["right"], s["y"])]
            else:
                rows.append("x,y")
                rows += [f"{_fmt(a)},{_fmt(b)}" for a, b in zip(s["x"], s["y"])]
            name = s.get("label") or f"series-{i}"
            out.append(f'<desc id="data-{i}" data-series="{escape(name, {chr(34): "&quot;"})}">'
                       + escape("\n".join(rows)) + "</desc>")
        return out

    def _draw_series(self, px, py):
        fx, fy, fw, fh = self._frame()
        out = [f'<clipPath id="frame"><rect x="{fx}" y="{fy}" width="{fw}" '
               f'height="{fh}"/></clipPath>',
               '<g clip-path="url(#frame)">']
        for s in self.series:
            if s["kind"] == "heatmap":
                out += self._draw_heatmap(s, px, py)
            elif s["kind"] == "bars":
                for l, r, h in zip(s["left"], s["right"], s["y"]):
                    top = min(py(h), py(0.0))
                    height = abs(py(h) - py(0.0))
                    out.append(f'<rect x="{_fmt(px(l))}" y="{_fmt(top)}" '
                               f'width="{_fmt(px(r) - px(l))}" height="{_fmt(height)}" '
                               f'fill="{s["color"]}" fill-opacity="0.8" '
                               f'stroke="white" stroke-width="0.5"/>')
            elif s["kind"] == "scatter":
                for x, y in zip(s["x"], s["y"]):
                    if math.isfinite(x) and math.isfinite(y):
                        out.append(f'<circle cx="{_fmt(px(x))}" cy="{_fmt(py(y))}" '
                                   f'r="{s["radius"]}" fill="{s["color"]}" '
                                   f'fill-opacity="0.7"/>')
            else:
                pts = " ".join(f"{_fmt(px(x))},{_fmt(py(y))}"
                               for x, y in zip(s["x"], s["y"])
                               if math.isfinite(x) and math.isfinite(y))
                if pts:
                    out.append(f'<polyline points="{pts}" fill="none" '
                               f'stroke="{s["color"]}" stroke-width="1.5"/>')
        out.append("</g>")
        return out

    def _draw_heatmap(self, s, px, py):
        grid = s["grid"]
        if not grid:
            return []
        flat = [v for row in grid for v in row if math.isfinite(v)]
        vmin = s["vmin"] if s["vmin"] is not None else (min(flat) if flat else 0.0)
        vmax = s["vmax"] if s["vmax"] is not None else (max(flat) if flat else 1.0)
        span = vmax - vmin or 1.0
        n_rows = len(grid)
        out = []
        for r, row in enumerate(grid):
            for c, v in enumerate(row):
                frac = min(max((v - vmin) / span, 0.0), 1.0)
                shade = int(round(255 * (1.0 - frac)))
                fill = f"rgb({shade},{shade},{shade})"
                # row 0 at the top: map row r to data-y band [n_rows-1-r, n_rows-r]
                x_pix = px(c)
                y_pix = py(n_rows - r)
                out.append(f'<rect x="{_fmt(x_pix)}" y="{_fmt(y_pix)}" '
                           f'width="{_fmt(px(c + 1) - px(c))}" '
                           f'height="{_fmt(py(n_rows - r - 1) - py(n_rows - r))}" '
                           f'fill="{fill}"/>')
        return out

    def _ticks(self, lo, hi, count=5):
        step = (hi - lo) / (count - 1)
        return [lo + i * step for i in range(count)]

    def _draw_frame_and_ticks(self, x0, x1, y0, y1, px, py):
        fx, fy, fw, fh = self._frame()
        out = [f'<rect x="{fx}" y="{fy}" width="{fw}" height="{fh}" '
               'fill="none" stroke="#333333"/>']
        for x in self._ticks(x0, x1):
            out.append(f'<line x1="{_fmt(px(x))}" y1="{fy + fh}" '
                       f'x2="{_fmt(px(x))}" y2="{fy + fh + 4}" stroke="#333333"/>')
            out.append(f'<text x="{_fmt(px(x))}" y="{fy + fh + 16}" font-size="10" '
                       f'text-anchor="middle" font-family="sans-serif">'
                       f'{escape(_fmt(x))}</text>')
        for y in self._ticks(y0, y1):
            out.append(f'<line x1="{fx - 4}" y1="{_fmt(py(y))}" '
                       f'x2="{fx}" y2="{_fmt(py(y))}" stroke="#333333"/>')
            out.append(f'<text x="{fx - 7}" y="{_fmt(py(y) + 3)}" font-size="10" '
                       f'text-anchor="end" font-family="sans-serif">'
                       f'{escape(_fmt(y))}</text>')
        return out

    def _draw_labels(self):
        fx, fy, fw, fh = self._frame()
        out = []
        if self.title:
            out.append(f'<text x="{fx + fw / 2}" y="{fy - 12}" font-size="13" '
                       f'text-anchor="middle" font-family="sans-serif" '
                       f'font-weight="bold">{escape(self.title)}</text>')
        if self.xlabel:
            out.append(f'<text x="{fx + fw / 2}" y="{fy + fh + 32}" font-size="11" '
                       f'text-anchor="middle" font-family="sans-serif">'
                       f'{escape(self.xlabel)}</text>')
        if self.ylabel:
            cx, cy = fx - 40, fy + fh / 2
            out.append(f'<text x="{cx}" y="{cy}" font-size="11" '
                       f'text-anchor="middle" font-family="sans-serif" '
                       f'transform="rotate(-90 {cx} {cy})">{escape(self.ylabel)}</text>')
        return out

    def _draw_legend(self):
        labelled = [s for s in self.series
                    if s.get("label") and s["kind"] != "heatmap"]
        if not labelled:
            return []
        fx, fy, fw, _ = self._frame()
        out = []
        for i, s in enumerate(labelled):
            y = fy + 12 + 14 * i
            x = fx + fw - 110
            out.append(f'<rect x="{x}" y="{y - 7}" width="10" height="8" '
                       f'fill="{s["color"]}"/>')
            out.append(f'<text x="{x + 14}" y="{y}" font-size="10" '
                       f'font-family="sans-serif">{escape(s["label"])}</text>')
        return out
