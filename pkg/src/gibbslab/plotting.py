"""Deterministic SVG 1.1 rendering of result files.

``plot_emit`` turns a CSV or JSON result produced by the command-line
surface into a standalone SVG: densities as line or heat plots, convergence
tables as gap-vs-n log plots, and point configurations as scatter charts on
the space's standard chart.  Output bytes depend only on the input file
(fixed canvas, fixed number formatting, no timestamps), so identical inputs
render identical SVGs.
"""

import csv
import json
import math
import os

from .errors import ConfigError

__all__ = ["plot_emit"]

_WIDTH, _HEIGHT = 640.0, 480.0
_MARGIN = 64.0
_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd")


def _fmt(value):
    return f"{value:.2f}"


def _read_csv(path):
    with open(path, "r", encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    rows = [row for row in rows if row]
    if not rows:
        raise ConfigError(f"{path}: result file is empty")
    header, body = rows[0], rows[1:]
    if not body:
        raise ConfigError(f"{path}: result file has no data rows")
    return header, body


def _floats(body, column):
    try:
        return [float(row[column]) for row in body]
    except (IndexError, ValueError) as exc:
        raise ConfigError(f"column {column} is not numeric: {exc}")


def _span(values, pad=0.05):
    lo, hi = min(values), max(values)
    if hi <= lo:
        lo, hi = lo - 0.5, hi + 0.5
    width = hi - lo
    return lo - pad * width, hi + pad * width


class _Chart:
    """Fixed-canvas chart with linear or log-y data coordinates."""

    def __init__(self, xlim, ylim, logy=False):
        self.xlim = xlim
        self.ylim = ylim
        self.logy = logy
        self.parts = []

    def px(self, x):
        lo, hi = self.xlim
        return _MARGIN + (x - lo) / (hi - lo) * (_WIDTH - 2 * _MARGIN)

    def py(self, y):
        lo, hi = self.ylim
        if self.logy:
            y, lo, hi = math.log10(y), math.log10(lo), math.log10(hi)
        return _HEIGHT - _MARGIN - (y - lo) / (hi - lo) * (_HEIGHT - 2 * _MARGIN)

    def add(self, element):
        self.parts.append(element)

    def frame(self, xlabel, ylabel):
        x0, y0 = _MARGIN, _MARGIN
        w, h = _WIDTH - 2 * _MARGIN, _HEIGHT - 2 * _MARGIN
        self.add(f'<rect x="{_fmt(x0)}" y="{_fmt(y0)}" width="{_fmt(w)}" '
                 f'height="{_fmt(h)}" fill="none" stroke="#000000" '
                 'stroke-width="1"/>')
        for tick in self._xticks():
            px = self.px(tick)
            self.add(f'<line x1="{_fmt(px)}" y1="{_fmt(y0 + h)}" '
                     f'x2="{_fmt(px)}" y2="{_fmt(y0 + h + 5)}" '
                     'stroke="#000000" stroke-width="1"/>')
            self.add(f'<text x="{_fmt(px)}" y="{_fmt(y0 + h + 20)}" '
                     'font-family="monospace" font-size="11" '
                     f'text-anchor="middle">{tick:.4g}</text>')
        for tick in self._yticks():
            py = self.py(tick)
            self.add(f'<line x1="{_fmt(x0 - 5)}" y1="{_fmt(py)}" '
                     f'x2="{_fmt(x0)}" y2="{_fmt(py)}" '
                     'stroke="#000000" stroke-width="1"/>')
            self.add(f'<text x="{_fmt(x0 - 8)}" y="{_fmt(py + 4)}" '
                     'font-family="monospace" font-size="11" '
                     f'text-anchor="end">{tick:.4g}</text>')
        self.add(f'<text x="{_fmt(_WIDTH / 2)}" y="{_fmt(_HEIGHT - 16)}" '
                 'font-family="monospace" font-size="12" '
                 f'text-anchor="middle">{xlabel}</text>')
        self.add(f'<text x="18" y="{_fmt(_HEIGHT / 2)}" '
                 'font-family="monospace" font-size="12" '
                 f'text-anchor="middle" transform="rotate(-90 18 '
                 f'{_fmt(_HEIGHT / 2)})">{ylabel}</text>')

    def _xticks(self):
        lo, hi = self.xlim
        step = (hi - lo) / 4.0
        return [lo + i * step for i in range(5)]

    def _yticks(self):
        lo, hi = self.ylim
        if not self.logy:
            step = (hi - lo) / 4.0
            return [lo + i * step for i in range(5)]
        lo_e = math.floor(math.log10(lo))
        hi_e = math.ceil(math.log10(hi))
        ticks = [10.0 ** e for e in range(lo_e, hi_e + 1)]
        return [t for t in ticks if lo <= t <= hi] or [lo, hi]

    def polyline(self, xs, ys, color, dashed=False):
        points = " ".join(f"{_fmt(self.px(x))},{_fmt(self.py(y))}"
                          for x, y in zip(xs, ys))
        dash = ' stroke-dasharray="6,3"' if dashed else ""
        self.add(f'<polyline points="{points}" fill="none" '
                 f'stroke="{color}" stroke-width="1.5"{dash}/>')

    def dots(self, xs, ys, color, radius=3.0, hollow=False):
        fill = "none" if hollow else color
        for x, y in zip(xs, ys):
            self.add(f'<circle cx="{_fmt(self.px(x))}" '
                     f'cy="{_fmt(self.py(y))}" r="{_fmt(radius)}" '
                     f'fill="{fill}" stroke="{color}" stroke-width="1"/>')

    def render(self):
        body = "\n".join(self.parts)
        return ('<?xml version="1.0" encoding="UTF-8"?>\n'
                f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" '
                f'width="{_fmt(_WIDTH)}" height="{_fmt(_HEIGHT)}" '
                f'viewBox="0 0 {_fmt(_WIDTH)} {_fmt(_HEIGHT)}">\n'
                f'{body}\n</svg>\n')


def _render_line(path):
    header, body = _read_csv(path)
    if len(header) < 2:
        raise ConfigError(f"{path}: line plots need an x column and at "
                          "least one value column")
    xs = _floats(body, 0)
    series = [_floats(body, i) for i in range(1, len(header))]
    chart = _Chart(_span(xs), _span([v for s in series for v in s]))
    chart.frame(header[0], header[1])
    for index, values in enumerate(series):
        chart.polyline(xs, values, _PALETTE[index % len(_PALETTE)],
                       dashed=index > 0)
    return chart.render()


def _render_gap_log(path):
    if path.endswith(".json"):
        with open(path, "r", encoding="utf-8") as fh:
            blob = json.load(fh)
        if not isinstance(blob, dict) or "n_values" not in blob or \
                "gaps" not in blob:
            raise ConfigError(f"{path}: JSON result has no n_values/gaps "
                              "table")
        ns = [float(n) for n in blob["n_values"]]
        gaps = [float(g) for g in blob["gaps"]]
    else:
        header, body = _read_csv(path)
        if "n" not in header or "gap" not in header:
            raise ConfigError(f"{path}: gap plots need 'n' and 'gap' columns, "
                              f"got {header}")
        ns = _floats(body, header.index("n"))
        gaps = _floats(body, header.index("gap"))
    pairs = [(n, g) for n, g in zip(ns, gaps) if g > 0.0]
    if not pairs:
        raise ConfigError(f"{path}: no positive gaps to place on a log scale")
    ns = [p[0] for p in pairs]
    gaps = [p[1] for p in pairs]
    lo, hi = min(gaps), max(gaps)
    chart = _Chart(_span(ns), (lo / 1.5, hi * 1.5), logy=True)
    chart.frame("n", "gap")
    chart.polyline(ns, gaps, _PALETTE[0])
    chart.dots(ns, gaps, _PALETTE[0])
    return chart.render()


def _render_scatter(path):
    header, body = _read_csv(path)
    coords = header[1:]
    if header[:1] != ["index"] or not coords:
        raise ConfigError(f"{path}: scatter plots need a point-configuration "
                          f"file with an index column, got {header}")
    if coords == ["atom"]:
        raise ConfigError(f"{path}: finite-space label files have no "
                          "geometric chart; use the counts table instead")
    if coords == ["theta"]:
        theta = _floats(body, 1)
        xs = [math.cos(t) for t in theta]
        ys = [math.sin(t) for t in theta]
        chart = _Chart((-1.3, 1.3), (-1.3, 1.3))
        chart.frame("cos(theta)", "sin(theta)")
        steps = [2.0 * math.pi * k / 256 for k in range(257)]
        chart.polyline([math.cos(t) for t in steps],
                       [math.sin(t) for t in steps], "#bbbbbb")
        chart.dots(xs, ys, _PALETTE[0])
        return chart.render()
    if coords == ["u", "v"]:
        chart = _Chart((-0.05, 1.05), (-0.05, 1.05))
        chart.frame("u", "v")
        chart.dots(_floats(body, 1), _floats(body, 2), _PALETTE[0])
        return chart.render()
    if coords == ["x", "y", "z"]:
        xs, ys, zs = (_floats(body, i) for i in (1, 2, 3))
        chart = _Chart((-1.3, 1.3), (-1.3, 1.3))
        chart.frame("x", "y")
        steps = [2.0 * math.pi * k / 256 for k in range(257)]
        chart.polyline([math.cos(t) for t in steps],
                       [math.sin(t) for t in steps], "#bbbbbb")
        for x, y, z in zip(xs, ys, zs):
            chart.dots([x], [y], _PALETTE[0], hollow=z < 0.0)
        return chart.render()
    if len(coords) == 1:
        xs = _floats(body, 1)
        chart = _Chart(_span(xs), (-1.0, 1.0))
        chart.frame(coords[0], "")
        chart.polyline([min(xs), max(xs)], [0.0, 0.0], "#bbbbbb")
        chart.dots(xs, [0.0] * len(xs), _PALETTE[0])
        return chart.render()
    raise ConfigError(f"{path}: no scatter chart for columns {coords}")


def _render_heat(path):
    header, body = _read_csv(path)
    if len(header) != 3:
        raise ConfigError(f"{path}: heat maps need (u, v, value) columns, "
                          f"got {header}")
    us, vs, values = _floats(body, 0), _floats(body, 1), _floats(body, 2)
    u_levels = sorted(set(us))
    v_levels = sorted(set(vs))
    if len(u_levels) * len(v_levels) != len(body):
        raise ConfigError(f"{path}: heat input is not a full grid")
    lo, hi = min(values), max(values)
    width = (_WIDTH - 2 * _MARGIN) / len(u_levels)
    height = (_HEIGHT - 2 * _MARGIN) / len(v_levels)
    u_index = {u: i for i, u in enumerate(u_levels)}
    v_index = {v: i for i, v in enumerate(v_levels)}
    chart = _Chart(_span(u_levels), _span(v_levels))
    for u, v, value in zip(us, vs, values):
        norm = 0.5 if hi <= lo else (value - lo) / (hi - lo)
        shade = int(round(255.0 * (1.0 - norm)))
        color = f"#{shade:02x}{shade:02x}ff"
        x = _MARGIN + u_index[u] * width
        y = _HEIGHT - _MARGIN - (v_index[v] + 1) * height
        chart.add(f'<rect x="{_fmt(x)}" y="{_fmt(y)}" '
                  f'width="{_fmt(width + 0.5)}" height="{_fmt(height + 0.5)}" '
                  f'fill="{color}"/>')
    chart.frame(header[0], header[1])
    return chart.render()


_RENDERERS = {
    "line": _render_line,
    "gap-log": _render_gap_log,
    "scatter": _render_scatter,
    "heat": _render_heat,
}


def plot_emit(result_file, kind, output=None):
    """Render ``result_file`` as a deterministic SVG; returns the path
    written.  Raises ConfigError (before creating any file) when the kind is
    unknown, the result does not match the kind, or there is nothing to
    draw."""
    if kind not in _RENDERERS:
        raise ConfigError(f"unknown plot kind {kind!r}; choose from "
                          f"{sorted(_RENDERERS)}")
    if not os.path.exists(result_file):
        raise ConfigError(f"result file {result_file} does not exist")
    svg = _RENDERERS[kind](result_file)
    if output is None:
        stem, _ = os.path.splitext(result_file)
        output = f"{stem}_{kind}.svg"
    with open(output, "w", encoding="utf-8") as fh:
        fh.write(svg)
    return output
