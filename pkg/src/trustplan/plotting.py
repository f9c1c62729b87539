"""Deterministic SVG rendering of plans, executions and the trusted domain.

Hand-rolled SVG output with fixed float formatting and no timestamps, so a
given input always produces byte-identical files (golden-file friendly).
2D systems get a single panel; higher-dimensional systems get one panel per
projected coordinate pair of the position block.
"""

from __future__ import annotations

import numpy as np

_PANEL = 420.0
_MARGIN = 46.0


def _fmt(v: float) -> str:
    return f"{v:.6g}"


class _Panel:
    """One axes panel mapping data coordinates to SVG pixels."""

    def __init__(self, x0, y0, xlim, ylim, title):
        self.x0, self.y0 = x0, y0
        self.xlim, self.ylim = xlim, ylim
        self.title = title
        self.elems = []

    def _map(self, p):
        px = self.x0 + (p[0] - self.xlim[0]) / (self.xlim[1] - self.xlim[0]) * _PANEL
        py = self.y0 + _PANEL - (p[1] - self.ylim[0]) / (self.ylim[1] - self.ylim[0]) * _PANEL
        return px, py

    def scale(self):
        return _PANEL / (self.xlim[1] - self.xlim[0])

    def frame(self):
        self.elems.insert(0, (
            f'<rect x="{_fmt(self.x0)}" y="{_fmt(self.y0)}" width="{_fmt(_PANEL)}" '
            f'height="{_fmt(_PANEL)}" fill="white" stroke="black" stroke-width="1"/>'
        ))
        self.elems.append(
            f'<text x="{_fmt(self.x0 + _PANEL / 2)}" y="{_fmt(self.y0 - 8)}" '
            f'text-anchor="middle" font-size="14" font-family="monospace">{self.title}</text>'
        )
        for (vx, vy), anchor, label in (
            ((self.xlim[0], self.ylim[0]), "start", f"{_fmt(self.xlim[0])},{_fmt(self.ylim[0])}"),
            ((self.xlim[1], self.ylim[1]), "end", f"{_fmt(self.xlim[1])},{_fmt(self.ylim[1])}"),
        ):
            px, py = self._map((vx, vy))
            self.elems.append(
                f'<text x="{_fmt(px)}" y="{_fmt(py + 16)}" text-anchor="{anchor}" '
                f'font-size="10" font-family="monospace">{label}</text>'
            )

    def polyline(self, pts, color, width=1.5, opacity=1.0):
        if len(pts) == 0:
            return
        coords = " ".join(f"{_fmt(x)},{_fmt(y)}" for x, y in (self._map(p) for p in pts))
        self.elems.append(
            f'<polyline points="{coords}" fill="none" stroke="{color}" '
            f'stroke-width="{_fmt(width)}" stroke-opacity="{_fmt(opacity)}"/>'
        )

    def circle(self, center, radius_data, fill, opacity):
        px, py = self._map(center)
        self.elems.append(
            f'<circle cx="{_fmt(px)}" cy="{_fmt(py)}" r="{_fmt(radius_data * self.scale())}" '
            f'fill="{fill}" fill-opacity="{_fmt(opacity)}" stroke="none"/>'
        )

    def rect(self, low, high, fill, opacity):
        p0 = self._map((low[0], high[1]))
        w = (high[0] - low[0]) * self.scale()
        h = (high[1] - low[1]) * _PANEL / (self.ylim[1] - self.ylim[0])
        self.elems.append(
            f'<rect x="{_fmt(p0[0])}" y="{_fmt(p0[1])}" width="{_fmt(w)}" height="{_fmt(h)}" '
            f'fill="{fill}" fill-opacity="{_fmt(opacity)}" stroke="black" stroke-width="0.5"/>'
        )

    def marker(self, p, color, label):
        px, py = self._map(p)
        self.elems.append(
            f'<circle cx="{_fmt(px)}" cy="{_fmt(py)}" r="4" fill="{color}" stroke="black" '
            f'stroke-width="0.5"/>'
        )
        self.elems.append(
            f'<text x="{_fmt(px + 6)}" y="{_fmt(py - 6)}" font-size="11" '
            f'font-family="monospace">{label}</text>'
        )


_COLORS = {"nominal": "#c026d3", "closed": "#0891b2", "open": "#16a34a"}


def plot_plan_svg(path, state_box, position_dims, curves, obstacles=(),
                  domain_points=None, domain_radius=None, start=None, goal=None):
    """Write a trajectory overlay SVG.

    curves is a list of (label, states-array) with labels in
    {nominal, closed, open}; an empty list still yields a valid axes-only
    figure. domain_points/domain_radius draw the trusted-domain balls
    (projected); obstacles are AxisBox-like objects over the position dims.
    """
    pos = list(position_dims)
    pairs = [(0, 1)] if len(pos) <= 2 else [(0, 1), (0, 2), (1, 2)]
    names = [f"x{pos[i]}x{pos[j]}" for i, j in pairs]

    panels = []
    for k, (i, j) in enumerate(pairs):
        xlim = (state_box[pos[i]][0], state_box[pos[i]][1])
        ylim = (state_box[pos[j]][0], state_box[pos[j]][1])
        panel = _Panel(_MARGIN + k * (_PANEL + _MARGIN), _MARGIN, xlim, ylim, names[k])
        if domain_points is not None and domain_radius is not None:
            for p in np.atleast_2d(domain_points):
                panel.circle((p[pos[i]], p[pos[j]]), domain_radius, "#93c5fd", 0.08)
        for box in obstacles:
            panel.rect((box.low[i], box.low[j]), (box.high[i], box.high[j]),
                       "#ef4444", 0.5)
        for label, states in curves:
            pts = [(s[pos[i]], s[pos[j]]) for s in np.atleast_2d(states)] if len(states) else []
            panel.polyline(pts, _COLORS.get(label, "#333333"))
        if start is not None:
            panel.marker((start[pos[i]], start[pos[j]]), "#facc15", "start")
        if goal is not None:
            panel.marker((goal[pos[i]], goal[pos[j]]), "#22c55e", "goal")
        panel.frame()
        panels.append(panel)

    width = _MARGIN + len(panels) * (_PANEL + _MARGIN)
    height = 2 * _MARGIN + _PANEL
    body = "\n".join(e for p in panels for e in p.elems)
    legend = []
    for n, (label, states) in enumerate(curves):
        color = _COLORS.get(label, "#333333")
        legend.append(
            f'<text x="{_fmt(_MARGIN + 110 * n)}" y="{_fmt(height - 10)}" font-size="12" '
            f'font-family="monospace" fill="{color}">{label} ({len(states)})</text>'
        )
    doc = (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_fmt(width)}" '
        f'height="{_fmt(height)}" viewBox="0 0 {_fmt(width)} {_fmt(height)}">\n'
        f'<rect width="100%" height="100%" fill="#f8fafc"/>\n'
        + body + "\n" + "\n".join(legend) + "\n</svg>\n"
    )
    with open(path, "w") as fh:
        fh.write(doc)
    return path
