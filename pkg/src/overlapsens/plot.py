"""Dependency-free SVG bias contour plots.

Output is plain text with fixed float formatting so identical inputs give
identical bytes.
"""

from __future__ import annotations

import math
from html import escape

import numpy as np

from .sensitivity import BiasGrid, orv_general

WIDTH, HEIGHT = 520, 460
LEFT, RIGHT, TOP, BOTTOM = 70, 30, 40, 60
SHADE = "#c9d6ea"
THRESHOLD = "#b2182b"


def _f(v: float) -> str:
    return f"{v:.2f}"


class _Canvas:
    def __init__(self):
        self.items: list[str] = []
        self.w = WIDTH - LEFT - RIGHT
        self.h = HEIGHT - TOP - BOTTOM

    def x(self, p):
        return LEFT + p * self.w

    def y(self, r2):
        return TOP + (1 - r2) * self.h

    def add(self, item: str):
        self.items.append(item)

    def polyline(self, pts, stroke, width=1.0, dash=None):
        if len(pts) < 2:
            return
        d = " ".join(f"{_f(self.x(p))},{_f(self.y(r))}" for p, r in pts)
        extra = f' stroke-dasharray="{dash}"' if dash else ""
        self.add(f'<polyline points="{d}" fill="none" stroke="{stroke}" stroke-width="{width}"{extra}/>')

    def text(self, x, y, s, size=12, anchor="start", extra=""):
        self.add(
            f'<text x="{_f(x)}" y="{_f(y)}" font-size="{size}" text-anchor="{anchor}"{extra}>{escape(s)}</text>'
        )

    def render(self) -> str:
        head = (
            '<?xml version="1.0" encoding="UTF-8"?>\n'
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
            f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif">\n'
            f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="#ffffff"/>\n'
        )
        return head + "\n".join(self.items) + "\n</svg>\n"


def _nice(v: float) -> float:
    if v <= 0:
        return 0.0
    mag = 10 ** math.floor(math.log10(v))
    for step in (1, 2, 2.5, 5, 10):
        if v <= step * mag * 1.0000001:
            return step * mag
    return 10 * mag


def contour_levels(grid: BiasGrid) -> list[float]:
    d = abs(grid.tau_hat - grid.b_star)
    scale = d if d > 0 else math.sqrt(grid.var_w)
    if scale == 0:
        return []
    # with a nonzero threshold its own curve is drawn separately
    mults = (0.25, 0.5, 2, 4) if d > 0 else (0.25, 0.5, 1, 2)
    return sorted({_nice(scale * m) for m in mults} - {0.0})


def _level_curve(level, var_w, c_sigma, upper, n=240):
    """Points where bias == level, solved for r2 along p (closed form)."""
    if var_w <= 0:
        return []
    pts = []
    for p in np.linspace(upper / n, upper, n):
        g = (1 + c_sigma * p / (1 - p)) * p * var_w
        t = level**2 / g
        r2 = t / (1 + t)
        if r2 <= upper:
            pts.append((float(p), float(r2)))
    return pts


def _killer_polygon(grid: BiasGrid):
    """Staircase outline of the killer cells (the region is upper-right closed)."""
    first = grid.boundary()
    cols = np.flatnonzero(first < len(grid.r2))
    if cols.size == 0:
        return []
    step = grid.p[1] - grid.p[0]
    lo, hi = 0.0, float(grid.p[-1])

    def clip(v):
        return min(max(v, lo), hi)

    top = hi
    pts = [(clip(grid.p[cols[0]] - step / 2), top)]
    for j in cols:
        r = clip(grid.r2[first[j]] - step / 2)
        pts.append((clip(grid.p[j] - step / 2), r))
        pts.append((clip(grid.p[j] + step / 2), r))
    pts.append((clip(grid.p[cols[-1]] + step / 2), top))
    return pts


def contour_svg(grid: BiasGrid, benchmarks=(), title: str = "") -> str:
    """Render a bias contour plot.

    ``benchmarks`` is an iterable of ``(label, p_hat, r2_hat)`` overlaid as points.
    """
    cv = _Canvas()
    upper = float(grid.p[-1])

    # plot frame spans [0, 1]; the evaluated lattice stops at ``upper``
    cv.add(
        f'<rect x="{_f(cv.x(0))}" y="{_f(cv.y(1))}" width="{_f(cv.w)}" height="{_f(cv.h)}" '
        'fill="none" stroke="#000000" stroke-width="1"/>'
    )
    poly = _killer_polygon(grid)
    if poly:
        d = " ".join(f"{_f(cv.x(p))},{_f(cv.y(r))}" for p, r in poly)
        cv.add(f'<polygon points="{d}" fill="{SHADE}" stroke="none"/>')

    for level in contour_levels(grid):
        pts = _level_curve(level, grid.var_w, grid.c_sigma, upper)
        cv.polyline(pts, "#555555", 0.8)
        if pts:
            p, r = pts[-1] if pts[-1][1] > 0.02 else pts[len(pts) // 2]
            cv.text(cv.x(p) - 2, cv.y(r) - 3, f"{level:g}", size=9, anchor="end", extra=' fill="#555555"')

    d = abs(grid.tau_hat - grid.b_star)
    if d > 0:
        cv.polyline(_level_curve(d, grid.var_w, grid.c_sigma, upper), THRESHOLD, 1.6, dash="5,3")

    if grid.var_w > 0:
        o = orv_general(grid.tau_hat, grid.b_star, grid.var_w, grid.c_sigma)
        cv.add(
            f'<circle cx="{_f(cv.x(o))}" cy="{_f(cv.y(o))}" r="4" fill="{THRESHOLD}" stroke="#000000" '
            'stroke-width="0.8"/>'
        )
        cv.text(cv.x(o) + 7, cv.y(o) + 4, f"ORV = {o:.2f}", size=11)

    for label, p, r2 in benchmarks:
        x, y = cv.x(min(p, 1.0)), cv.y(min(r2, 1.0))
        cv.add(
            f'<path d="M{_f(x)},{_f(y - 4)} L{_f(x + 4)},{_f(y + 3)} L{_f(x - 4)},{_f(y + 3)} Z" '
            'fill="#000000"/>'
        )
        cv.text(x + 6, y - 4, str(label), size=9)

    for k in range(6):
        t = k / 5
        cv.add(f'<line x1="{_f(cv.x(t))}" y1="{_f(cv.y(0))}" x2="{_f(cv.x(t))}" y2="{_f(cv.y(0) + 5)}" stroke="#000000"/>')
        cv.text(cv.x(t), cv.y(0) + 18, f"{t:.1f}", size=11, anchor="middle")
        cv.add(f'<line x1="{_f(cv.x(0) - 5)}" y1="{_f(cv.y(t))}" x2="{_f(cv.x(0))}" y2="{_f(cv.y(t))}" stroke="#000000"/>')
        cv.text(cv.x(0) - 8, cv.y(t) + 4, f"{t:.1f}", size=11, anchor="end")

    cv.text(LEFT + cv.w / 2, HEIGHT - 15, "proportion of target units omitted (p)", size=12, anchor="middle")
    cv.text(
        18, TOP + cv.h / 2, "R² of unit effects on omission", size=12, anchor="middle",
        extra=f' transform="rotate(-90 18 {_f(TOP + cv.h / 2)})"',
    )
    heading = title or "Bias contours"
    cv.text(LEFT + cv.w / 2, 22, f"{heading} (C_sigma = {grid.c_sigma:g}, b* = {grid.b_star:g})", size=13, anchor="middle")
    return cv.render()
