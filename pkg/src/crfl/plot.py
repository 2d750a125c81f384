"""Dependency-free line charts: a minimal SVG polyline renderer plus
gnuplot-compatible .dat emission.  CSVs remain the artifact of record."""

from __future__ import annotations

import math
from typing import Sequence

from .numerics import format_number

_WIDTH, _HEIGHT = 640, 440
_MARGIN = 60
_PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]


def _finite(values):
    return [v for v in values if math.isfinite(v)]


def write_line_svg(
    path,
    series: Sequence[tuple[str, Sequence[float], Sequence[float]]],
    title: str = "",
    x_label: str = "",
    y_label: str = "",
) -> None:
    """Render (label, xs, ys) series as SVG polylines with bare axes.

    Non-finite points are dropped from the drawing (they still live in the CSV).
    """
    xs_all = _finite([x for _, xs, _ in series for x in xs])
    ys_all = _finite([y for _, _, ys in series for y in ys])
    if not xs_all or not ys_all:
        xs_all, ys_all = [0.0, 1.0], [0.0, 1.0]
    x_lo, x_hi = min(xs_all), max(xs_all)
    y_lo, y_hi = min(ys_all), max(ys_all)
    if x_hi == x_lo:
        x_hi = x_lo + 1.0
    if y_hi == y_lo:
        y_hi = y_lo + 1.0

    def sx(x):
        return _MARGIN + (x - x_lo) / (x_hi - x_lo) * (_WIDTH - 2 * _MARGIN)

    def sy(y):
        return _HEIGHT - _MARGIN - (y - y_lo) / (y_hi - y_lo) * (_HEIGHT - 2 * _MARGIN)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_WIDTH}" height="{_HEIGHT}" '
        f'viewBox="0 0 {_WIDTH} {_HEIGHT}" font-family="monospace" font-size="11">',
        f'<rect width="{_WIDTH}" height="{_HEIGHT}" fill="white"/>',
        f'<line x1="{_MARGIN}" y1="{_HEIGHT - _MARGIN}" x2="{_WIDTH - _MARGIN}" '
        f'y2="{_HEIGHT - _MARGIN}" stroke="black"/>',
        f'<line x1="{_MARGIN}" y1="{_MARGIN}" x2="{_MARGIN}" '
        f'y2="{_HEIGHT - _MARGIN}" stroke="black"/>',
        f'<text x="{_WIDTH / 2:.0f}" y="18" text-anchor="middle">{title}</text>',
        f'<text x="{_WIDTH / 2:.0f}" y="{_HEIGHT - 14}" text-anchor="middle">{x_label}</text>',
        f'<text x="16" y="{_HEIGHT / 2:.0f}" text-anchor="middle" '
        f'transform="rotate(-90 16 {_HEIGHT / 2:.0f})">{y_label}</text>',
        f'<text x="{_MARGIN}" y="{_HEIGHT - _MARGIN + 16}" text-anchor="middle">'
        f"{format_number(x_lo)}</text>",
        f'<text x="{_WIDTH - _MARGIN}" y="{_HEIGHT - _MARGIN + 16}" text-anchor="middle">'
        f"{format_number(x_hi)}</text>",
        f'<text x="{_MARGIN - 6}" y="{_HEIGHT - _MARGIN + 4}" text-anchor="end">'
        f"{format_number(y_lo)}</text>",
        f'<text x="{_MARGIN - 6}" y="{_MARGIN + 4}" text-anchor="end">'
        f"{format_number(y_hi)}</text>",
    ]
    for k, (label, xs, ys) in enumerate(series):
        color = _PALETTE[k % len(_PALETTE)]
        points = " ".join(
            f"{sx(x):.2f},{sy(y):.2f}"
            for x, y in zip(xs, ys)
            if math.isfinite(x) and math.isfinite(y)
        )
        if points:
            parts.append(
                f'<polyline points="{points}" fill="none" stroke="{color}" stroke-width="1.5"/>'
            )
        parts.append(
            f'<text x="{_WIDTH - _MARGIN + 4}" y="{_MARGIN + 14 * k + 10}" fill="{color}">'
            f"{label}</text>"
        )
    parts.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(parts))


def write_dat(path, columns: Sequence[str], rows: Sequence[Sequence[float]]) -> None:
    """gnuplot-friendly whitespace table with a commented header line."""
    with open(path, "w") as fh:
        fh.write("# " + " ".join(columns) + "\n")
        for row in rows:
            fh.write(" ".join(format_number(v) for v in row) + "\n")
