"""Minimal deterministic SVG line plots."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf")


@dataclass(frozen=True)
class PlotStyle:
    title: str = ""
    xlabel: str = ""
    ylabel: str = ""
    width: int = 640
    height: int = 420
    scatter: bool = False
    logy: bool = False
    markers: Sequence[tuple[float, float, str]] = field(default_factory=tuple)


def _num(v: float) -> str:
    return f"{v:.2f}"


def _esc(s: str) -> str:
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def _ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if hi <= lo:
        return [lo]
    raw = (hi - lo) / n
    mag = 10 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 5, 10) if m * mag >= raw), default=raw)
    start = math.ceil(lo / step) * step
    out = []
    v = start
    while v <= hi + 1e-12 * step:
        out.append(0.0 if abs(v) < 1e-12 * step else v)
        v += step
    return out


def emit_svg(series, style: Optional[PlotStyle] = None, path=None) -> str:
    """Render ``series`` (a list of (xs, ys, label)) and optionally write it to ``path``.

    Each series becomes one ``<polyline>`` (or a run of ``<circle>`` elements
    in scatter mode); ``style.markers`` are drawn as hollow circles.
    """
    style = style or PlotStyle()
    if not series:
        raise ValueError("nothing to plot")
    tf = (lambda y: math.log10(y)) if style.logy else (lambda y: y)
    pts = []
    for xs, ys, label in series:
        if len(xs) != len(ys):
            raise ValueError(f"series {label!r}: x and y lengths differ")
        pts.append([(float(x), tf(float(y))) for x, y in zip(xs, ys) if math.isfinite(x) and (not style.logy or y > 0) and math.isfinite(y)])
    allx = [p[0] for s in pts for p in s] + [m[0] for m in style.markers]
    ally = [p[1] for s in pts for p in s] + [tf(m[1]) for m in style.markers]
    if not allx:
        raise ValueError("no finite points")
    x0, x1 = min(allx), max(allx)
    y0, y1 = min(ally), max(ally)
    if x1 == x0:
        x0, x1 = x0 - 0.5, x1 + 0.5
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5
    pad = 0.04 * (y1 - y0)
    y0, y1 = y0 - pad, y1 + pad
    W, H = style.width, style.height
    left, right, top, bottom = 70, 20, 36, 50
    pw, ph = W - left - right, H - top - bottom
    sx = lambda x: left + (x - x0) / (x1 - x0) * pw
    sy = lambda y: top + (1.0 - (y - y0) / (y1 - y0)) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">',
        f'<rect x="0" y="0" width="{W}" height="{H}" fill="white"/>',
        f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
    ]
    for t in _ticks(x0, x1):
        X = sx(t)
        out.append(f'<path d="M{_num(X)} {top + ph} v5" stroke="black"/>')
        out.append(f'<text x="{_num(X)}" y="{top + ph + 18}" font-size="11" text-anchor="middle">{t:.4g}</text>')
    for t in _ticks(y0, y1):
        Y = sy(t)
        lab = f"1e{t:.3g}" if style.logy else f"{t:.4g}"
        out.append(f'<path d="M{left - 5} {_num(Y)} h5" stroke="black"/>')
        out.append(f'<text x="{left - 8}" y="{_num(Y + 4)}" font-size="11" text-anchor="end">{lab}</text>')
    if style.title:
        out.append(f'<text x="{W / 2:.1f}" y="22" font-size="14" text-anchor="middle">{_esc(style.title)}</text>')
    if style.xlabel:
        out.append(f'<text x="{left + pw / 2:.1f}" y="{H - 10}" font-size="12" text-anchor="middle">{_esc(style.xlabel)}</text>')
    if style.ylabel:
        out.append(
            f'<text x="16" y="{top + ph / 2:.1f}" font-size="12" text-anchor="middle" '
            f'transform="rotate(-90 16 {top + ph / 2:.1f})">{_esc(style.ylabel)}</text>'
        )
    for k, (s, (_, _, label)) in enumerate(zip(pts, series)):
        colour = _PALETTE[k % len(_PALETTE)]
        if style.scatter:
            for x, y in s:
                out.append(f'<circle cx="{_num(sx(x))}" cy="{_num(sy(y))}" r="2" fill="{colour}"/>')
        else:
            coords = " ".join(f"{_num(sx(x))},{_num(sy(y))}" for x, y in s)
            out.append(f'<polyline points="{coords}" fill="none" stroke="{colour}" stroke-width="1.5"/>')
        ly = top + 14 + 16 * k
        lx = left + pw - 130
        out.append(f'<line x1="{lx}" y1="{ly}" x2="{lx + 20}" y2="{ly}" stroke="{colour}" stroke-width="2"/>')
        out.append(f'<text x="{lx + 26}" y="{ly + 4}" font-size="11">{_esc(str(label))}</text>')
    for x, y, label in style.markers:
        out.append(
            f'<circle cx="{_num(sx(x))}" cy="{_num(sy(tf(y)))}" r="4" fill="none" stroke="black"><title>{_esc(label)}</title></circle>'
        )
    out.append("</svg>")
    text = "\n".join(out) + "\n"
    if path is not None:
        Path(path).write_text(text)
    return text
