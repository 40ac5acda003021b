"""Tiny SVG line and bar charts (no plotting dependency)."""

from __future__ import annotations

from html import escape
from typing import Optional, Sequence

W, H = 640, 400
LEFT, RIGHT, TOP, BOTTOM = 70, 160, 40, 50
PALETTE = ("#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
           "#bcbd22", "#17becf")


def _nice_ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if hi <= lo:
        hi = lo + 1.0
    step = (hi - lo) / n
    return [lo + i * step for i in range(n + 1)]


def _fmt_tick(v: float) -> str:
    if abs(v) >= 1000:
        return f"{v:,.0f}"
    if abs(v) >= 10:
        return f"{v:.0f}"
    return f"{v:.2f}"


def _frame(title: str, xlabel: str, ylabel: str) -> list[str]:
    return [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="11">',
        f'<rect width="{W}" height="{H}" fill="white"/>',
        f'<text x="{W / 2 - RIGHT / 2}" y="20" text-anchor="middle" font-size="14">{escape(title)}</text>',
        f'<text x="{LEFT + (W - LEFT - RIGHT) / 2}" y="{H - 10}" text-anchor="middle">{escape(xlabel)}</text>',
        f'<text x="15" y="{TOP + (H - TOP - BOTTOM) / 2}" text-anchor="middle" '
        f'transform="rotate(-90 15 {TOP + (H - TOP - BOTTOM) / 2})">{escape(ylabel)}</text>',
    ]


def _y_axis(parts: list[str], ylo: float, yhi: float, ymap) -> None:
    x0, x1 = LEFT, W - RIGHT
    for v in _nice_ticks(ylo, yhi):
        y = ymap(v)
        parts.append(f'<line x1="{x0}" y1="{y:.1f}" x2="{x1}" y2="{y:.1f}" stroke="#ddd"/>')
        parts.append(f'<text x="{x0 - 5}" y="{y + 4:.1f}" text-anchor="end">{_fmt_tick(v)}</text>')
    parts.append(f'<line x1="{x0}" y1="{TOP}" x2="{x0}" y2="{H - BOTTOM}" stroke="black"/>')
    parts.append(f'<line x1="{x0}" y1="{H - BOTTOM}" x2="{x1}" y2="{H - BOTTOM}" stroke="black"/>')


def line_chart_svg(series: dict[str, Sequence[tuple[float, float]]], title: str = "", xlabel: str = "",
                   ylabel: str = "") -> str:
    """One polyline with markers per series; points are ``(x, y)``."""
    pts = [p for s in series.values() for p in s]
    parts = _frame(title, xlabel, ylabel)
    if not pts:
        parts.append(f'<text x="{W / 2}" y="{H / 2}" text-anchor="middle">no data</text></svg>')
        return "\n".join(parts)
    xs = sorted({p[0] for p in pts})
    ylo, yhi = min(p[1] for p in pts), max(p[1] for p in pts)
    pad = (yhi - ylo) * 0.05 or abs(yhi) * 0.05 or 1.0
    ylo, yhi = ylo - pad, yhi + pad
    xlo, xhi = xs[0], xs[-1] if xs[-1] > xs[0] else xs[0] + 1

    def xmap(v):
        return LEFT + (v - xlo) / (xhi - xlo) * (W - LEFT - RIGHT)

    def ymap(v):
        return H - BOTTOM - (v - ylo) / (yhi - ylo) * (H - TOP - BOTTOM)

    _y_axis(parts, ylo, yhi, ymap)
    for x in xs:
        parts.append(f'<text x="{xmap(x):.1f}" y="{H - BOTTOM + 15}" text-anchor="middle">{_fmt_tick(x)}</text>')
    for i, (name, s) in enumerate(series.items()):
        color = PALETTE[i % len(PALETTE)]
        s = sorted(s)
        coords = " ".join(f"{xmap(x):.1f},{ymap(y):.1f}" for x, y in s)
        parts.append(f'<polyline points="{coords}" fill="none" stroke="{color}" stroke-width="2"/>')
        for x, y in s:
            parts.append(f'<circle cx="{xmap(x):.1f}" cy="{ymap(y):.1f}" r="3" fill="{color}"/>')
        ly = TOP + 15 * i
        parts.append(f'<rect x="{W - RIGHT + 10}" y="{ly}" width="10" height="10" fill="{color}"/>')
        parts.append(f'<text x="{W - RIGHT + 25}" y="{ly + 9}">{escape(name)}</text>')
    parts.append("</svg>")
    return "\n".join(parts)


def bar_chart_svg(bars: Sequence[tuple[str, float]], title: str = "", ylabel: str = "",
                  ymax: Optional[float] = None) -> str:
    parts = _frame(title, "", ylabel)
    if not bars:
        parts.append(f'<text x="{W / 2}" y="{H / 2}" text-anchor="middle">no data</text></svg>')
        return "\n".join(parts)
    top = ymax if ymax is not None else max(v for _, v in bars) * 1.1 or 1.0

    def ymap(v):
        return H - BOTTOM - v / top * (H - TOP - BOTTOM)

    _y_axis(parts, 0.0, top, ymap)
    slot = (W - LEFT - RIGHT) / len(bars)
    for i, (name, v) in enumerate(bars):
        x = LEFT + i * slot + slot * 0.15
        y = ymap(v)
        color = PALETTE[i % len(PALETTE)]
        parts.append(f'<rect x="{x:.1f}" y="{y:.1f}" width="{slot * 0.7:.1f}" height="{H - BOTTOM - y:.1f}" '
                     f'fill="{color}"/>')
        parts.append(f'<text x="{x + slot * 0.35:.1f}" y="{y - 4:.1f}" text-anchor="middle">{v:.2f}</text>')
        ly = TOP + 15 * i
        parts.append(f'<rect x="{W - RIGHT + 10}" y="{ly}" width="10" height="10" fill="{color}"/>')
        parts.append(f'<text x="{W - RIGHT + 25}" y="{ly + 9}">{escape(name)}</text>')
    parts.append("</svg>")
    return "\n".join(parts)
