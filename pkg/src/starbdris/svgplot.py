"""Minimal static SVG line charts (mean lines with +/- std bands).

No external plotting dependency: experiments only need deterministic
polyline charts, and keeping the writer local makes output bytes stable
across environments (no timestamps, no library version strings).
"""
from __future__ import annotations

import math

WIDTH, HEIGHT = 720, 440
MARGIN_L, MARGIN_R, MARGIN_T, MARGIN_B = 70, 20, 40, 55
PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#8c564b"]


def _ticks(lo: float, hi: float, count: int = 6) -> list:
    if hi <= lo:
        hi = lo + 1.0
    raw = (hi - lo) / max(count - 1, 1)
    mag = 10.0 ** math.floor(math.log10(raw))
    for mult in (1.0, 2.0, 2.5, 5.0, 10.0):
        if raw <= mult * mag:
            step = mult * mag
            break
    start = math.ceil(lo / step) * step
    ticks = []
    t = start
    while t <= hi + 1e-9 * step:
        ticks.append(round(t, 10))
        t += step
    return ticks


def _fmt(x: float) -> str:
    return f"{x:.6g}"


def line_chart(title: str, x_label: str, y_label: str, series: list) -> str:
    """Render series [{label, x, mean, std?}] to an SVG string.

    Each series contributes one <polyline> for its mean curve and, when a
    std array is given, a translucent band polygon behind it.
    """
    xs = [x for s in series for x in s["x"]]
    ys = []
    for s in series:
        std = s.get("std") or [0.0] * len(s["mean"])
        ys += [m - d for m, d in zip(s["mean"], std)]
        ys += [m + d for m, d in zip(s["mean"], std)]
    if not xs:
        xs, ys = [0.0, 1.0], [0.0, 1.0]
    x_lo, x_hi = min(xs), max(xs)
    y_lo, y_hi = min(ys), max(ys)
    if x_hi == x_lo:
        x_lo, x_hi = x_lo - 0.5, x_hi + 0.5
    if y_hi == y_lo:
        y_lo, y_hi = y_lo - 0.5, y_hi + 0.5
    pad = 0.05 * (y_hi - y_lo)
    y_lo, y_hi = y_lo - pad, y_hi + pad

    pw = WIDTH - MARGIN_L - MARGIN_R
    ph = HEIGHT - MARGIN_T - MARGIN_B

    def px(x):
        return MARGIN_L + pw * (x - x_lo) / (x_hi - x_lo)

    def py(y):
        return MARGIN_T + ph * (1.0 - (y - y_lo) / (y_hi - y_lo))

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" '
           f'height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">',
           f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
           f'<text x="{WIDTH / 2}" y="22" text-anchor="middle" '
           f'font-family="sans-serif" font-size="15">{title}</text>']
    # axes, ticks, grid
    out.append(f'<rect x="{MARGIN_L}" y="{MARGIN_T}" width="{pw}" height="{ph}" '
               'fill="none" stroke="#444"/>')
    for t in _ticks(x_lo, x_hi):
        if not (x_lo <= t <= x_hi):
            continue
        out.append(f'<line x1="{_fmt(px(t))}" y1="{MARGIN_T + ph}" '
                   f'x2="{_fmt(px(t))}" y2="{MARGIN_T + ph + 5}" stroke="#444"/>')
        out.append(f'<text x="{_fmt(px(t))}" y="{MARGIN_T + ph + 20}" '
                   f'text-anchor="middle" font-family="sans-serif" '
                   f'font-size="11">{_fmt(t)}</text>')
    for t in _ticks(y_lo, y_hi):
        if not (y_lo <= t <= y_hi):
            continue
        out.append(f'<line x1="{MARGIN_L - 5}" y1="{_fmt(py(t))}" '
                   f'x2="{MARGIN_L}" y2="{_fmt(py(t))}" stroke="#444"/>')
        out.append(f'<line x1="{MARGIN_L}" y1="{_fmt(py(t))}" '
                   f'x2="{MARGIN_L + pw}" y2="{_fmt(py(t))}" '
                   'stroke="#ddd" stroke-width="0.5"/>')
        out.append(f'<text x="{MARGIN_L - 9}" y="{_fmt(py(t) + 4)}" '
                   f'text-anchor="end" font-family="sans-serif" '
                   f'font-size="11">{_fmt(t)}</text>')
    out.append(f'<text x="{MARGIN_L + pw / 2}" y="{HEIGHT - 12}" '
               f'text-anchor="middle" font-family="sans-serif" '
               f'font-size="13">{x_label}</text>')
    out.append(f'<text x="18" y="{MARGIN_T + ph / 2}" text-anchor="middle" '
               f'font-family="sans-serif" font-size="13" '
               f'transform="rotate(-90 18 {MARGIN_T + ph / 2})">{y_label}</text>')

    for i, s in enumerate(series):
        color = PALETTE[i % len(PALETTE)]
        std = s.get("std")
        if std is not None and any(d > 0.0 for d in std):
            upper = [(px(x), py(m + d)) for x, m, d in zip(s["x"], s["mean"], std)]
            lower = [(px(x), py(m - d)) for x, m, d in zip(s["x"], s["mean"], std)]
            pts = " ".join(f"{_fmt(x)},{_fmt(y)}" for x, y in upper + lower[::-1])
            out.append(f'<polygon points="{pts}" fill="{color}" opacity="0.15"/>')
        pts = " ".join(f"{_fmt(px(x))},{_fmt(py(m))}"
                       for x, m in zip(s["x"], s["mean"]))
        out.append(f'<polyline points="{pts}" fill="none" stroke="{color}" '
                   f'stroke-width="2"/>')
        out.append(f'<circle cx="{_fmt(WIDTH - 170)}" cy="{_fmt(MARGIN_T + 16 + 18 * i)}" '
                   f'r="4" fill="{color}"/>')
        out.append(f'<text x="{WIDTH - 160}" y="{MARGIN_T + 20 + 18 * i}" '
                   f'font-family="sans-serif" font-size="12">{s["label"]}</text>')
    out.append("</svg>")
    return "\n".join(out)
