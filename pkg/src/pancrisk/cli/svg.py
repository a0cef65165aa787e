"""Minimal static SVG rendering of Kaplan-Meier step curves."""
from __future__ import annotations

import math
from xml.sax.saxutils import escape

COLORS = ("#c0392b", "#2471a3", "#1e8449", "#7d3c98", "#b9770e", "#566573")
PANEL_W, PANEL_H = 360, 260
MARGIN = dict(left=48, right=16, top=34, bottom=40)


def _ticks(hi, n=5):
    step = max(hi / n, 1e-9)
    mag = 10.0 ** math.floor(math.log10(step))
    for m in (1, 2, 2.5, 5, 10):
        if m * mag >= step:
            step = m * mag
            break
    out, v = [], 0.0
    while v <= hi + 1e-9:
        out.append(v)
        v += step
    return out


def step_points(curve, t_max):
    """Vertices of a right-continuous step function starting at S(0) = 1."""
    pts = [(0.0, 1.0)]
    s_prev = 1.0
    for t, s in zip(curve.times, curve.survival):
        pts.append((float(t), s_prev))
        pts.append((float(t), float(s)))
        s_prev = float(s)
    pts.append((t_max, s_prev))
    return pts


def render_panel(title, curves, x0, t_max):
    """``curves`` maps group label -> KMCurve."""
    w = PANEL_W - MARGIN["left"] - MARGIN["right"]
    h = PANEL_H - MARGIN["top"] - MARGIN["bottom"]
    ox, oy = x0 + MARGIN["left"], MARGIN["top"]

    def sx(t):
        return ox + w * t / t_max

    def sy(s):
        return oy + h * (1.0 - s)

    parts = [f'<text x="{x0 + PANEL_W / 2:.1f}" y="18" text-anchor="middle" font-size="12">{escape(title)}</text>',
             f'<rect x="{ox}" y="{oy}" width="{w}" height="{h}" fill="none" stroke="#000"/>']
    for t in _ticks(t_max):
        parts.append(f'<line x1="{sx(t):.1f}" y1="{oy + h}" x2="{sx(t):.1f}" y2="{oy + h + 4}" stroke="#000"/>')
        parts.append(f'<text x="{sx(t):.1f}" y="{oy + h + 15}" text-anchor="middle" font-size="9">{t:g}</text>')
    for s in (0.0, 0.25, 0.5, 0.75, 1.0):
        parts.append(f'<line x1="{ox - 4}" y1="{sy(s):.1f}" x2="{ox}" y2="{sy(s):.1f}" stroke="#000"/>')
        parts.append(f'<text x="{ox - 6}" y="{sy(s) + 3:.1f}" text-anchor="end" font-size="9">{s:g}</text>')
    parts.append(f'<text x="{ox + w / 2:.1f}" y="{oy + h + 30}" text-anchor="middle" font-size="10">months</text>')
    for i, (label, curve) in enumerate(curves.items()):
        color = COLORS[i % len(COLORS)]
        pts = " ".join(f"{sx(t):.2f},{sy(s):.2f}" for t, s in step_points(curve, t_max))
        parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        parts.append(f'<text x="{ox + w - 4}" y="{oy + 12 + 12 * i}" text-anchor="end" font-size="10" '
                     f'fill="{color}">{escape(label)}</text>')
    return "\n".join(parts)


def render_km(panels):
    """``panels``: list of (title, {label: KMCurve}). Panels are laid out left to right."""
    t_max = max((float(c.times[-1]) for _, curves in panels for c in curves.values() if len(c.times)),
                default=1.0)
    width = PANEL_W * max(len(panels), 1)
    body = [render_panel(title, curves, i * PANEL_W, t_max) for i, (title, curves) in enumerate(panels)]
    return (f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{PANEL_H}" '
            f'viewBox="0 0 {width} {PANEL_H}" font-family="sans-serif">\n'
            f'<rect width="{width}" height="{PANEL_H}" fill="#fff"/>\n' + "\n".join(body) + "\n</svg>\n")
