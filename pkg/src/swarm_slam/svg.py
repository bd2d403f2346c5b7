"""Minimal SVG renders: the map with one colour per drone, and x-y line charts."""

from __future__ import annotations

from xml.sax.saxutils import escape

import numpy as np

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf")


def _header(w: float, h: float) -> list[str]:
    return [f'<svg xmlns="http://www.w3.org/2000/svg" width="{w:.0f}" height="{h:.0f}" '
            f'viewBox="0 0 {w:.0f} {h:.0f}">', f'<rect width="{w:.0f}" height="{h:.0f}" fill="white"/>']


def render_map(world, gmap, trajectories: dict | None = None, scale: float = 100.0,
               margin: float = 0.3) -> str:
    """Walls in grey, map points and trajectories coloured by drone."""
    x0, y0, x1, y1 = world.bounds
    w, h = (x1 - x0 + 2 * margin) * scale, (y1 - y0 + 2 * margin) * scale

    def px(x, y):
        return (x - x0 + margin) * scale, (y1 + margin - y) * scale

    out = _header(w, h)
    out.append('<g id="walls" stroke="#888" stroke-width="4">')
    for a, b, c, d in world.segments:
        (u1, v1), (u2, v2) = px(a, b), px(c, d)
        out.append(f'<line x1="{u1:.1f}" y1="{v1:.1f}" x2="{u2:.1f}" y2="{v2:.1f}"/>')
    out.append("</g>")
    drones = sorted(set(np.asarray(gmap.drone).tolist()) | set((trajectories or {}).keys()))
    for i in drones:
        colour = PALETTE[i % len(PALETTE)]
        out.append(f'<g id="drone-{i}" fill="{colour}" stroke="{colour}">')
        pts = gmap.points[gmap.drone == i]
        for x, y in pts:
            u, v = px(x, y)
            out.append(f'<circle cx="{u:.1f}" cy="{v:.1f}" r="1.2" stroke="none"/>')
        if trajectories and i in trajectories and len(trajectories[i]):
            path = " ".join("{:.1f},{:.1f}".format(*px(x, y)) for x, y in trajectories[i])
            out.append(f'<polyline points="{path}" fill="none" stroke-width="1" opacity="0.6"/>')
        out.append("</g>")
    out.append("</svg>")
    return "\n".join(out) + "\n"


def render_chart(x, series: dict, title: str, x_label: str, y_label: str, log_y: bool = False,
                 width: float = 640, height: float = 400) -> str:
    """Line chart of ``{name: y values}`` over ``x``; ``None`` entries are skipped."""
    x = np.asarray(x, dtype=float)
    ml, mr, mt, mb = 70, 20, 40, 50
    ys = [np.array([np.nan if v is None else v for v in vals], dtype=float) for vals in series.values()]
    allv = np.concatenate([y[np.isfinite(y)] for y in ys]) if ys else np.array([1.0])
    if log_y:
        allv = allv[allv > 0]
    lo, hi = (float(allv.min()), float(allv.max())) if len(allv) else (0.0, 1.0)
    f = np.log10 if log_y else (lambda v: v)
    flo, fhi = f(lo), f(hi)
    if fhi <= flo:
        fhi = flo + 1.0
    xlo, xhi = float(x.min()), float(x.max()) if x.max() > x.min() else float(x.min()) + 1

    def px(a, b):
        return (ml + (a - xlo) / (xhi - xlo) * (width - ml - mr),
                height - mb - (f(b) - flo) / (fhi - flo) * (height - mt - mb))

    out = _header(width, height)
    out.append(f'<text x="{width / 2:.0f}" y="24" text-anchor="middle" font-size="16">{escape(title)}</text>')
    out.append(f'<line x1="{ml}" y1="{height - mb}" x2="{width - mr}" y2="{height - mb}" stroke="black"/>')
    out.append(f'<line x1="{ml}" y1="{mt}" x2="{ml}" y2="{height - mb}" stroke="black"/>')
    out.append(f'<text x="{width / 2:.0f}" y="{height - 12:.0f}" text-anchor="middle" '
               f'font-size="12">{escape(x_label)}</text>')
    out.append(f'<text x="16" y="{height / 2:.0f}" font-size="12" transform="rotate(-90 16 {height / 2:.0f})" '
               f'text-anchor="middle">{escape(y_label)}</text>')
    for v, label in ((lo, f"{lo:.3g}"), (hi, f"{hi:.3g}")):
        _, yy = px(xlo, v)
        out.append(f'<text x="{ml - 6}" y="{yy + 4:.1f}" text-anchor="end" font-size="10">{label}</text>')
    for v in (xlo, xhi):
        xx, _ = px(v, lo)
        out.append(f'<text x="{xx:.1f}" y="{height - mb + 14}" text-anchor="middle" font-size="10">{v:g}</text>')
    for k, (name, y) in enumerate(zip(series, ys)):
        colour = PALETTE[k % len(PALETTE)]
        ok = np.isfinite(y) & ((y > 0) if log_y else True)
        pts = " ".join("{:.1f},{:.1f}".format(*px(a, b)) for a, b in zip(x[ok], y[ok]))
        out.append(f'<polyline id="series-{k}" points="{pts}" fill="none" stroke="{colour}" stroke-width="1.5"/>')
        out.append(f'<text x="{width - mr - 4}" y="{mt + 14 * (k + 1)}" text-anchor="end" font-size="11" '
                   f'fill="{colour}">{escape(name)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
