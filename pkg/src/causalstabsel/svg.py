"""Minimal two-panel line charts (mean TPR and mean FDR against alpha) as SVG."""

from __future__ import annotations

from collections import defaultdict
from xml.sax.saxutils import escape

PALETTE = ("#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02", "#a6761d", "#666666")
WIDTH, HEIGHT = 980, 380
PANEL_W, PANEL_H = 320, 260
MARGIN_L, MARGIN_T = 60, 50
GAP = 90


def _panel(x0, title, series, key, diagonal, x_max):
    out = [f'<g transform="translate({x0},{MARGIN_T})">',
           f'<rect x="0" y="0" width="{PANEL_W}" height="{PANEL_H}" fill="none" stroke="#000"/>',
           f'<text x="{PANEL_W / 2}" y="-12" text-anchor="middle" font-size="14">{escape(title)}</text>']

    def px(a):
        return PANEL_W * a / x_max

    def py(v):
        return PANEL_H * (1 - v)

    for i in range(6):
        v = i / 5
        out.append(f'<text x="-8" y="{py(v) + 4:.2f}" text-anchor="end" font-size="11">{v:.1f}</text>')
        a = x_max * i / 5
        out.append(f'<text x="{px(a):.2f}" y="{PANEL_H + 16}" text-anchor="middle" font-size="11">{a:.2f}</text>')
    out.append(f'<text x="{PANEL_W / 2}" y="{PANEL_H + 34}" text-anchor="middle" font-size="12">nominal alpha</text>')
    if diagonal:
        top = min(x_max, 1.0)
        out.append(f'<line x1="0" y1="{py(0)}" x2="{px(top):.2f}" y2="{py(top):.2f}" '
                   'stroke="#888" stroke-dasharray="5,4"/>')
    for color, (method, pts) in zip(_cycle(PALETTE), series.items()):
        pts = sorted(pts)
        coords = " ".join(f"{px(a):.2f},{py(getattr(r, key)):.2f}" for a, r in pts)
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="2" points="{coords}" '
                   f'data-method="{escape(method)}"/>')
        for a, r in pts:
            val = getattr(r, key)
            out.append(f'<circle cx="{px(a):.2f}" cy="{py(val):.2f}" r="2.5" fill="{color}" '
                       f'data-method="{escape(method)}" data-alpha="{a!r}" data-value="{val!r}"/>')
    out.append("</g>")
    return out


def _cycle(seq):
    while True:
        yield from seq


def results_svg(rows, title: str = "") -> str:
    """SVG of mean TPR and mean FDR per method; the FDR panel has the y = alpha diagonal."""
    series = defaultdict(list)
    for r in rows:
        series[r.method].append((r.alpha, r))
    x_max = max((r.alpha for r in rows), default=0.5) or 0.5
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
             f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif">',
             '<rect width="100%" height="100%" fill="#fff"/>']
    if title:
        parts.append(f'<text x="{WIDTH / 2}" y="20" text-anchor="middle" font-size="15">{escape(title)}</text>')
    parts += _panel(MARGIN_L, "Mean TPR", series, "mean_tpr", False, x_max)
    parts += _panel(MARGIN_L + PANEL_W + GAP, "Mean FDR", series, "mean_fdr", True, x_max)
    lx = MARGIN_L + 2 * PANEL_W + GAP + 12
    for i, (color, method) in enumerate(zip(_cycle(PALETTE), series)):
        y = MARGIN_T + 14 + 18 * i
        parts.append(f'<line x1="{lx}" y1="{y}" x2="{lx + 16}" y2="{y}" stroke="{color}" stroke-width="2"/>')
        parts.append(f'<text x="{lx + 20}" y="{y + 4}" font-size="11">{escape(method)}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
