"""Minimal hand-emitted SVG line charts; no plotting dependency.

One panel per channel: the context series in grey, each hypothesis as a
colored polyline over the horizon, with simple axis ticks.
"""

from __future__ import annotations

import numpy as np

WIDTH = 900
PANEL_H = 220
MARGIN = 48


def _path(points) -> str:
    return " ".join(f"{x:.2f},{y:.2f}" for x, y in points)


def forecast_chart_svg(context: np.ndarray, hypotheses: np.ndarray) -> str:
    """Render context (L, D) plus hypotheses (K, H, D) as an SVG document."""
    context = np.asarray(context, dtype=np.float64)
    hypotheses = np.asarray(hypotheses, dtype=np.float64)
    length, d = context.shape
    k, horizon, _ = hypotheses.shape
    total_h = MARGIN + d * PANEL_H
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" '
        f'height="{total_h}" font-family="monospace" font-size="11">'
    ]
    x_span = length + horizon - 1
    plot_w = WIDTH - 2 * MARGIN

    for ch in range(d):
        top = MARGIN // 2 + ch * PANEL_H
        bottom = top + PANEL_H - MARGIN
        series = [context[:, ch]] + [hypotheses[j, :, ch] for j in range(k)]
        lo = min(s.min() for s in series)
        hi = max(s.max() for s in series)
        if hi <= lo:
            hi = lo + 1.0
        pad = 0.05 * (hi - lo)
        lo, hi = lo - pad, hi + pad

        def sx(t):
            return MARGIN + plot_w * t / x_span

        def sy(v):
            return bottom - (bottom - top) * (v - lo) / (hi - lo)

        out.append(
            f'<line x1="{MARGIN}" y1="{bottom}" x2="{WIDTH - MARGIN}" y2="{bottom}" stroke="#444"/>'
        )
        out.append(f'<line x1="{MARGIN}" y1="{top}" x2="{MARGIN}" y2="{bottom}" stroke="#444"/>')
        for v in np.linspace(lo, hi, 5):
            y = sy(v)
            out.append(f'<line x1="{MARGIN - 4}" y1="{y:.2f}" x2="{MARGIN}" y2="{y:.2f}" stroke="#444"/>')
            out.append(f'<text x="4" y="{y + 4:.2f}">{v:.3g}</text>')
        for t in np.linspace(0, x_span, 5):
            x = sx(t)
            out.append(f'<line x1="{x:.2f}" y1="{bottom}" x2="{x:.2f}" y2="{bottom + 4}" stroke="#444"/>')
            out.append(f'<text x="{x - 8:.2f}" y="{bottom + 16}">{t:.0f}</text>')
        out.append(f'<text x="{MARGIN}" y="{top - 4}">channel {ch}</text>')

        ctx_pts = [(sx(t), sy(context[t, ch])) for t in range(length)]
        out.append(f'<polyline points="{_path(ctx_pts)}" fill="none" stroke="#555" stroke-width="1.5"/>')
        for j in range(k):
            hue = int(360 * j / max(1, k))
            pts = [ctx_pts[-1]] + [(sx(length + t), sy(hypotheses[j, t, ch])) for t in range(horizon)]
            out.append(
                f'<polyline points="{_path(pts)}" fill="none" '
                f'stroke="hsl({hue},70%,45%)" stroke-width="1"/>'
            )
    out.append("</svg>")
    return "\n".join(out)


def write_forecast_chart(path, context, hypotheses) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write(forecast_chart_svg(context, hypotheses))
        fh.write("\n")
