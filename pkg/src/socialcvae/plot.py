"""Static SVG rendering of a scene with sampled futures."""
from __future__ import annotations

from typing import Sequence
from xml.sax.saxutils import escape

import numpy as np

from .scene import Scene

PX_PER_M = 30.0
MARGIN_M = 1.0
SAMPLE_COLOR = "#d62728"
PAST_COLOR = "#1f77b4"
TRUTH_COLOR = "#2ca02c"


def _f(v: float) -> str:
    return f"{v:.2f}"


def render_svg(scene: Scene, samples: Sequence[np.ndarray] = ()) -> str:
    """Past of every agent solid, target ground-truth future dashed, samples translucent.

    North is up; gridlines every metre.
    """
    pts = [tr.as_array() for tr in scene.tracks] + [np.asarray(s) for s in samples]
    allxy = np.concatenate(pts)
    x0 = np.floor(allxy[:, 0].min() - MARGIN_M)
    x1 = np.ceil(allxy[:, 0].max() + MARGIN_M)
    y0 = np.floor(allxy[:, 1].min() - MARGIN_M)
    y1 = np.ceil(allxy[:, 1].max() + MARGIN_M)
    legend_h = 70.0
    width = (x1 - x0) * PX_PER_M
    height = (y1 - y0) * PX_PER_M + legend_h

    def sx(x):
        return (x - x0) * PX_PER_M

    def sy(y):
        return legend_h + (y1 - y) * PX_PER_M

    def poly(xy, **attrs):
        coords = " ".join(f"{_f(sx(a))},{_f(sy(b))}" for a, b in xy)
        extra = " ".join(f'{k.replace("_", "-")}="{v}"' for k, v in attrs.items())
        return f'<polyline points="{coords}" fill="none" {extra}/>'

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{_f(width)}" height="{_f(height)}" '
           f'viewBox="0 0 {_f(width)} {_f(height)}">',
           f"<title>{escape(scene.scene_id)}</title>",
           '<rect x="0" y="0" width="100%" height="100%" fill="white"/>',
           '<g stroke="#dddddd" stroke-width="0.5">']
    for gx in np.arange(x0, x1 + 0.5):
        out.append(f'<line x1="{_f(sx(gx))}" y1="{_f(sy(y1))}" x2="{_f(sx(gx))}" y2="{_f(sy(y0))}"/>')
    for gy in np.arange(y0, y1 + 0.5):
        out.append(f'<line x1="{_f(sx(x0))}" y1="{_f(sy(gy))}" x2="{_f(sx(x1))}" y2="{_f(sy(gy))}"/>')
    out.append("</g>")

    tau = scene.tau
    for i, tr in enumerate(scene.tracks):
        xy = tr.as_array()
        w = "2.5" if i == scene.target_index else "1.5"
        out.append(poly(xy[:tau], stroke=PAST_COLOR, stroke_width=w))
    target = scene.target.as_array()
    for s in samples:
        s = np.concatenate([target[tau - 1:tau], np.asarray(s)])
        out.append(poly(s, stroke=SAMPLE_COLOR, stroke_width="1.5", stroke_opacity="0.35"))
    out.append(poly(target[tau - 1:], stroke=TRUTH_COLOR, stroke_width="2", stroke_dasharray="6,4"))

    legend = [("past", PAST_COLOR, ""), ("ground truth", TRUTH_COLOR, ' stroke-dasharray="6,4"'),
              (f"samples (K={len(samples)})", SAMPLE_COLOR, ' stroke-opacity="0.35"')]
    for j, (label, color, style) in enumerate(legend):
        yy = 15 + 18 * j
        out.append(f'<line x1="10" y1="{yy}" x2="40" y2="{yy}" stroke="{color}" stroke-width="2"{style}/>')
        out.append(f'<text x="48" y="{yy + 4}" font-family="sans-serif" font-size="12">{escape(label)}</text>')
    out.append(f'<text x="{_f(width - 10)}" y="15" font-family="sans-serif" font-size="10" '
               f'text-anchor="end">grid 1 m</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
