"""Minimal SVG writers for sweep curves and angle scatter plots."""
from __future__ import annotations

from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

PALETTE = {"Random": "#1f77b4", "Uniform": "#2ca02c", "Optimized": "#d62728"}
_FALLBACK = ("#9467bd", "#8c564b", "#e377c2", "#7f7f7f")


class _Axes:
    def __init__(self, x0, y0, w, h, xlim, ylim):
        self.x0, self.y0, self.w, self.h = x0, y0, w, h
        self.xlim, self.ylim = xlim, ylim

    def px(self, x):
        lo, hi = self.xlim
        return self.x0 + (x - lo) / ((hi - lo) or 1.0) * self.w

    def py(self, y):
        lo, hi = self.ylim
        return self.y0 + self.h - (y - lo) / ((hi - lo) or 1.0) * self.h

    def frame(self, title, xlabel, ylabel, xticks, yticks) -> list[str]:
        out = [
            f'<rect x="{self.x0}" y="{self.y0}" width="{self.w}" height="{self.h}" fill="none" stroke="#333"/>',
            f'<text x="{self.x0 + self.w / 2}" y="{self.y0 - 8}" text-anchor="middle" font-size="13">{escape(title)}</text>',
            f'<text x="{self.x0 + self.w / 2}" y="{self.y0 + self.h + 34}" text-anchor="middle" font-size="11">{escape(xlabel)}</text>',
            f'<text x="{self.x0 - 38}" y="{self.y0 + self.h / 2}" text-anchor="middle" font-size="11" '
            f'transform="rotate(-90 {self.x0 - 38} {self.y0 + self.h / 2})">{escape(ylabel)}</text>',
        ]
        for t in xticks:
            x = self.px(t)
            out.append(f'<text x="{x:.1f}" y="{self.y0 + self.h + 15}" text-anchor="middle" font-size="10">{t:g}</text>')
        for t in yticks:
            y = self.py(t)
            out.append(f'<line x1="{self.x0}" x2="{self.x0 + self.w}" y1="{y:.1f}" y2="{y:.1f}" stroke="#ddd"/>')
            out.append(f'<text x="{self.x0 - 5}" y="{y + 3:.1f}" text-anchor="end" font-size="10">{t:g}</text>')
        return out


def _doc(width, height, body) -> str:
    return (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif">\n'
        + "\n".join(body)
        + "\n</svg>\n"
    )


def accuracy_curves(summary: list[dict], path) -> Path:
    """One panel per condition: mean accuracy vs K per regime, shaded ±1 std."""
    conditions = list(dict.fromkeys(s["condition"] for s in summary))
    panel_w, panel_h, pad = 260, 200, 70
    width = pad + len(conditions) * (panel_w + pad)
    height = panel_h + 2 * pad
    all_k = sorted({s["K"] for s in summary}) or [1]
    body = []
    for i, cond in enumerate(conditions):
        ax = _Axes(pad + i * (panel_w + pad), pad - 20, panel_w, panel_h, (min(all_k), max(all_k)), (0.0, 1.0))
        body += ax.frame(getattr(cond, "value", str(cond)), "number of captures K", "test accuracy", all_k, [0, 0.2, 0.4, 0.6, 0.8, 1.0])
        rows = [s for s in summary if s["condition"] == cond]
        regimes = list(dict.fromkeys(s["regime"] for s in rows))
        for j, reg in enumerate(regimes):
            name = getattr(reg, "value", str(reg))
            color = PALETTE.get(name, _FALLBACK[j % len(_FALLBACK)])
            pts = sorted((s["K"], s["mean_accuracy"], s["std_accuracy"]) for s in rows if s["regime"] == reg)
            ks = np.array([p[0] for p in pts], float)
            mu = np.array([p[1] for p in pts])
            sd = np.array([p[2] for p in pts])
            band = [(ax.px(k), ax.py(min(1.0, m + s))) for k, m, s in zip(ks, mu, sd)]
            band += [(ax.px(k), ax.py(max(0.0, m - s))) for k, m, s in zip(ks[::-1], mu[::-1], sd[::-1])]
            body.append(
                f'<polygon points="{" ".join(f"{x:.1f},{y:.1f}" for x, y in band)}" fill="{color}" fill-opacity="0.2" stroke="none"/>'
            )
            line = " ".join(f"{ax.px(k):.1f},{ax.py(m):.1f}" for k, m in zip(ks, mu))
            body.append(f'<polyline points="{line}" fill="none" stroke="{color}" stroke-width="2"/>')
            ly = ax.y0 + 14 + 14 * j
            body.append(f'<text x="{ax.x0 + ax.w - 6}" y="{ly}" text-anchor="end" font-size="10" fill="{color}">{escape(name)}</text>')
    path = Path(path)
    path.write_text(_doc(width, height, body))
    return path


def angle_scatter(points: list[tuple[float, float, int]], path, xlabel: str, ylabel: str, title: str = "") -> Path:
    """Scatter of (x_deg, y_deg, rank) points on a 0-180° square."""
    size, pad = 320, 60
    ax = _Axes(pad, pad, size, size, (0.0, 180.0), (0.0, 180.0))
    body = ax.frame(title, xlabel, ylabel, [0, 45, 90, 135, 180], [0, 45, 90, 135, 180])
    for x, y, rank in points:
        color = _FALLBACK[rank % len(_FALLBACK)] if rank >= 0 else "#333"
        body.append(f'<circle cx="{ax.px(x):.1f}" cy="{ax.py(y):.1f}" r="3" fill="{color}" fill-opacity="0.8"/>')
    path = Path(path)
    path.write_text(_doc(size + 2 * pad, size + 2 * pad, body))
    return path
