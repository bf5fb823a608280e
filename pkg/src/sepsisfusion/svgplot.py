"""Dependency-free, byte-deterministic SVG charts.

Every plot is a self-contained SVG document with axes, tick labels, a
title, and numeric annotations. All coordinates are formatted with a fixed
precision so identical inputs produce identical bytes.
"""

from __future__ import annotations

from typing import Optional, Sequence

W, H = 640, 480
ML, MR, MT, MB = 70, 20, 40, 50  # margins
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf")


def _fmt(x: float) -> str:
    return f"{x:.2f}"


def _fmt_tick(x: float) -> str:
    return f"{x:.4g}"


def _nice_ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if hi <= lo:
        hi = lo + 1.0
    span = hi - lo
    step = span / (n - 1)
    return [lo + i * step for i in range(n)]


class _Canvas:
    def __init__(self, x_range, y_range, title, xlabel, ylabel):
        self.x0, self.x1 = x_range
        self.y0, self.y1 = y_range
        if self.x1 <= self.x0:
            self.x1 = self.x0 + 1.0
        if self.y1 <= self.y0:
            self.y1 = self.y0 + 1.0
        self.parts: list[str] = []
        self.parts.append(
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" '
            f'viewBox="0 0 {W} {H}">'
        )
        self.parts.append(f'<rect width="{W}" height="{H}" fill="white"/>')
        self.parts.append(
            f'<text x="{W/2:.0f}" y="24" text-anchor="middle" '
            f'font-family="sans-serif" font-size="15" font-weight="bold">{_esc(title)}</text>'
        )
        # axes
        self.parts.append(
            f'<line x1="{ML}" y1="{H-MB}" x2="{W-MR}" y2="{H-MB}" stroke="black"/>'
        )
        self.parts.append(f'<line x1="{ML}" y1="{MT}" x2="{ML}" y2="{H-MB}" stroke="black"/>')
        for tx in _nice_ticks(self.x0, self.x1):
            px = self.px(tx)
            self.parts.append(
                f'<line x1="{_fmt(px)}" y1="{H-MB}" x2="{_fmt(px)}" y2="{H-MB+5}" stroke="black"/>'
            )
            self.parts.append(
                f'<text x="{_fmt(px)}" y="{H-MB+20}" text-anchor="middle" '
                f'font-family="sans-serif" font-size="11">{_fmt_tick(tx)}</text>'
            )
        for ty in _nice_ticks(self.y0, self.y1):
            py = self.py(ty)
            self.parts.append(
                f'<line x1="{ML-5}" y1="{_fmt(py)}" x2="{ML}" y2="{_fmt(py)}" stroke="black"/>'
            )
            self.parts.append(
                f'<text x="{ML-8}" y="{_fmt(py+4)}" text-anchor="end" '
                f'font-family="sans-serif" font-size="11">{_fmt_tick(ty)}</text>'
            )
        self.parts.append(
            f'<text x="{(ML+W-MR)/2:.0f}" y="{H-12}" text-anchor="middle" '
            f'font-family="sans-serif" font-size="12">{_esc(xlabel)}</text>'
        )
        self.parts.append(
            f'<text x="18" y="{(MT+H-MB)/2:.0f}" text-anchor="middle" '
            f'font-family="sans-serif" font-size="12" '
            f'transform="rotate(-90 18 {(MT+H-MB)/2:.0f})">{_esc(ylabel)}</text>'
        )

    def px(self, x: float) -> float:
        return ML + (x - self.x0) / (self.x1 - self.x0) * (W - ML - MR)

    def py(self, y: float) -> float:
        return H - MB - (y - self.y0) / (self.y1 - self.y0) * (H - MT - MB)

    def polyline(self, xs, ys, color: str, width: float = 1.8, dash: str = ""):
        pts = " ".join(f"{_fmt(self.px(x))},{_fmt(self.py(y))}" for x, y in zip(xs, ys))
        dash_attr = f' stroke-dasharray="{dash}"' if dash else ""
        self.parts.append(
            f'<polyline points="{pts}" fill="none" stroke="{color}" '
            f'stroke-width="{width}"{dash_attr}/>'
        )

    def marker(self, x: float, y: float, color: str, label: str = ""):
        px, py = self.px(x), self.py(y)
        self.parts.append(
            f'<circle cx="{_fmt(px)}" cy="{_fmt(py)}" r="5" fill="{color}" '
            f'stroke="black" stroke-width="0.8"/>'
        )
        if label:
            self.parts.append(
                f'<text x="{_fmt(px+8)}" y="{_fmt(py-6)}" font-family="sans-serif" '
                f'font-size="11">{_esc(label)}</text>'
            )

    def legend(self, entries: Sequence[tuple[str, str]]):
        x = W - MR - 190
        y = MT + 10
        for i, (label, color) in enumerate(entries):
            yy = y + i * 16
            self.parts.append(
                f'<line x1="{x}" y1="{yy}" x2="{x+22}" y2="{yy}" stroke="{color}" '
                f'stroke-width="2.5"/>'
            )
            self.parts.append(
                f'<text x="{x+28}" y="{yy+4}" font-family="sans-serif" '
                f'font-size="11">{_esc(label)}</text>'
            )

    def annotation(self, text: str, slot: int = 0):
        self.parts.append(
            f'<text x="{ML+10}" y="{MT+18+slot*16}" font-family="sans-serif" '
            f'font-size="12">{_esc(text)}</text>'
        )

    def render(self) -> str:
        return "\n".join(self.parts + ["</svg>"]) + "\n"


def _esc(s: str) -> str:
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def line_chart(
    series: Sequence[tuple[str, Sequence[float], Sequence[float]]],
    title: str,
    xlabel: str,
    ylabel: str,
    annotations: Sequence[str] = (),
) -> str:
    xs_all = [x for _, xs, _ in series for x in xs]
    ys_all = [y for _, _, ys in series for y in ys]
    if not xs_all:
        xs_all, ys_all = [0.0, 1.0], [0.0, 1.0]
    pad = 0.05 * (max(ys_all) - min(ys_all) or 1.0)
    c = _Canvas(
        (min(xs_all), max(xs_all)),
        (min(ys_all) - pad, max(ys_all) + pad),
        title,
        xlabel,
        ylabel,
    )
    entries = []
    for i, (label, xs, ys) in enumerate(series):
        color = PALETTE[i % len(PALETTE)]
        c.polyline(xs, ys, color)
        entries.append((label, color))
    c.legend(entries)
    for i, a in enumerate(annotations):
        c.annotation(a, i)
    return c.render()


def roc_chart(
    points: Sequence[tuple[float, float]],
    auc: float,
    title: str,
    marked: Sequence[tuple[float, float, str]] = (),
) -> str:
    c = _Canvas((0.0, 1.0), (0.0, 1.0), title, "false positive rate", "true positive rate")
    c.polyline([0.0, 1.0], [0.0, 1.0], "#999999", width=1.0, dash="4,4")
    c.polyline([p[0] for p in points], [p[1] for p in points], PALETTE[0])
    c.annotation(f"AUC = {auc:.6f}")
    for x, y, label in marked:
        c.marker(x, y, PALETTE[1], label)
    return c.render()
