"""Dependency-free SVG emission for figures: line plots and saliency strips.

Deterministic output (fixed float formatting) so figures are diffable and
reproducible byte-for-byte under fixed seeds.
"""

from __future__ import annotations

import numpy as np

from .errors import ValidationError

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")
WIDTH, HEIGHT = 860, 340
MARGIN_LEFT, MARGIN_RIGHT, MARGIN_TOP, MARGIN_BOTTOM = 64, 16, 34, 42


def _fmt(x: float) -> str:
    return f"{x:.3f}".rstrip("0").rstrip(".")


def _axis_ticks(lo: float, hi: float, n: int = 5) -> np.ndarray:
    if hi == lo:
        hi = lo + 1.0
    return np.linspace(lo, hi, n)


class _Canvas:
    def __init__(self, width=WIDTH, height=HEIGHT):
        self.width = width
        self.height = height
        self.parts: list[str] = []

    def add(self, element: str) -> None:
        self.parts.append(element)

    def text(self, x, y, s, size=12, anchor="middle", color="#222"):
        self.add(f'<text x="{_fmt(x)}" y="{_fmt(y)}" font-size="{size}" '
                 f'text-anchor="{anchor}" fill="{color}" '
                 f'font-family="sans-serif">{s}</text>')

    def render(self) -> str:
        body = "\n".join(self.parts)
        return (
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{self.width}" '
            f'height="{self.height}" viewBox="0 0 {self.width} {self.height}">\n'
            f'<rect width="{self.width}" height="{self.height}" fill="white"/>\n'
            f"{body}\n</svg>\n"
        )


def _plot_frame(canvas: _Canvas, x_lo, x_hi, y_lo, y_hi, title, x_label, y_label):
    px0, px1 = MARGIN_LEFT, canvas.width - MARGIN_RIGHT
    py0, py1 = canvas.height - MARGIN_BOTTOM, MARGIN_TOP

    def to_px(x, y):
        fx = (x - x_lo) / (x_hi - x_lo) if x_hi != x_lo else 0.5
        fy = (y - y_lo) / (y_hi - y_lo) if y_hi != y_lo else 0.5
        return px0 + fx * (px1 - px0), py0 + fy * (py1 - py0)

    canvas.add(f'<rect x="{px0}" y="{py1}" width="{px1 - px0}" height="{py0 - py1}" '
               'fill="none" stroke="#999" stroke-width="1"/>')
    for xv in _axis_ticks(x_lo, x_hi):
        px, _ = to_px(xv, y_lo)
        canvas.add(f'<line x1="{_fmt(px)}" y1="{py0}" x2="{_fmt(px)}" y2="{py0 + 4}" '
                   'stroke="#555"/>')
        canvas.text(px, py0 + 18, _fmt(xv), size=11)
    for yv in _axis_ticks(y_lo, y_hi):
        _, py = to_px(x_lo, yv)
        canvas.add(f'<line x1="{px0 - 4}" y1="{_fmt(py)}" x2="{px0}" y2="{_fmt(py)}" '
                   'stroke="#555"/>')
        canvas.text(px0 - 8, py + 4, _fmt(yv), size=11, anchor="end")
    canvas.text((px0 + px1) / 2, 20, title, size=14)
    canvas.text((px0 + px1) / 2, canvas.height - 8, x_label, size=12)
    canvas.add(f'<text x="16" y="{(py0 + py1) / 2}" font-size="12" text-anchor="middle" '
               f'fill="#222" font-family="sans-serif" '
               f'transform="rotate(-90 16 {(py0 + py1) / 2})">{y_label}</text>')
    return to_px


def line_plot(series: list[tuple[np.ndarray, np.ndarray, str]], title: str = "",
              x_label: str = "", y_label: str = "", y_range=None,
              max_points: int = 2048) -> str:
    """Overlayed polylines with legend; series are (x, y, label) triples."""
    if not series:
        raise ValidationError("line_plot needs at least one series")
    xs = np.concatenate([np.asarray(s[0], dtype=float) for s in series])
    ys = np.concatenate([np.asarray(s[1], dtype=float) for s in series])
    if not (np.all(np.isfinite(xs)) and np.all(np.isfinite(ys))):
        raise ValidationError("plot data contains non-finite values")
    y_lo, y_hi = y_range if y_range is not None else (ys.min(), ys.max())
    canvas = _Canvas()
    to_px = _plot_frame(canvas, xs.min(), xs.max(), y_lo, y_hi, title, x_label, y_label)
    for i, (x, y, label) in enumerate(series):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if len(x) > max_points:
            idx = np.linspace(0, len(x) - 1, max_points).astype(int)
            x, y = x[idx], y[idx]
        y = np.clip(y, y_lo, y_hi)
        color = PALETTE[i % len(PALETTE)]
        pts = " ".join(f"{_fmt(px)},{_fmt(py)}" for px, py in (to_px(a, b)
                                                               for a, b in zip(x, y)))
        canvas.add(f'<polyline points="{pts}" fill="none" stroke="{color}" '
                   'stroke-width="1.25"/>')
        lx = MARGIN_LEFT + 10
        ly = MARGIN_TOP + 16 + 16 * i
        canvas.add(f'<line x1="{lx}" y1="{ly - 4}" x2="{lx + 22}" y2="{ly - 4}" '
                   f'stroke="{color}" stroke-width="2"/>')
        canvas.text(lx + 28, ly, label, size=11, anchor="start")
    return canvas.render()


def _heat_color(v: float) -> str:
    # White -> green ramp, like a saliency overlay.
    v = min(max(v, 0.0), 1.0)
    r = int(255 - 215 * v)
    g = int(255 - 80 * v)
    b = int(255 - 215 * v)
    return f"#{r:02x}{g:02x}{b:02x}"


def saliency_figure(frequencies: np.ndarray, saliency: np.ndarray,
                    spectrum_magnitude: np.ndarray | None = None,
                    title: str = "", x_label: str = "frequency") -> str:
    """Saliency heatmap strip over frequency with an optional spectrum overlay."""
    freqs = np.asarray(frequencies, dtype=float)
    s = np.asarray(saliency, dtype=float)
    if freqs.shape != s.shape:
        raise ValidationError("frequencies and saliency must have the same length")
    if not np.all(np.isfinite(s)):
        raise ValidationError("saliency contains non-finite values")
    canvas = _Canvas()
    if spectrum_magnitude is not None:
        mag = np.asarray(spectrum_magnitude, dtype=float)
        y_hi = float(mag.max()) if mag.size and mag.max() > 0 else 1.0
    else:
        mag = None
        y_hi = 1.0
    to_px = _plot_frame(canvas, freqs.min(), freqs.max(), 0.0, y_hi, title,
                        x_label, "magnitude")
    px0, px1 = MARGIN_LEFT, canvas.width - MARGIN_RIGHT
    py0 = canvas.height - MARGIN_BOTTOM
    top = MARGIN_TOP
    s_max = s.max() if s.size and s.max() > 0 else 1.0
    strip_w = (px1 - px0) / len(freqs)
    for i, v in enumerate(s / s_max):
        if v <= 0.004:
            continue
        canvas.add(f'<rect x="{_fmt(px0 + i * strip_w)}" y="{top}" '
                   f'width="{_fmt(strip_w + 0.5)}" height="{py0 - top}" '
                   f'fill="{_heat_color(float(v))}" fill-opacity="0.85"/>')
    if mag is not None:
        pts = " ".join(f"{_fmt(px)},{_fmt(py)}" for px, py in (to_px(a, b)
                                                               for a, b in zip(freqs, mag)))
        canvas.add(f'<polyline points="{pts}" fill="none" stroke="#1f77b4" '
                   'stroke-width="1.25"/>')
    return canvas.render()
