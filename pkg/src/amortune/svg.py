"""Minimal SVG line-plot writer; CSV outputs remain the source of truth."""

from __future__ import annotations

from pathlib import Path

import numpy as np

WIDTH, HEIGHT = 640, 400
MARGIN = 56
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def _scale(values: np.ndarray, lo: float, hi: float, out_lo: float, out_hi: float) -> np.ndarray:
    span = hi - lo if hi > lo else 1.0
    return out_lo + (values - lo) / span * (out_hi - out_lo)


def write_line_plot(
    path: str | Path,
    series: dict[str, tuple[np.ndarray, np.ndarray]],
    title: str = "",
    x_label: str = "",
    y_label: str = "",
) -> Path:
    """Render named (x, y) series as polylines with a legend and axis labels."""
    xs = np.concatenate([np.asarray(x, dtype=float) for x, _ in series.values()])
    ys = np.concatenate([np.asarray(y, dtype=float) for _, y in series.values()])
    x_lo, x_hi = (float(xs.min()), float(xs.max())) if xs.size else (0.0, 1.0)
    y_lo, y_hi = (float(ys.min()), float(ys.max())) if ys.size else (0.0, 1.0)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<rect x="{MARGIN}" y="{MARGIN}" width="{WIDTH - 2 * MARGIN}" '
        f'height="{HEIGHT - 2 * MARGIN}" fill="none" stroke="#333"/>',
    ]
    if title:
        parts.append(
            f'<text x="{WIDTH / 2}" y="{MARGIN / 2}" text-anchor="middle" '
            f'font-family="sans-serif" font-size="15">{title}</text>'
        )
    if x_label:
        parts.append(
            f'<text x="{WIDTH / 2}" y="{HEIGHT - 12}" text-anchor="middle" '
            f'font-family="sans-serif" font-size="12">{x_label}</text>'
        )
    if y_label:
        parts.append(
            f'<text x="16" y="{HEIGHT / 2}" text-anchor="middle" font-family="sans-serif" '
            f'font-size="12" transform="rotate(-90 16 {HEIGHT / 2})">{y_label}</text>'
        )
    for tick in np.linspace(y_lo, y_hi, 5):
        y_px = _scale(np.array([tick]), y_lo, y_hi, HEIGHT - MARGIN, MARGIN)[0]
        parts.append(
            f'<text x="{MARGIN - 6}" y="{y_px + 4:.1f}" text-anchor="end" '
            f'font-family="sans-serif" font-size="10">{tick:.3g}</text>'
        )
    for tick in np.linspace(x_lo, x_hi, 5):
        x_px = _scale(np.array([tick]), x_lo, x_hi, MARGIN, WIDTH - MARGIN)[0]
        parts.append(
            f'<text x="{x_px:.1f}" y="{HEIGHT - MARGIN + 16}" text-anchor="middle" '
            f'font-family="sans-serif" font-size="10">{tick:.3g}</text>'
        )
    for i, (name, (x, y)) in enumerate(series.items()):
        color = PALETTE[i % len(PALETTE)]
        x_px = _scale(np.asarray(x, dtype=float), x_lo, x_hi, MARGIN, WIDTH - MARGIN)
        y_px = _scale(np.asarray(y, dtype=float), y_lo, y_hi, HEIGHT - MARGIN, MARGIN)
        points = " ".join(f"{a:.2f},{b:.2f}" for a, b in zip(x_px, y_px))
        parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{points}"/>')
        parts.append(
            f'<text x="{WIDTH - MARGIN - 4}" y="{MARGIN + 16 + 14 * i}" text-anchor="end" '
            f'font-family="sans-serif" font-size="11" fill="{color}">{name}</text>'
        )
    parts.append("</svg>")
    out = Path(path)
    out.write_text("\n".join(parts) + "\n", encoding="utf-8")
    return out
