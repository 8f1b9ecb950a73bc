"""Loss-curve artifacts: per-epoch CSV and a dependency-free SVG plot.

Rendering is pure string formatting with fixed precision, so identical
inputs produce byte-identical files (golden-file friendly).
"""

from __future__ import annotations

import json

from .errors import DataError

__all__ = ["read_metrics_jsonl", "write_loss_csv", "render_series_svg",
           "loss_curve_svg"]

_WIDTH, _HEIGHT = 640, 400
_MARGIN = 54


def read_metrics_jsonl(path) -> list[dict]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"metrics line {lineno}: invalid JSON: {exc}")
            for key in ("epoch", "train_loss", "val_loss"):
                if key not in row:
                    raise DataError(f"metrics line {lineno}: missing {key}")
            rows.append(row)
    if not rows:
        raise DataError(f"metrics log {path} is empty")
    return rows


def write_loss_csv(rows: list[dict], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("epoch,train_loss,val_loss\n")
        for row in rows:
            fh.write(f"{row['epoch']},{row['train_loss']!r},{row['val_loss']!r}\n")


def _scaled(values, lo, hi, out_lo, out_hi):
    span = hi - lo
    if span == 0:
        span = 1.0
    return [out_lo + (v - lo) / span * (out_hi - out_lo) for v in values]


def render_series_svg(series: list[tuple[str, str, list[tuple[float, float]]]],
                      title: str, x_label: str = "epoch",
                      y_label: str = "loss") -> str:
    """Line plot of (label, color, [(x, y), ...]) series as a standalone SVG."""
    if not series or not any(points for _, _, points in series):
        raise DataError("nothing to plot")
    xs = [x for _, _, pts in series for x, _ in pts]
    ys = [y for _, _, pts in series for _, y in pts]
    x_lo, x_hi = min(xs), max(xs)
    y_lo, y_hi = min(ys), max(ys)

    left, right = _MARGIN, _WIDTH - 16
    top, bottom = 28, _HEIGHT - _MARGIN
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_WIDTH}" '
        f'height="{_HEIGHT}" viewBox="0 0 {_WIDTH} {_HEIGHT}">',
        f'<rect width="{_WIDTH}" height="{_HEIGHT}" fill="white"/>',
        f'<text x="{_WIDTH // 2}" y="18" text-anchor="middle" '
        f'font-family="sans-serif" font-size="14">{title}</text>',
        f'<line x1="{left}" y1="{bottom}" x2="{right}" y2="{bottom}" '
        f'stroke="black"/>',
        f'<line x1="{left}" y1="{top}" x2="{left}" y2="{bottom}" '
        f'stroke="black"/>',
        f'<text x="{(left + right) // 2}" y="{_HEIGHT - 14}" '
        f'text-anchor="middle" font-family="sans-serif" font-size="12">'
        f'{x_label}</text>',
        f'<text x="16" y="{(top + bottom) // 2}" text-anchor="middle" '
        f'font-family="sans-serif" font-size="12" '
        f'transform="rotate(-90 16 {(top + bottom) // 2})">{y_label}</text>',
        f'<text x="{left - 6}" y="{bottom + 4}" text-anchor="end" '
        f'font-family="sans-serif" font-size="10">{y_lo:.4g}</text>',
        f'<text x="{left - 6}" y="{top + 4}" text-anchor="end" '
        f'font-family="sans-serif" font-size="10">{y_hi:.4g}</text>',
        f'<text x="{left}" y="{bottom + 14}" text-anchor="middle" '
        f'font-family="sans-serif" font-size="10">{x_lo:.4g}</text>',
        f'<text x="{right}" y="{bottom + 14}" text-anchor="middle" '
        f'font-family="sans-serif" font-size="10">{x_hi:.4g}</text>',
    ]
    for i, (label, color, points) in enumerate(series):
        if not points:
            continue
        px = _scaled([x for x, _ in points], x_lo, x_hi, left, right)
        py = _scaled([y for _, y in points], y_lo, y_hi, bottom, top)
        coords = " ".join(f"{x:.2f},{y:.2f}" for x, y in zip(px, py))
        parts.append(f'<polyline points="{coords}" fill="none" '
                     f'stroke="{color}" stroke-width="1.5"/>')
        ly = top + 14 * i
        parts.append(f'<line x1="{right - 120}" y1="{ly}" x2="{right - 100}" '
                     f'y2="{ly}" stroke="{color}" stroke-width="1.5"/>')
        parts.append(f'<text x="{right - 94}" y="{ly + 4}" '
                     f'font-family="sans-serif" font-size="11">{label}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def loss_curve_svg(rows: list[dict], title: str = "Training loss") -> str:
    train = [(float(r["epoch"]), float(r["train_loss"])) for r in rows]
    val = [(float(r["epoch"]), float(r["val_loss"])) for r in rows]
    return render_series_svg(
        [("train", "#1f77b4", train), ("validation", "#ff7f0e", val)], title)
