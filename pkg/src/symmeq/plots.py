"""Small hand-composed SVG charts (line plots and path overlays)."""
from __future__ import annotations

import csv
import math
from xml.sax.saxutils import escape

import numpy as np

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf")
WIDTH, HEIGHT, MARGIN = 640, 420, 56


def _ticks(lo, hi, n=5):
    if hi <= lo:
        hi = lo + 1.0
    raw = (hi - lo) / n
    mag = 10 ** math.floor(math.log10(raw))
    step = min((s * mag for s in (1, 2, 5, 10) if s * mag >= raw), default=raw)
    start = math.ceil(lo / step) * step
    return [start + i * step for i in range(int((hi - start) / step + 1e-9) + 1)]


class _Frame:
    def __init__(self, xs, ys, equal=False):
        xs = np.concatenate([np.asarray(x, float).ravel() for x in xs]) if xs else np.zeros(1)
        ys = np.concatenate([np.asarray(y, float).ravel() for y in ys]) if ys else np.zeros(1)
        xs, ys = xs[np.isfinite(xs)], ys[np.isfinite(ys)]
        self.x0, self.x1 = (float(xs.min()), float(xs.max())) if xs.size else (0.0, 1.0)
        self.y0, self.y1 = (float(ys.min()), float(ys.max())) if ys.size else (0.0, 1.0)
        for lo, hi in (("x0", "x1"), ("y0", "y1")):
            if getattr(self, hi) - getattr(self, lo) < 1e-12:
                setattr(self, lo, getattr(self, lo) - 0.5)
                setattr(self, hi, getattr(self, hi) + 0.5)
        if equal:
            span = max(self.x1 - self.x0, self.y1 - self.y0)
            cx, cy = (self.x0 + self.x1) / 2, (self.y0 + self.y1) / 2
            self.x0, self.x1, self.y0, self.y1 = cx - span / 2, cx + span / 2, cy - span / 2, cy + span / 2
        self.w, self.h = WIDTH - 2 * MARGIN, HEIGHT - 2 * MARGIN

    def px(self, x):
        return MARGIN + (np.asarray(x, float) - self.x0) / (self.x1 - self.x0) * self.w

    def py(self, y):
        return HEIGHT - MARGIN - (np.asarray(y, float) - self.y0) / (self.y1 - self.y0) * self.h


def _polyline(frame, x, y, color, dash=None, width=1.6):
    pts = " ".join(f"{a:.2f},{b:.2f}" for a, b in zip(frame.px(x), frame.py(y)) if np.isfinite(a) and np.isfinite(b))
    extra = f' stroke-dasharray="{dash}"' if dash else ""
    return f'<polyline fill="none" stroke="{color}" stroke-width="{width}"{extra} points="{pts}"/>'


def _axes(frame, title, xlabel, ylabel, note=None):
    out = [
        f'<rect x="{MARGIN}" y="{MARGIN}" width="{frame.w}" height="{frame.h}" fill="none" stroke="#444"/>',
        f'<text x="{WIDTH / 2}" y="{MARGIN / 2}" text-anchor="middle" font-size="15">{escape(title)}</text>',
        f'<text x="{WIDTH / 2}" y="{HEIGHT - 12}" text-anchor="middle" font-size="12">{escape(xlabel)}</text>',
        f'<text x="14" y="{HEIGHT / 2}" text-anchor="middle" font-size="12" '
        f'transform="rotate(-90 14 {HEIGHT / 2})">{escape(ylabel)}</text>',
    ]
    for t in _ticks(frame.x0, frame.x1):
        x = float(frame.px(t))
        out.append(f'<line x1="{x:.2f}" y1="{HEIGHT - MARGIN}" x2="{x:.2f}" y2="{HEIGHT - MARGIN + 5}" stroke="#444"/>')
        out.append(f'<text x="{x:.2f}" y="{HEIGHT - MARGIN + 18}" text-anchor="middle" font-size="10">{t:g}</text>')
    for t in _ticks(frame.y0, frame.y1):
        y = float(frame.py(t))
        out.append(f'<line x1="{MARGIN - 5}" y1="{y:.2f}" x2="{MARGIN}" y2="{y:.2f}" stroke="#444"/>')
        out.append(f'<text x="{MARGIN - 8}" y="{y + 3:.2f}" text-anchor="end" font-size="10">{t:g}</text>')
    if note:
        out.append(f'<!-- {escape(note)} -->')
    return out


def _legend(labels, colors, dashes=None):
    out = []
    for i, (lab, col) in enumerate(zip(labels, colors)):
        y = MARGIN + 14 + 15 * i
        dash = f' stroke-dasharray="{dashes[i]}"' if dashes and dashes[i] else ""
        out.append(f'<line x1="{WIDTH - MARGIN - 130}" y1="{y}" x2="{WIDTH - MARGIN - 110}" y2="{y}" '
                   f'stroke="{col}" stroke-width="2"{dash}/>')
        out.append(f'<text x="{WIDTH - MARGIN - 105}" y="{y + 4}" font-size="11">{escape(lab)}</text>')
    return out


def _document(body):
    return (f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
            f'viewBox="0 0 {WIDTH} {HEIGHT}">\n<rect width="100%" height="100%" fill="white"/>\n'
            + "\n".join(body) + "\n</svg>\n")


def line_plot(series, title="", xlabel="", ylabel="", note=None):
    """``series`` is a list of (x, y, label) or (x, y, label, dash)."""
    frame = _Frame([s[0] for s in series], [s[1] for s in series])
    body = _axes(frame, title, xlabel, ylabel, note)
    colors = [PALETTE[i % len(PALETTE)] for i in range(len(series))]
    dashes = [s[3] if len(s) > 3 else None for s in series]
    for s, col, dash in zip(series, colors, dashes):
        body.append(_polyline(frame, s[0], s[1], col, dash))
    body += _legend([s[2] for s in series], colors, dashes)
    return _document(body)


def path_overlay(paths, title="", note=None):
    """Actual (solid) and ideal (dashed) planar paths: list of (actual_xy, ideal_xy, label)."""
    xs = [p[0][:, 0] for p in paths] + [p[1][:, 0] for p in paths]
    ys = [p[0][:, 1] for p in paths] + [p[1][:, 1] for p in paths]
    frame = _Frame(xs, ys, equal=True)
    body = _axes(frame, title, "x (m)", "y (m)", note)
    colors = [PALETTE[i % len(PALETTE)] for i in range(len(paths))]
    for (act, ideal, _), col in zip(paths, colors):
        body.append(_polyline(frame, ideal[:, 0], ideal[:, 1], col, "4 3", 1.0))
        body.append(_polyline(frame, act[:, 0], act[:, 1], col))
    body += _legend([p[2] for p in paths], colors)
    return _document(body)


def write_svg(path, svg):
    with open(path, "w") as fh:
        fh.write(svg)


def read_csv_columns(path):
    """Read a CSV (``#`` comment lines skipped) into a dict of float arrays."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(line for line in fh if not line.startswith("#")))
    if not rows:
        raise ValueError(f"{path}: empty CSV")
    header, body = rows[0], rows[1:]
    cols = {}
    for j, name in enumerate(header):
        try:
            cols[name] = np.array([float(r[j]) for r in body])
        except ValueError:
            cols[name] = np.array([r[j] for r in body])
    return cols
