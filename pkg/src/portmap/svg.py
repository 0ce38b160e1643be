"""Minimal deterministic SVG charts (line plots and scatter plots).

CSV files are the normative output of the command-line tool; these charts
are a convenience for eyeballing loci, Bode diagrams and waveforms.
"""
from __future__ import annotations

import math
from html import escape

import numpy as np

WIDTH, HEIGHT = 640, 420
MARGIN = dict(left=70, right=20, top=36, bottom=50)
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2",
           "#7f7f7f", "#bcbd22", "#17becf")
MAX_POINTS = 2000


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def _ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if not math.isfinite(lo) or not math.isfinite(hi) or hi <= lo:
        return [lo]
    raw = (hi - lo) / n
    mag = 10 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 5, 10) if m * mag >= raw), default=raw)
    first = math.ceil(lo / step) * step
    return [first + k * step for k in range(int((hi - first) / step + 1e-9) + 1)]


class _Axes:
    def __init__(self, x, y, logx=False):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        ok = np.isfinite(x) & np.isfinite(y)
        if logx:
            ok &= x > 0
        x, y = x[ok], y[ok]
        self.logx = logx
        tx = np.log10(x) if logx else x
        self.x0, self.x1 = (float(tx.min()), float(tx.max())) if tx.size else (0.0, 1.0)
        self.y0, self.y1 = (float(y.min()), float(y.max())) if y.size else (0.0, 1.0)
        if self.x1 == self.x0:
            self.x0, self.x1 = self.x0 - 1, self.x1 + 1
        if self.y1 == self.y0:
            pad = abs(self.y0) * 0.1 or 1.0
            self.y0, self.y1 = self.y0 - pad, self.y1 + pad
        pad = 0.05 * (self.y1 - self.y0)
        self.y0, self.y1 = self.y0 - pad, self.y1 + pad

    def px(self, x):
        t = math.log10(x) if self.logx else x
        w = WIDTH - MARGIN["left"] - MARGIN["right"]
        return MARGIN["left"] + (t - self.x0) / (self.x1 - self.x0) * w

    def py(self, y):
        h = HEIGHT - MARGIN["top"] - MARGIN["bottom"]
        return HEIGHT - MARGIN["bottom"] - (y - self.y0) / (self.y1 - self.y0) * h

    def frame(self, title, xlabel, ylabel) -> list[str]:
        L, R = MARGIN["left"], WIDTH - MARGIN["right"]
        T, B = MARGIN["top"], HEIGHT - MARGIN["bottom"]
        out = [f'<rect x="{L}" y="{T}" width="{R - L}" height="{B - T}" fill="none" stroke="#000"/>']
        if self.logx:
            xt = [10.0 ** k for k in range(math.ceil(self.x0), math.floor(self.x1) + 1)]
        else:
            xt = _ticks(self.x0, self.x1)
        for v in xt:
            p = self.px(v)
            out.append(f'<line x1="{_fmt(p)}" y1="{B}" x2="{_fmt(p)}" y2="{B + 5}" stroke="#000"/>')
            out.append(f'<text x="{_fmt(p)}" y="{B + 18}" font-size="11" '
                       f'text-anchor="middle">{v:g}</text>')
        for v in _ticks(self.y0, self.y1):
            p = self.py(v)
            out.append(f'<line x1="{L - 5}" y1="{_fmt(p)}" x2="{L}" y2="{_fmt(p)}" stroke="#000"/>')
            out.append(f'<line x1="{L}" y1="{_fmt(p)}" x2="{R}" y2="{_fmt(p)}" stroke="#ddd"/>')
            out.append(f'<text x="{L - 8}" y="{_fmt(p + 4)}" font-size="11" '
                       f'text-anchor="end">{v:.4g}</text>')
        out.append(f'<text x="{WIDTH / 2}" y="20" font-size="14" text-anchor="middle">'
                   f'{escape(title)}</text>')
        out.append(f'<text x="{WIDTH / 2}" y="{HEIGHT - 12}" font-size="12" '
                   f'text-anchor="middle">{escape(xlabel)}</text>')
        out.append(f'<text x="16" y="{HEIGHT / 2}" font-size="12" text-anchor="middle" '
                   f'transform="rotate(-90 16 {HEIGHT / 2})">{escape(ylabel)}</text>')
        return out


def _document(body: list[str]) -> str:
    head = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
            f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif">')
    return "\n".join([head, '<rect width="100%" height="100%" fill="#fff"/>', *body, "</svg>"]) + "\n"


def _legend(labels) -> list[str]:
    out = []
    for k, lab in enumerate(labels):
        if not lab:
            continue
        y = MARGIN["top"] + 14 + 14 * k
        x = WIDTH - MARGIN["right"] - 150
        c = PALETTE[k % len(PALETTE)]
        out.append(f'<line x1="{x}" y1="{y - 4}" x2="{x + 18}" y2="{y - 4}" stroke="{c}" '
                   'stroke-width="2"/>')
        out.append(f'<text x="{x + 24}" y="{y}" font-size="11">{escape(lab)}</text>')
    return out


def _decimate(x, y):
    """Keep the min and max of each bucket so envelopes survive decimation."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size <= MAX_POINTS:
        return x, y
    nb = MAX_POINTS // 2
    edges = np.linspace(0, x.size, nb + 1).astype(int)
    keep = []
    for a, b in zip(edges[:-1], edges[1:]):
        seg = y[a:b]
        i, j = a + int(np.argmin(seg)), a + int(np.argmax(seg))
        keep.extend(sorted({i, j}))
    keep = np.array(keep)
    return x[keep], y[keep]


def line_plot(series, title="", xlabel="", ylabel="", logx=False, hlines=()) -> str:
    """``series`` is a list of ``(x, y, label)``; ``hlines`` adds dashed references."""
    series = [(*_decimate(x, y), lab) for x, y, lab in series]
    xs = np.concatenate([np.asarray(s[0], float) for s in series]) if series else np.zeros(0)
    ys = np.concatenate([np.asarray(s[1], float) for s in series]) if series else np.zeros(0)
    ys = np.concatenate([ys, np.asarray(hlines, float)])
    xs = np.concatenate([xs, np.full(len(hlines), xs[0] if xs.size else 0.0)])
    ax = _Axes(xs, ys, logx)
    body = ax.frame(title, xlabel, ylabel)
    for v in hlines:
        p = ax.py(v)
        body.append(f'<line x1="{MARGIN["left"]}" y1="{_fmt(p)}" x2="{WIDTH - MARGIN["right"]}" '
                    f'y2="{_fmt(p)}" stroke="#555" stroke-dasharray="4 3"/>')
    for k, (x, y, _) in enumerate(series):
        pts = [f"{_fmt(ax.px(a))},{_fmt(ax.py(b))}" for a, b in zip(x, y)
               if math.isfinite(a) and math.isfinite(b) and (a > 0 or not logx)]
        if pts:
            body.append(f'<polyline fill="none" stroke="{PALETTE[k % len(PALETTE)]}" '
                        f'stroke-width="1.5" points="{" ".join(pts)}"/>')
    body += _legend([s[2] for s in series])
    return _document(body)


def scatter_plot(groups, title="", xlabel="", ylabel="", vline=None) -> str:
    """``groups`` is a list of ``(x, y, label)`` drawn as dots."""
    xs = np.concatenate([np.asarray(g[0], float) for g in groups]) if groups else np.zeros(0)
    ys = np.concatenate([np.asarray(g[1], float) for g in groups]) if groups else np.zeros(0)
    ax = _Axes(xs, ys)
    body = ax.frame(title, xlabel, ylabel)
    if vline is not None and ax.x0 <= vline <= ax.x1:
        p = ax.px(vline)
        body.append(f'<line x1="{_fmt(p)}" y1="{MARGIN["top"]}" x2="{_fmt(p)}" '
                    f'y2="{HEIGHT - MARGIN["bottom"]}" stroke="#555" stroke-dasharray="4 3"/>')
    for k, (x, y, _) in enumerate(groups):
        c = PALETTE[k % len(PALETTE)]
        for a, b in zip(x, y):
            if math.isfinite(a) and math.isfinite(b):
                body.append(f'<circle cx="{_fmt(ax.px(a))}" cy="{_fmt(ax.py(b))}" r="2.5" '
                            f'fill="{c}"/>')
    if len(groups) <= 10:
        body += _legend([g[2] for g in groups])
    return _document(body)
