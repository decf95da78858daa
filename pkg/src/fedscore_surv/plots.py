"""Self-contained SVG plots with fixed number formatting (byte-stable across runs)."""
from __future__ import annotations

from html import escape
from typing import Sequence

import numpy as np

W, H = 640, 400
LEFT, RIGHT, TOP, BOTTOM = 60, 20, 40, 50
COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b")


def _f(x: float) -> str:
    return f"{x:.2f}"


class _Frame:
    def __init__(self, x0, x1, y0, y1):
        self.x0, self.x1 = float(x0), float(x1) if x1 > x0 else float(x0) + 1.0
        self.y0, self.y1 = float(y0), float(y1) if y1 > y0 else float(y0) + 1.0

    def x(self, v):
        return LEFT + (v - self.x0) / (self.x1 - self.x0) * (W - LEFT - RIGHT)

    def y(self, v):
        return H - BOTTOM - (v - self.y0) / (self.y1 - self.y0) * (H - TOP - BOTTOM)


def _ticks(lo, hi, n=5):
    return np.linspace(lo, hi, n + 1)


def _axes(fr: _Frame, title, xlabel, ylabel, xticks, yticks, xfmt="{:g}", yfmt="{:.2f}"):
    out = [f'<text x="{W / 2:.0f}" y="22" text-anchor="middle" font-size="15">{escape(title)}</text>',
           f'<line x1="{LEFT}" y1="{H - BOTTOM}" x2="{W - RIGHT}" y2="{H - BOTTOM}" stroke="black"/>',
           f'<line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{H - BOTTOM}" stroke="black"/>']
    for t in xticks:
        x = _f(fr.x(t))
        out.append(f'<line x1="{x}" y1="{H - BOTTOM}" x2="{x}" y2="{H - BOTTOM + 5}" stroke="black"/>')
        out.append(f'<text x="{x}" y="{H - BOTTOM + 18}" text-anchor="middle" font-size="11">'
                   f'{escape(xfmt.format(t))}</text>')
    for t in yticks:
        y = _f(fr.y(t))
        out.append(f'<line x1="{LEFT - 5}" y1="{y}" x2="{LEFT}" y2="{y}" stroke="black"/>')
        out.append(f'<line x1="{LEFT}" y1="{y}" x2="{W - RIGHT}" y2="{y}" stroke="#dddddd"/>')
        out.append(f'<text x="{LEFT - 8}" y="{y}" text-anchor="end" dominant-baseline="middle" '
                   f'font-size="11">{yfmt.format(t)}</text>')
    out.append(f'<text x="{W / 2:.0f}" y="{H - 12}" text-anchor="middle" font-size="12">'
               f'{escape(xlabel)}</text>')
    out.append(f'<text x="16" y="{H / 2:.0f}" text-anchor="middle" font-size="12" '
               f'transform="rotate(-90 16 {H / 2:.0f})">{escape(ylabel)}</text>')
    return out


def _doc(body: list) -> str:
    return (f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" '
            f'viewBox="0 0 {W} {H}">\n<rect width="{W}" height="{H}" fill="white"/>\n'
            + "\n".join(body) + "\n</svg>\n")


def _segments(mask):
    """Runs of consecutive True entries as (start, stop) pairs."""
    runs, start = [], None
    for i, m in enumerate(mask):
        if m and start is None:
            start = i
        elif not m and start is not None:
            runs.append((start, i))
            start = None
    if start is not None:
        runs.append((start, len(mask)))
    return runs


def auc_curves_svg(curves: Sequence[tuple], title: str = "AUC(t)") -> str:
    """Line plot of AUC(t) with shaded CI bands.

    ``curves`` holds ``(label, times, auc, ci_low, ci_high)``; undefined
    points break the line.
    """
    tmax = max((float(np.max(c[1])) for c in curves if len(c[1])), default=1.0)
    fr = _Frame(0.0, tmax, 0.0, 1.0)
    body = _axes(fr, title, "t (days)", "AUC(t)", _ticks(0, tmax), _ticks(0, 1))
    for k, (label, t, a, lo, hi) in enumerate(curves):
        color = COLORS[k % len(COLORS)]
        t, a, lo, hi = (np.asarray(v, dtype=float) for v in (t, a, lo, hi))
        band_ok = np.isfinite(lo) & np.isfinite(hi)
        for s, e in _segments(band_ok):
            pts = [f"{_f(fr.x(t[i]))},{_f(fr.y(hi[i]))}" for i in range(s, e)]
            pts += [f"{_f(fr.x(t[i]))},{_f(fr.y(lo[i]))}" for i in range(e - 1, s - 1, -1)]
            body.append(f'<polygon points="{" ".join(pts)}" fill="{color}" fill-opacity="0.15" '
                        f'stroke="none"/>')
        for s, e in _segments(np.isfinite(a)):
            pts = " ".join(f"{_f(fr.x(t[i]))},{_f(fr.y(a[i]))}" for i in range(s, e))
            body.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="2"/>')
        ly = TOP + 8 + 16 * k
        body.append(f'<line x1="{W - RIGHT - 150}" y1="{ly}" x2="{W - RIGHT - 130}" y2="{ly}" '
                    f'stroke="{color}" stroke-width="2"/>')
        body.append(f'<text x="{W - RIGHT - 125}" y="{ly}" dominant-baseline="middle" '
                    f'font-size="11">{escape(label)}</text>')
    return _doc(body)


def parsimony_svg(psi, labels: Sequence[str], selected: int | None = None,
                  title: str = "Parsimony plot") -> str:
    """Bar chart of Psi_m against the number of variables; the chosen m is highlighted."""
    psi = np.asarray(psi, dtype=float)
    finite = psi[np.isfinite(psi)]
    lo = max(0.0, np.floor((finite.min() - 0.05) * 20) / 20) if finite.size else 0.0
    hi = min(1.0, np.ceil((finite.max() + 0.02) * 20) / 20) if finite.size else 1.0
    m = psi.size
    fr = _Frame(0.5, m + 0.5, lo, hi)
    body = _axes(fr, title, "variables added (by global rank)", "validation iAUC",
                 [], _ticks(lo, hi, 4))
    bw = (W - LEFT - RIGHT) / max(m, 1) * 0.7
    for i in range(m):
        x = fr.x(i + 1)
        if np.isfinite(psi[i]):
            y = fr.y(psi[i])
            color = COLORS[1] if selected == i + 1 else COLORS[0]
            body.append(f'<rect x="{_f(x - bw / 2)}" y="{_f(y)}" width="{_f(bw)}" '
                        f'height="{_f(H - BOTTOM - y)}" fill="{color}"/>')
            body.append(f'<text x="{_f(x)}" y="{_f(y - 4)}" text-anchor="middle" '
                        f'font-size="9">{psi[i]:.3f}</text>')
        body.append(f'<text x="{_f(x)}" y="{H - BOTTOM + 14}" text-anchor="end" font-size="10" '
                    f'transform="rotate(-35 {_f(x)} {H - BOTTOM + 14})">{escape(labels[i])}</text>')
    return _doc(body)


def km_svg(curves: Sequence[tuple], title: str = "Kaplan-Meier curves") -> str:
    """Step plot of survival curves; ``curves`` holds ``(label, StepSurvivalCurve, t_max)``."""
    tmax = max((c[2] for c in curves), default=1.0)
    ymin = min((float(c[1].survival.min()) for c in curves if c[1].survival.size), default=0.0)
    lo = max(0.0, np.floor((ymin - 0.02) * 20) / 20)
    fr = _Frame(0.0, tmax, lo, 1.0)
    body = _axes(fr, title, "t (days)", "survival", _ticks(0, tmax), _ticks(lo, 1.0, 4))
    for k, (label, km, t_end) in enumerate(curves):
        color = COLORS[k % len(COLORS)]
        pts, s = [f"{_f(fr.x(0))},{_f(fr.y(1.0))}"], 1.0
        for t, v in zip(km.times, km.survival):
            pts.append(f"{_f(fr.x(t))},{_f(fr.y(s))}")
            pts.append(f"{_f(fr.x(t))},{_f(fr.y(v))}")
            s = v
        pts.append(f"{_f(fr.x(t_end))},{_f(fr.y(s))}")
        body.append(f'<polyline points="{" ".join(pts)}" fill="none" stroke="{color}" '
                    f'stroke-width="1.5"/>')
        ly = TOP + 8 + 16 * k
        body.append(f'<line x1="{LEFT + 15}" y1="{ly}" x2="{LEFT + 35}" y2="{ly}" '
                    f'stroke="{color}" stroke-width="2"/>')
        body.append(f'<text x="{LEFT + 40}" y="{ly}" dominant-baseline="middle" '
                    f'font-size="11">{escape(label)}</text>')
    return _doc(body)


def write(path, svg: str) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write(svg)
