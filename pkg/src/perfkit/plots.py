"""Curve and map-slice rendering.

``curve_plot_svg`` writes a minimal static SVG by hand (one polyline per
curve, axis labels in seconds / HU) so the output is stable byte-for-byte.
Report figures use matplotlib's SVG backend with date metadata stripped,
which keeps repeated runs byte-identical as well.
"""
from __future__ import annotations

import numpy as np

import matplotlib

matplotlib.use("Agg")
matplotlib.rcParams["svg.hashsalt"] = "perfkit"

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from .io import atomic_write_bytes, atomic_write_text  # noqa: E402
from .errors import ValidationError  # noqa: E402
from .types import VascularFunction  # noqa: E402

_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")
_W, _H = 640, 420
_ML, _MR, _MT, _MB = 64, 16, 20, 48   # plot margins


def _ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if hi <= lo:
        hi = lo + 1.0
    raw = np.linspace(lo, hi, n)
    return [float(v) for v in raw]


def curve_plot_svg(curves: list[tuple[str, VascularFunction]], path,
                   title: str = "") -> None:
    """Static SVG with one polyline per labelled curve."""
    if not curves:
        raise ValidationError("no curves to plot")
    xs = [c.times for _, c in curves]
    ys = [c.values for _, c in curves]
    x_lo, x_hi = 0.0, max(float(t[-1]) for t in xs)
    y_lo = min(float(v.min()) for v in ys)
    y_hi = max(float(v.max()) for v in ys)
    if y_hi <= y_lo:
        y_hi = y_lo + 1.0
    pad = 0.05 * (y_hi - y_lo)
    y_lo -= pad
    y_hi += pad
    spanx = x_hi - x_lo if x_hi > x_lo else 1.0
    spany = y_hi - y_lo

    def px(t: float) -> float:
        return _ML + (t - x_lo) / spanx * (_W - _ML - _MR)

    def py(v: float) -> float:
        return _H - _MB - (v - y_lo) / spany * (_H - _MT - _MB)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" '
        f'viewBox="0 0 {_W} {_H}">',
        f'<rect width="{_W}" height="{_H}" fill="white"/>',
        f'<rect x="{_ML}" y="{_MT}" width="{_W - _ML - _MR}" '
        f'height="{_H - _MT - _MB}" fill="none" stroke="black"/>',
    ]
    for t in _ticks(x_lo, x_hi):
        parts.append(
            f'<text x="{px(t):.1f}" y="{_H - _MB + 16}" font-size="11" '
            f'text-anchor="middle">{t:g}</text>')
    for v in _ticks(y_lo, y_hi):
        parts.append(
            f'<text x="{_ML - 6}" y="{py(v):.1f}" font-size="11" '
            f'text-anchor="end">{v:.4g}</text>')
    parts.append(
        f'<text x="{(_ML + _W - _MR) / 2:.1f}" y="{_H - 10}" font-size="13" '
        f'text-anchor="middle">time (s)</text>')
    parts.append(
        f'<text x="14" y="{(_MT + _H - _MB) / 2:.1f}" font-size="13" '
        f'text-anchor="middle" transform="rotate(-90 14 {(_MT + _H - _MB) / 2:.1f})">'
        f'value (HU)</text>')
    if title:
        parts.append(
            f'<text x="{(_ML + _W - _MR) / 2:.1f}" y="14" font-size="13" '
            f'text-anchor="middle">{title}</text>')
    for i, (label, curve) in enumerate(curves):
        color = _PALETTE[i % len(_PALETTE)]
        pts = " ".join(f"{px(t):.2f},{py(v):.2f}"
                       for t, v in zip(curve.times, curve.values))
        parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" '
                     f'points="{pts}"/>')
        parts.append(f'<text x="{_W - _MR - 8}" y="{_MT + 16 + 14 * i}" '
                     f'font-size="12" text-anchor="end" fill="{color}">{label}</text>')
    parts.append("</svg>")
    atomic_write_text(path, "\n".join(parts) + "\n")


def _save_fig(fig, path) -> None:
    import io as _io

    buf = _io.BytesIO()
    fig.savefig(buf, format="svg", metadata={"Date": None})
    plt.close(fig)
    atomic_write_bytes(path, buf.getvalue())


def curve_overlay_figure(curves: list[tuple[str, VascularFunction]], path,
                         title: str = "") -> None:
    """Matplotlib overlay of labelled curves."""
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    for label, curve in curves:
        ax.plot(curve.times, curve.values, label=label, linewidth=1.2)
    ax.set_xlabel("time (s)")
    ax.set_ylabel("value (HU)")
    if title:
        ax.set_title(title)
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    _save_fig(fig, path)


def map_montage_figure(named_slices: list[tuple[str, np.ndarray]], path,
                       title: str = "") -> None:
    """One row of 2D map slices with individual color scales."""
    n = len(named_slices)
    if n == 0:
        raise ValidationError("no slices to plot")
    fig, axes = plt.subplots(1, n, figsize=(2.6 * n, 2.9))
    if n == 1:
        axes = [axes]
    for ax, (name, img) in zip(axes, named_slices):
        im = ax.imshow(np.asarray(img), origin="lower", cmap="viridis")
        ax.set_title(name, fontsize=9)
        ax.set_xticks([])
        ax.set_yticks([])
        fig.colorbar(im, ax=ax, fraction=0.046)
    if title:
        fig.suptitle(title, fontsize=11)
    fig.tight_layout()
    _save_fig(fig, path)


def volume_scatter_figure(pred_ml, truth_ml, path, title: str = "") -> None:
    """Predicted vs reference lesion volumes across a cohort."""
    pred = np.asarray(pred_ml, dtype=np.float64)
    truth = np.asarray(truth_ml, dtype=np.float64)
    fig, ax = plt.subplots(figsize=(4.2, 4.2))
    ax.scatter(truth, pred, s=18)
    lim = max(1e-9, float(max(pred.max(initial=0), truth.max(initial=0))) * 1.1)
    ax.plot([0, lim], [0, lim], "k--", linewidth=0.8)
    ax.set_xlim(0, lim)
    ax.set_ylim(0, lim)
    ax.set_xlabel("reference volume (ml)")
    ax.set_ylabel("predicted volume (ml)")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    _save_fig(fig, path)
