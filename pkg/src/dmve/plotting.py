"""Static SVG learning curves: mean line and sample-std band per group."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from .config import ConfigError, load_config

PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"]


class PlotError(ValueError):
    pass


@dataclass
class Curve:
    label: str
    x: np.ndarray
    mean: np.ndarray
    std: np.ndarray | None  # None when the group has a single file
    n_files: int


def read_series(path: str | Path, metric: str, x_column: str) -> tuple[np.ndarray, np.ndarray]:
    """Rows of ``path`` with a non-empty ``metric``; repeated x keeps the last row."""
    path = Path(path)
    if not path.is_file():
        raise PlotError(f"metrics file not found: {path}")
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise PlotError(f"{path}: no data rows")
    if metric not in rows[0] or x_column not in rows[0]:
        raise PlotError(f"{path}: missing column {metric!r} or {x_column!r}")
    points = {float(r[x_column]): float(r[metric]) for r in rows if r[metric] != ""}
    if not points:
        raise PlotError(f"{path}: column {metric!r} is empty")
    xs = np.array(sorted(points))
    return xs, np.array([points[x] for x in xs])


def group_label(path: Path, key: str | None) -> str:
    if key is None:
        return "all"
    cfg_path = path.parent / "config.txt"
    try:
        cfg = load_config(cfg_path)
    except ConfigError as exc:
        raise PlotError(f"cannot group {path} by {key!r}: {exc}") from None
    if not hasattr(cfg, key):
        raise PlotError(f"group-by key {key!r} is not a configuration key")
    return f"{key}={getattr(cfg, key)}"


def build_curves(paths: list[str | Path], metric: str = "eval_return_mean", x_column: str | None = None,
                 group_by: str | None = None) -> list[Curve]:
    """Aggregate files into one curve per group over the x values they all share."""
    if not paths:
        raise PlotError("no input files")
    x_column = x_column or ("env_step" if metric.startswith("eval_") else "train_step")
    groups: dict[str, list[tuple[np.ndarray, np.ndarray]]] = {}
    for p in paths:
        groups.setdefault(group_label(Path(p), group_by), []).append(read_series(p, metric, x_column))
    curves = []
    for label, series in groups.items():
        common = series[0][0]
        for xs, _ in series[1:]:
            common = np.intersect1d(common, xs)
        if common.size == 0:
            raise PlotError(f"group {label}: files share no {x_column} values")
        ys = np.stack([ys[np.searchsorted(xs, common)] for xs, ys in series])
        std = ys.std(axis=0, ddof=1) if len(series) > 1 else None
        curves.append(Curve(label, common, ys.mean(axis=0), std, len(series)))
    return curves


def render_svg(curves: list[Curve], title: str = "", y_label: str = "", x_label: str = "",
               width: int = 640, height: int = 400) -> str:
    left, right, top, bottom = 70, 150, 30, 50
    xs = np.concatenate([c.x for c in curves])
    lo = np.concatenate([c.mean - (c.std if c.std is not None else 0) for c in curves])
    hi = np.concatenate([c.mean + (c.std if c.std is not None else 0) for c in curves])
    x0, x1 = float(xs.min()), float(xs.max())
    y0, y1 = float(lo.min()), float(hi.max())
    if x1 == x0:
        x0, x1 = x0 - 1, x1 + 1
    if y1 == y0:
        y0, y1 = y0 - 1, y1 + 1
    pw, ph = width - left - right, height - top - bottom

    def px(x):
        return left + (np.asarray(x) - x0) / (x1 - x0) * pw

    def py(y):
        return top + (1 - (np.asarray(y) - y0) / (y1 - y0)) * ph

    def pts(x, y):
        return " ".join(f"{a:.2f},{b:.2f}" for a, b in zip(px(x), py(y)))

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="12">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.0f}" y="18" text-anchor="middle" font-size="14">{escape(title)}</text>',
        f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
        f'<text x="{left + pw / 2:.0f}" y="{height - 10}" text-anchor="middle">{escape(x_label)}</text>',
        f'<text x="15" y="{top + ph / 2:.0f}" text-anchor="middle" transform="rotate(-90 15 {top + ph / 2:.0f})">'
        f"{escape(y_label)}</text>",
    ]
    for frac in np.linspace(0, 1, 5):
        xv, yv = x0 + frac * (x1 - x0), y0 + frac * (y1 - y0)
        out.append(f'<text x="{px(xv):.2f}" y="{top + ph + 16}" text-anchor="middle">{xv:.4g}</text>')
        out.append(f'<text x="{left - 6}" y="{py(yv) + 4:.2f}" text-anchor="end">{yv:.4g}</text>')
    for i, c in enumerate(curves):
        color = PALETTE[i % len(PALETTE)]
        if c.std is not None:
            band = pts(c.x, c.mean + c.std) + " " + pts(c.x[::-1], (c.mean - c.std)[::-1])
            out.append(f'<polygon class="band" points="{band}" fill="{color}" fill-opacity="0.2" stroke="none"/>')
        out.append(f'<polyline class="mean" points="{pts(c.x, c.mean)}" fill="none" stroke="{color}" stroke-width="2"/>')
        ly = top + 15 + 18 * i
        out.append(f'<line x1="{left + pw + 10}" y1="{ly}" x2="{left + pw + 30}" y2="{ly}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{left + pw + 35}" y="{ly + 4}">{escape(c.label)} (n={c.n_files})</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def plot_metrics(paths, out_path, metric="eval_return_mean", group_by=None, x_column=None) -> list[Curve]:
    curves = build_curves(list(paths), metric, x_column, group_by)
    x_label = x_column or ("env_step" if metric.startswith("eval_") else "train_step")
    Path(out_path).write_text(render_svg(curves, title=metric, y_label=metric, x_label=x_label))
    return curves
