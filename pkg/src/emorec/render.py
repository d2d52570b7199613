"""Heatmap rasters of the emotion matrix and bar charts of comparison reports.

Heatmaps are written as binary PPM (P6): rows are users, columns are items.
Matrices larger than the raster are pooled into contiguous row/column
buckets.  All output is a pure function of the input, byte for byte.
"""

import csv
from dataclasses import dataclass
from xml.sax.saxutils import escape

import numpy as np

from .errors import ConfigError

# viridis sampled at 9 evenly spaced stops
VIRIDIS9 = (
    (68, 1, 84), (71, 44, 122), (59, 81, 139), (44, 113, 142), (33, 144, 141),
    (39, 173, 129), (92, 200, 99), (170, 220, 50), (253, 231, 37),
)
GRAY2 = ((0, 0, 0), (255, 255, 255))
COLORMAPS = {"viridis": VIRIDIS9, "gray": GRAY2}
OBSERVED_FLOOR = 0.05


class Colormap:
    """Piecewise-linear LUT over evenly spaced RGB control points on [0, 1]."""

    def __init__(self, control_points):
        pts = np.asarray(control_points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3 or len(pts) < 2:
            raise ConfigError("a colormap needs at least two RGB control points")
        self.points = pts
        self.stops = np.linspace(0.0, 1.0, len(pts))

    @classmethod
    def named(cls, name):
        try:
            return cls(COLORMAPS[name])
        except KeyError:
            raise ConfigError(f"unknown colormap {name!r}; have {sorted(COLORMAPS)}") from None

    def __call__(self, values):
        v = np.clip(np.asarray(values, dtype=np.float64), 0.0, 1.0)
        rgb = np.stack([np.interp(v, self.stops, self.points[:, c]) for c in range(3)], axis=-1)
        return np.floor(rgb + 0.5).astype(np.uint8)


@dataclass(frozen=True)
class RasterSpec:
    max_width: int = 1024
    max_height: int = 1024
    colormap: str = "viridis"
    pooling: str = "mean"
    remap_observed: bool = False
    sort_by_count: bool = False

    def __post_init__(self):
        if self.max_width < 1 or self.max_height < 1:
            raise ConfigError("raster dimensions must be >= 1")
        if self.pooling not in ("mean", "max"):
            raise ConfigError(f"pooling must be 'mean' or 'max', got {self.pooling!r}")
        if self.colormap not in COLORMAPS:
            raise ConfigError(f"unknown colormap {self.colormap!r}; have {sorted(COLORMAPS)}")


def _by_count(idx, n):
    """Rank position of each index when sorted by descending frequency."""
    counts = np.bincount(idx, minlength=n)
    order = np.lexsort((np.arange(n), -counts))
    position = np.empty(n, dtype=np.int64)
    position[order] = np.arange(n)
    return position


def pooled_grid(matrix, spec=RasterSpec()):
    """The matrix reduced to at most ``max_height x max_width`` cells."""
    n, m = matrix.shape
    if n == 0 or m == 0:
        raise ConfigError("cannot render an empty matrix")
    rows, cols = matrix.user_idx, matrix.item_idx
    if spec.sort_by_count:
        rows = _by_count(rows, n)[rows]
        cols = _by_count(cols, m)[cols]
    values = matrix.normalized
    if spec.remap_observed:
        values = OBSERVED_FLOOR + (1.0 - OBSERVED_FLOOR) * values
    h, w = min(n, spec.max_height), min(m, spec.max_width)
    row_bucket = np.arange(n) * h // n
    col_bucket = np.arange(m) * w // m
    br, bc = row_bucket[rows], col_bucket[cols]
    grid = np.zeros((h, w))
    if spec.pooling == "max":
        np.maximum.at(grid, (br, bc), values)
        return grid
    np.add.at(grid, (br, bc), values)
    cells = np.outer(np.bincount(row_bucket, minlength=h), np.bincount(col_bucket, minlength=w))
    return grid / cells


def write_ppm(rgb, path):
    h, w, _ = rgb.shape
    with open(path, "wb") as fh:
        fh.write(b"P6\n%d %d\n255\n" % (w, h))
        fh.write(np.ascontiguousarray(rgb, dtype=np.uint8).tobytes())


def read_ppm(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    magic, dims, maxval, body = blob.split(b"\n", 3)
    if magic != b"P6" or maxval != b"255":
        raise ValueError(f"{path} is not an 8-bit P6 pixmap")
    w, h = map(int, dims.split())
    return np.frombuffer(body, dtype=np.uint8).reshape(h, w, 3)


def render_heatmap(matrix, spec=RasterSpec(), out_path=None, colormap=None):
    """Colormapped raster of the emotion matrix; written as P6 if ``out_path``."""
    cmap = colormap if colormap is not None else Colormap.named(spec.colormap)
    rgb = cmap(pooled_grid(matrix, spec))
    if out_path is not None:
        write_ppm(rgb, out_path)
    return rgb


def _label(report):
    if report.algorithm == "emf":
        return f"emf λ={report.emotion_weight:g}"
    return report.algorithm


def emit_comparison_plot_data(reports, svg_path, csv_path=None):
    """Bar chart (one panel per metric, one bar per report) plus its data CSV."""
    if not reports:
        raise ConfigError("need at least one report to plot")
    panels = [("MAE", [r.mae for r in reports]), ("Degree of Matthew Effect", [r.dme for r in reports])]
    labels = [_label(r) for r in reports]
    bar_w, gap, plot_h, top, bottom, left = 48, 16, 200, 40, 60, 20
    panel_w = left + len(reports) * (bar_w + gap) + gap
    width, height = panel_w * len(panels), top + plot_h + bottom

    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width}" '
        f'height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
    ]
    for p, (title, values) in enumerate(panels):
        x0 = p * panel_w
        peak = max(values) or 1.0
        base = top + plot_h
        out.append(f'<g class="panel" data-metric="{escape(title)}">')
        out.append(f'<text x="{x0 + panel_w / 2:.1f}" y="20" text-anchor="middle" '
                   f'font-size="13">{escape(title)}</text>')
        out.append(f'<line x1="{x0 + left}" y1="{base}" x2="{x0 + panel_w - gap / 2:.1f}" '
                   f'y2="{base}" stroke="black"/>')
        for k, (label, value) in enumerate(zip(labels, values)):
            bh = plot_h * value / peak
            x = x0 + left + gap + k * (bar_w + gap)
            fill = "#%02x%02x%02x" % VIRIDIS9[(2 * k + 2) % len(VIRIDIS9)]
            out.append(f'<rect class="bar" x="{x}" y="{base - bh:.3f}" width="{bar_w}" '
                       f'height="{bh:.3f}" fill="{fill}"/>')
            out.append(f'<text x="{x + bar_w / 2:.1f}" y="{base - bh - 4:.3f}" '
                       f'text-anchor="middle">{value:.3f}</text>')
            out.append(f'<text x="{x + bar_w / 2:.1f}" y="{base + 16}" '
                       f'text-anchor="middle">{escape(label)}</text>')
        out.append("</g>")
    out.append("</svg>")
    with open(svg_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(out) + "\n")

    if csv_path is not None:
        with open(csv_path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["metric", "label", "value"])
            for title, values in panels:
                for label, value in zip(labels, values):
                    writer.writerow([title, label, repr(float(value))])
