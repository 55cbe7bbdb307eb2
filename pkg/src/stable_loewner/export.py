"""CSV, JSON and SVG writers.

Numbers are written with ``repr``-exact formatting so reruns with the same
seed produce byte-identical files.
"""

import csv
import hashlib
import json

import numpy as np

from .reports import _jsonable


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return format(float(v), ".17g")


def write_csv(path, header, columns):
    """Write equal-length columns under a header row (UTF-8, '.' decimals)."""
    cols = [np.asarray(c) for c in columns]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in zip(*cols):
            w.writerow([_fmt(v) for v in row])


def read_driver_csv(path):
    """Read (t, W) rows of a custom piecewise-constant driver."""
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return data[:, 0], data[:, 1]


def write_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_jsonable(obj), fh, sort_keys=True, indent=2)
        fh.write("\n")


def write_path_csv(path, levy_path):
    write_csv(path, ["t", "W", "is_large_jump"],
              [levy_path.times, levy_path.values, levy_path.is_large_jump()])


def write_trace_csv(path, hull):
    write_csv(path, ["t", "re", "im", "is_jump"],
              [hull.times, hull.points.real, hull.points.imag, hull.is_branch_start()])


def write_trajectory_csv(path, times, zetas, log_deriv):
    zetas = np.asarray(zetas)
    write_csv(path, ["t", "X", "Y", "log_deriv"], [times, zetas.real, zetas.imag, log_deriv])


def write_trace_svg(path, hull, width=800, margin=20):
    """One polyline per continuous branch; jumps show up as breaks."""
    pts = hull.points
    x0, x1 = float(pts.real.min()), float(pts.real.max())
    y1 = float(pts.imag.max())
    span = max(x1 - x0, y1, 1e-12)
    scale = (width - 2 * margin) / span
    height = int(round(y1 * scale)) + 2 * margin

    def sx(x):
        return margin + (x - x0) * scale

    def sy(y):
        return height - margin - y * scale

    lines = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
             f'viewBox="0 0 {width} {height}">',
             f'<line x1="0" y1="{sy(0):.3f}" x2="{width}" y2="{sy(0):.3f}" stroke="#999"/>']
    for a, b in hull.segments():
        seg = pts[a:b]
        coords = " ".join(f"{sx(p.real):.3f},{sy(p.imag):.3f}" for p in seg)
        lines.append(f'<polyline fill="none" stroke="black" stroke-width="0.6" points="{coords}"/>')
    lines.append("</svg>")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()
