"""Distance-field maps (SVG and PNG) and report plots."""

from __future__ import annotations

import re
from xml.sax.saxutils import escape

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.collections import PatchCollection  # noqa: E402
from matplotlib.patches import Polygon as MplPolygon, Rectangle  # noqa: E402

from ..render import render_layout_depth  # noqa: E402
from ..scene import FloorPlan, Pose, extrude  # noqa: E402
from .suite import EvalReport, THRESHOLDS  # noqa: E402

# low distance -> light yellow, high -> dark purple; every channel is monotone
RAMP_LOW = np.array([253.0, 231.0, 37.0])
RAMP_HIGH = np.array([68.0, 1.0, 84.0])


def ramp(t) -> np.ndarray:
    t = np.clip(np.asarray(t, dtype=float), 0.0, 1.0)
    return np.rint(RAMP_LOW + t[..., None] * (RAMP_HIGH - RAMP_LOW)).astype(int)


def _field(plan: FloorPlan, query_pose: Pose, scorer, query=None):
    db = scorer.db
    if query is None:
        h, w = db.depths.shape[1:] if db.depths is not None else (32, 64)
        query = render_layout_depth(extrude(plan), query_pose, w, h)
    d = scorer.distances(query)
    logd = np.log(np.maximum(d, 1e-9))
    span = logd.max() - logd.min()
    t = (logd - logd.min()) / span if span > 0 else np.zeros_like(logd)
    return d, t


def distance_field_svg(plan: FloorPlan, query_pose: Pose, scorer, query=None,
                       scale: float = 60.0) -> str:
    """Plan outline with grid cells coloured by log scorer distance to the query."""
    d, t = _field(plan, query_pose, scorer, query)
    res = scorer.db.resolution
    x0, y0, x1, y1 = plan.bounds
    pad = 0.2
    W, H = (x1 - x0 + 2 * pad) * scale, (y1 - y0 + 2 * pad) * scale
    sx = lambda x: (x - x0 + pad) * scale
    sy = lambda y: (y1 - y + pad) * scale       # SVG y grows downwards
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W:.1f}" height="{H:.1f}" '
             f'viewBox="0 0 {W:.1f} {H:.1f}">',
             f'<title>{escape(plan.id)}: {escape(scorer.kind)} distance field</title>']
    for (x, y), c, dist in zip(scorer.db.poses, ramp(t), d):
        parts.append(f'<rect x="{sx(x - res / 2):.2f}" y="{sy(y + res / 2):.2f}" '
                     f'width="{res * scale:.2f}" height="{res * scale:.2f}" '
                     f'fill="rgb({c[0]},{c[1]},{c[2]})" data-distance="{dist:.6g}"/>')
    for room in plan.rooms:
        pts = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in room)
        parts.append(f'<polygon points="{pts}" fill="none" stroke="black" stroke-width="2"/>')
    parts.append(f'<circle cx="{sx(query_pose.x):.2f}" cy="{sy(query_pose.y):.2f}" r="5" '
                 f'fill="red" stroke="white"/>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def svg_cell_colors(svg: str) -> list:
    """(distance, (r, g, b)) of every grid cell in a distance-field SVG."""
    pat = re.compile(r'fill="rgb\((\d+),(\d+),(\d+)\)" data-distance="([^"]+)"')
    return [(float(m[4]), (int(m[1]), int(m[2]), int(m[3]))) for m in pat.finditer(svg)]


def plot_distance_field(plan: FloorPlan, query_pose: Pose, scorer, path, query=None):
    d, t = _field(plan, query_pose, scorer, query)
    res = scorer.db.resolution
    fig, ax = plt.subplots(figsize=(6, 5))
    cells = [Rectangle((x - res / 2, y - res / 2), res, res) for x, y in scorer.db.poses]
    coll = PatchCollection(cells, cmap="viridis_r", edgecolor="none")
    coll.set_array(np.log(np.maximum(d, 1e-9)))
    ax.add_collection(coll)
    for room in plan.rooms:
        ax.add_patch(MplPolygon(room, closed=True, fill=False, edgecolor="black", lw=1.5))
    ax.plot(query_pose.x, query_pose.y, "r*", ms=14)
    x0, y0, x1, y1 = plan.bounds
    ax.set_xlim(x0 - 0.2, x1 + 0.2)
    ax.set_ylim(y0 - 0.2, y1 + 0.2)
    ax.set_aspect("equal")
    fig.colorbar(coll, ax=ax, label=f"log {scorer.kind} distance")
    ax.set_title(f"{plan.id}")
    fig.savefig(path, dpi=100, bbox_inches="tight")
    plt.close(fig)


def sweep_medians(report: EvalReport) -> dict:
    """{mode: ([n], [median_cm])} from a vdr-sweep report."""
    out = {}
    for row in report.rows:
        mode, _, n = row.method.partition("@")
        xs, ys = out.setdefault(mode, ([], []))
        xs.append(int(n))
        ys.append(row.median_cm)
    return out


def plot_vdr_sweep(report: EvalReport, path):
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for mode, (ns, med) in sweep_medians(report).items():
        ax.plot(ns, med, marker="o", label=mode)
    ax.set_xscale("log")
    ax.set_xlabel("Vogel samples n")
    ax.set_ylabel("median error (cm)")
    ax.legend()
    ax.grid(alpha=0.3)
    fig.savefig(path, dpi=100, bbox_inches="tight")
    plt.close(fig)


def plot_error_cdf(report: EvalReport, path):
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for row in report.rows:
        e = np.sort(np.asarray(row.errors)) * 100
        ax.step(e, np.arange(1, len(e) + 1) / len(e), where="post", label=row.method)
    for _, t in THRESHOLDS:
        ax.axvline(t * 100, color="grey", lw=0.5, ls=":")
    ax.set_xscale("log")
    ax.set_xlabel("error (cm)")
    ax.set_ylabel("fraction of queries")
    ax.legend(fontsize=7)
    fig.savefig(path, dpi=100, bbox_inches="tight")
    plt.close(fig)
