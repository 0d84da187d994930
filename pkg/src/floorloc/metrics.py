"""Layout similarity metrics between panoramic renders and point clouds."""

from __future__ import annotations

import numpy as np
from scipy.spatial import cKDTree

from .render import PanoDepth, PointCloud, backproject

KINDS = ("edges", "depth", "relative_depth", "chamfer3d")


class MetricError(ValueError):
    pass


def _same_shape(a: PanoDepth, b: PanoDepth):
    if a.depth.shape != b.depth.shape:
        raise MetricError(f"dimension mismatch {a.depth.shape} vs {b.depth.shape}")


def l1_depth(a: PanoDepth, b: PanoDepth) -> float:
    _same_shape(a, b)
    return float(np.abs(a.depth - b.depth).mean())


def l1_relative_depth(a: PanoDepth, b: PanoDepth) -> float:
    """L1 after scaling each image so its maximum depth is 1."""
    _same_shape(a, b)
    ma, mb = a.depth.max(), b.depth.max()
    if not (ma > 0 and mb > 0):
        raise MetricError("relative depth needs a positive maximum")
    return float(np.abs(a.depth / ma - b.depth / mb).mean())


def edge_pixels(labels: np.ndarray) -> np.ndarray:
    """(u, v) of pixels with a differently labelled 4-neighbour.

    Columns wrap around the panorama seam; rows do not.
    """
    diff = np.zeros(labels.shape, dtype=bool)
    horiz = labels != np.roll(labels, -1, axis=1)
    diff |= horiz | np.roll(horiz, 1, axis=1)
    vert = labels[:-1] != labels[1:]
    diff[:-1] |= vert
    diff[1:] |= vert
    v, u = np.nonzero(diff)
    return np.column_stack([u, v]).astype(float)


def _wrapped_nn(src: np.ndarray, dst: np.ndarray, width: int, height: int) -> np.ndarray:
    # cKDTree needs every coordinate inside [0, boxsize); rows get a box big enough never to wrap
    tree = cKDTree(dst, boxsize=[width, 4.0 * height + 4.0])
    d, _ = tree.query(src)
    return d


def edge_chamfer_2d(a: PanoDepth, b: PanoDepth) -> float:
    _same_shape(a, b)
    ea, eb = edge_pixels(a.labels), edge_pixels(b.labels)
    if len(ea) == 0 or len(eb) == 0:
        raise MetricError("no edge pixels in view")
    w, h = a.width, a.height
    return float(_wrapped_nn(ea, eb, w, h).mean() + _wrapped_nn(eb, ea, w, h).mean())


def _points(x) -> np.ndarray:
    return x.points if isinstance(x, PointCloud) else np.asarray(x, dtype=float)


def chamfer_3d(a, b) -> float:
    """Symmetric mean nearest-neighbour distance (non-squared)."""
    pa, pb = _points(a), _points(b)
    if len(pa) == 0 or len(pb) == 0:
        raise MetricError("empty point cloud")
    da, _ = cKDTree(pb).query(pa)
    db, _ = cKDTree(pa).query(pb)
    return float(da.mean() + db.mean())


class ChamferIndex:
    """A point cloud with its KD-tree built once, for repeated Chamfer queries."""

    def __init__(self, cloud):
        self.points = _points(cloud)
        if len(self.points) == 0:
            raise MetricError("empty point cloud")
        self.tree = cKDTree(self.points)

    def chamfer(self, other: "ChamferIndex") -> float:
        da, _ = other.tree.query(self.points)
        db, _ = self.tree.query(other.points)
        return float(da.mean() + db.mean())


def rmse_points(a, b) -> float:
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    if len(a) == 0:
        raise MetricError("empty point set")
    if a.shape != b.shape:
        raise MetricError(f"shape mismatch {a.shape} vs {b.shape}")
    return float(np.sqrt(((a - b) ** 2).sum(axis=1).mean()))


def layout_distance(kind: str, a: PanoDepth, b: PanoDepth) -> float:
    """Dissimilarity of two layout renders under one of the ablation metrics."""
    if kind == "edges":
        return edge_chamfer_2d(a, b)
    if kind == "depth":
        return l1_depth(a, b)
    if kind == "relative_depth":
        return l1_relative_depth(a, b)
    if kind == "chamfer3d":
        return chamfer_3d(backproject(a), backproject(b))
    raise MetricError(f"unknown metric {kind!r}")
