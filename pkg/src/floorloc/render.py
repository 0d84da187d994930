"""Equirectangular depth rendering by ray casting against the extruded plan.

Pixel (u, v) of a W x H panorama looks along azimuth
``2*pi*(u + 0.5)/W - pi`` and elevation ``pi*(0.5 - (v + 0.5)/H)``; depth is
the Euclidean length along the unit ray. Walls are vertical, so the
horizontal hit distance ``s`` of a column is shared by every pixel in it and
a wall pixel's depth is ``s / cos(elevation)``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .scene import Pose, Scene3D, points_in_polygon

FLOOR, CEILING, FURNITURE, WALL_BASE = 0, 1, 2, 3

LOCALIZE_DIMS = (128, 64)   # (width, height)
EMBED_DIMS = (64, 32)

_CHUNK = 64


class RenderError(RuntimeError):
    pass


@dataclass(frozen=True)
class PanoDepth:
    depth: np.ndarray    # (H, W) metres
    labels: np.ndarray   # (H, W) surface ids: floor, ceiling, furniture, WALL_BASE + wall index

    @property
    def width(self) -> int:
        return self.depth.shape[1]

    @property
    def height(self) -> int:
        return self.depth.shape[0]


@dataclass(frozen=True)
class PointCloud:
    points: np.ndarray   # (N, 3), camera frame

    def __len__(self):
        return len(self.points)

    def subsample(self, max_points: int) -> "PointCloud":
        if len(self.points) <= max_points:
            return self
        stride = -(-len(self.points) // max_points)
        return PointCloud(self.points[::stride])


@dataclass(frozen=True)
class DepthJacobian:
    d_depth_dx: np.ndarray
    d_depth_dy: np.ndarray
    valid: np.ndarray    # False where the entry is unreliable (grazing ray, visibility edge)


def pixel_angles(width: int, height: int):
    az = 2.0 * np.pi * (np.arange(width) + 0.5) / width - np.pi
    el = np.pi * (0.5 - (np.arange(height) + 0.5) / height)
    return az, el


def ray_directions(azimuths, elevations) -> np.ndarray:
    """Unit rays (H, W, 3)."""
    ce, se = np.cos(elevations)[:, None], np.sin(elevations)[:, None]
    ca, sa = np.cos(azimuths)[None, :], np.sin(azimuths)[None, :]
    return np.stack(np.broadcast_arrays(ce * ca, ce * sa, se), axis=-1)


def _cross(u, v):
    return u[..., 0] * v[..., 1] - u[..., 1] * v[..., 0]


def wall_hits(scene: Scene3D, origins: np.ndarray, azimuths: np.ndarray):
    """Horizontal distance (P, W) to the first front-facing wall and its index."""
    h = np.stack([np.cos(azimuths), np.sin(azimuths)], axis=-1)       # (W, 2)
    a = scene.walls[:, 0]
    e = scene.walls[:, 1] - a                                          # (S, 2)
    denom = _cross(h[:, None, :], e[None])                             # (W, S)
    front = (h @ scene.normals.T) < 0.0
    ok_dir = front & (np.abs(denom) > 1e-15)
    safe = np.where(ok_dir, denom, 1.0)
    s_out = np.empty((len(origins), len(azimuths)))
    idx_out = np.empty((len(origins), len(azimuths)), dtype=np.int64)
    for c in range(0, len(origins), _CHUNK):
        o = origins[c:c + _CHUNK]
        ao = a[None] - o[:, None, :]                                   # (P, S, 2)
        s = _cross(ao, e[None])[:, None, :] / safe[None]               # (P, W, S)
        w = _cross(ao[:, None, :, :], h[None, :, None, :]) / safe[None]
        valid = ok_dir[None] & (s > 1e-12) & (w >= -1e-12) & (w <= 1.0 + 1e-12)
        s = np.where(valid, s, np.inf)
        idx = np.argmin(s, axis=-1)
        s_out[c:c + _CHUNK] = np.take_along_axis(s, idx[..., None], axis=-1)[..., 0]
        idx_out[c:c + _CHUNK] = idx
    return s_out, idx_out


def _plane_distance(scene: Scene3D, elevations):
    se = np.sin(elevations)
    with np.errstate(divide="ignore"):
        t = np.where(se < 0, scene.camera_height / -se,
                     np.where(se > 0, (scene.ceiling_height - scene.camera_height) / se, np.inf))
    label = np.where(se < 0, FLOOR, CEILING)
    return t, label


def _box_hits(scene: Scene3D, origin3: np.ndarray, dirs: np.ndarray) -> np.ndarray:
    """Entry distance (H, W) into the nearest furniture box, inf if none."""
    best = np.full(dirs.shape[:-1], np.inf)
    lo = np.column_stack([scene.boxes[:, 0], scene.boxes[:, 1], np.zeros(len(scene.boxes))])
    hi = np.column_stack([scene.boxes[:, 2], scene.boxes[:, 3], scene.boxes[:, 4]])
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / dirs
        for b in range(len(scene.boxes)):
            t1 = (lo[b] - origin3) * inv
            t2 = (hi[b] - origin3) * inv
            # zero direction component: slab is all-or-nothing
            inside = (origin3 >= lo[b]) & (origin3 <= hi[b])
            zero = dirs == 0.0
            t1 = np.where(zero, np.where(inside, -np.inf, np.inf), t1)
            t2 = np.where(zero, np.where(inside, np.inf, -np.inf), t2)
            tn = np.minimum(t1, t2).max(axis=-1)
            tf = np.maximum(t1, t2).min(axis=-1)
            hit = (tf >= tn) & (tn > 1e-12)
            best = np.where(hit & (tn < best), tn, best)
    return best


def render_batch(scene: Scene3D, origins, width: int, height: int,
                 elevations=None, furniture: bool = False):
    """Depth (P, H, W) and labels for many poses at once."""
    origins = np.atleast_2d(np.asarray(origins, dtype=float))
    inside = np.zeros(len(origins), dtype=bool)
    for poly in scene.floors:
        inside |= points_in_polygon(origins, poly)
    if not inside.all():
        bad = origins[np.argmin(inside)]
        raise RenderError(f"pose ({bad[0]:.3f}, {bad[1]:.3f}) lies outside every room")
    az, el = pixel_angles(width, height)
    if elevations is not None:
        el = np.asarray(elevations, dtype=float)
    s, idx = wall_hits(scene, origins, az)
    ce = np.cos(el)
    with np.errstate(divide="ignore"):
        wall_t = s[:, None, :] / ce[None, :, None]                     # (P, H, W)
    plane_t, plane_label = _plane_distance(scene, el)
    plane_t = np.broadcast_to(plane_t[None, :, None], wall_t.shape)
    use_wall = wall_t < plane_t
    depth = np.where(use_wall, wall_t, plane_t)
    labels = np.where(use_wall, WALL_BASE + idx[:, None, :],
                      np.broadcast_to(plane_label[None, :, None], wall_t.shape))
    if furniture and len(scene.boxes):
        dirs = ray_directions(az, el)
        for p in range(len(origins)):
            o3 = np.array([origins[p, 0], origins[p, 1], scene.camera_height])
            tb = _box_hits(scene, o3, dirs)
            closer = tb < depth[p]
            depth[p] = np.where(closer, tb, depth[p])
            labels[p] = np.where(closer, FURNITURE, labels[p])
    if not np.isfinite(depth).all():
        raise RenderError("ray escaped the geometry; pose outside the plan?")
    return depth, labels.astype(np.int64)


def _as_xy(pose) -> np.ndarray:
    return pose.as_array() if isinstance(pose, Pose) else np.asarray(pose, dtype=float)


def render_layout_depth(scene: Scene3D, pose, width: int = LOCALIZE_DIMS[0],
                        height: int = LOCALIZE_DIMS[1], elevations=None) -> PanoDepth:
    depth, labels = render_batch(scene, _as_xy(pose)[None], width, height, elevations)
    return PanoDepth(depth[0], labels[0])


def render_furnished_depth(furnished, pose, width: int = LOCALIZE_DIMS[0],
                           height: int = LOCALIZE_DIMS[1], elevations=None) -> PanoDepth:
    depth, labels = render_batch(furnished.scene3d, _as_xy(pose)[None], width, height,
                                 elevations, furniture=True)
    return PanoDepth(depth[0], labels[0])


def backproject(depth: PanoDepth, elevations=None) -> PointCloud:
    az, el = pixel_angles(depth.width, depth.height)
    if elevations is not None:
        el = np.asarray(elevations, dtype=float)
    dirs = ray_directions(az, el)
    return PointCloud((dirs * depth.depth[..., None]).reshape(-1, 3))


def horizontal_scan(depth: PanoDepth) -> np.ndarray:
    """2D laser-scan emulation from the row closest to the horizon, camera frame."""
    az, el = pixel_angles(depth.width, depth.height)
    row = int(np.argmin(np.abs(el)))
    s = depth.depth[row] * np.cos(el[row])
    return np.column_stack([s * np.cos(az), s * np.sin(az)])


def depth_pose_jacobian(scene: Scene3D, pose, width: int = LOCALIZE_DIMS[0],
                        height: int = LOCALIZE_DIMS[1], elevations=None) -> DepthJacobian:
    """Analytic d(depth)/d(x, y) holding each pixel's hit surface fixed."""
    xy = _as_xy(pose)[None]
    az, el = pixel_angles(width, height)
    if elevations is not None:
        el = np.asarray(elevations, dtype=float)
    _, labels = render_batch(scene, xy, width, height, el)
    labels = labels[0]
    _, idx = wall_hits(scene, xy, az)
    n = scene.normals[idx[0]]                                          # (W, 2)
    h = np.column_stack([np.cos(az), np.sin(az)])
    nh = (n * h).sum(-1)
    ok = np.abs(nh) >= 1e-9
    ds = np.where(ok[:, None], -n / np.where(ok, nh, 1.0)[:, None], 0.0)   # (W, 2)
    is_wall = labels >= WALL_BASE
    ce = np.cos(el)[:, None]
    jx = np.where(is_wall, ds[None, :, 0] / ce, 0.0)
    jy = np.where(is_wall, ds[None, :, 1] / ce, 0.0)
    valid = ~is_wall | ok[None, :]
    return DepthJacobian(jx, jy, valid)


def fd_depth_jacobian(scene: Scene3D, pose, width: int = LOCALIZE_DIMS[0],
                      height: int = LOCALIZE_DIMS[1], step: float = 1e-4,
                      elevations=None) -> DepthJacobian:
    """Central differences; pixels whose surface changes under the step are
    marked invalid (visibility edges)."""
    if step <= 0:
        raise ValueError("step must be positive")
    xy = _as_xy(pose)
    offsets = np.array([[0, 0], [step, 0], [-step, 0], [0, step], [0, -step]])
    depth, labels = render_batch(scene, xy[None] + offsets, width, height, elevations)
    jx = (depth[1] - depth[2]) / (2 * step)
    jy = (depth[3] - depth[4]) / (2 * step)
    valid = (labels[1:] == labels[0][None]).all(axis=0)
    return DepthJacobian(jx, jy, valid)


_DEPTH_HEADER = struct.Struct("<4sII")


def write_depth(path, depth: PanoDepth):
    with open(path, "wb") as fh:
        fh.write(_DEPTH_HEADER.pack(b"PDPH", depth.width, depth.height))
        fh.write(depth.depth.astype("<f4").tobytes())
        fh.write(depth.labels.astype("<u2").tobytes())


def read_depth(path) -> PanoDepth:
    data = Path(path).read_bytes()
    if len(data) < _DEPTH_HEADER.size:
        raise ValueError(f"{path}: truncated depth file")
    magic, w, h = _DEPTH_HEADER.unpack_from(data)
    if magic != b"PDPH":
        raise ValueError(f"{path}: bad magic {magic!r}")
    n = w * h
    expect = _DEPTH_HEADER.size + 6 * n
    if len(data) != expect:
        raise ValueError(f"{path}: expected {expect} bytes, got {len(data)}")
    off = _DEPTH_HEADER.size
    depth = np.frombuffer(data, "<f4", n, off).astype(float).reshape(h, w)
    labels = np.frombuffer(data, "<u2", n, off + 4 * n).astype(np.int64).reshape(h, w)
    return PanoDepth(depth, labels)
