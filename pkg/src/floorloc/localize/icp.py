"""Point-to-point 2D ICP of a horizontal scan against wall samples of the plan."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from ..metrics import rmse_points
from ..scene import FloorPlan, Pose


class ICPError(ValueError):
    pass


@dataclass(frozen=True)
class ICPConfig:
    max_iterations: int = 50
    translation_epsilon: float = 1e-5
    epsilon_streak: int = 3
    downsample_cell: float = 0.05
    estimate_rotation: bool = False

    def __post_init__(self):
        if min(self.max_iterations, self.translation_epsilon, self.epsilon_streak,
               self.downsample_cell) <= 0:
            raise ICPError("ICP parameters must be positive")
        if self.epsilon_streak > self.max_iterations:
            raise ICPError("epsilon_streak exceeds max_iterations")


def grid_downsample(points: np.ndarray, cell: float) -> np.ndarray:
    """Replace the points of every occupied grid cell by their mean."""
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    if len(points) == 0:
        return points
    keys = np.floor(points / cell).astype(np.int64)
    _, inverse, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
    inverse = inverse.reshape(-1)
    sums = np.zeros((len(counts), 2))
    np.add.at(sums, inverse, points)
    return sums / counts[:, None]


def plan_cloud(plan: FloorPlan, spacing: float) -> np.ndarray:
    """Wall samples every `spacing` metres (endpoints included)."""
    out = []
    for a, b in plan.walls:
        n = max(1, int(np.ceil(np.linalg.norm(b - a) / spacing)))
        t = np.linspace(0.0, 1.0, n + 1)[:, None]
        out.append(a + t * (b - a))
    return np.concatenate(out)


def _rotation_update(src, dst):
    """Least-squares rotation and translation taking src onto dst (2D Kabsch)."""
    cs, cd = src.mean(axis=0), dst.mean(axis=0)
    h = (src - cs).T @ (dst - cd)
    u, _, vt = np.linalg.svd(h)
    r = vt.T @ u.T
    if np.linalg.det(r) < 0:
        vt[-1] *= -1
        r = vt.T @ u.T
    return r, cd - r @ cs


def _apply(rot, scan, config):
    if config.estimate_rotation:
        return np.einsum("sij,nj->sni", rot, scan)
    return np.broadcast_to(scan, (len(rot), *scan.shape))


def _align(scan, tree, targets, inits, config):
    """Run ICP from every initial translation; returns final translations and RMSEs."""
    n_start = len(inits)
    t = np.asarray(inits, dtype=float).copy()
    rot = np.tile(np.eye(2), (n_start, 1, 1))
    streak = np.zeros(n_start, dtype=int)
    active = np.ones(n_start, dtype=bool)
    for _ in range(config.max_iterations):
        idx = np.nonzero(active)[0]
        if len(idx) == 0:
            break
        moved = _apply(rot[idx], scan, config) + t[idx, None, :]
        _, nn = tree.query(moved.reshape(-1, 2))
        matched = targets[nn].reshape(len(idx), len(scan), 2)
        if config.estimate_rotation:
            new_t = np.empty((len(idx), 2))
            for k, s in enumerate(idx):
                rot[s], new_t[k] = _rotation_update(scan, matched[k])
        else:
            new_t = (matched - scan[None]).mean(axis=1)
        delta = np.linalg.norm(new_t - t[idx], axis=1)
        t[idx] = new_t
        streak[idx] = np.where(delta < config.translation_epsilon, streak[idx] + 1, 0)
        active[idx] = streak[idx] < config.epsilon_streak
    moved = _apply(rot, scan, config) + t[:, None, :]
    _, nn = tree.query(moved.reshape(-1, 2))
    matched = targets[nn].reshape(n_start, len(scan), 2)
    rmse = np.array([rmse_points(moved[s], matched[s]) for s in range(n_start)])
    return t, rot, rmse


def _prepare(scan, plan_pts, config):
    scan_ds = grid_downsample(scan, config.downsample_cell)
    plan_ds = grid_downsample(plan_pts, config.downsample_cell)
    if len(scan_ds) == 0 or len(plan_ds) == 0:
        raise ICPError("empty point cloud")
    return scan_ds, plan_ds, cKDTree(plan_ds)


def icp_align(scan, plan_points, init, config: ICPConfig = ICPConfig()):
    """Align a camera-frame scan to plan points starting at `init`. Returns (Pose, rmse)."""
    scan_ds, plan_ds, tree = _prepare(scan, plan_points, config)
    x0 = init.as_array() if isinstance(init, Pose) else np.asarray(init, dtype=float)
    t, _, rmse = _align(scan_ds, tree, plan_ds, x0[None], config)
    return Pose.from_array(t[0]), float(rmse[0])


def icp_localize(scan, plan: FloorPlan, grid, config: ICPConfig = ICPConfig()):
    """Multi-start ICP from every grid pose; the lowest-RMSE alignment wins.

    Returns (Pose, rmse).
    """
    grid = np.asarray([g.as_array() if isinstance(g, Pose) else g for g in grid], dtype=float)
    if len(grid) == 0:
        raise ICPError("empty grid")
    plan_pts = plan_cloud(plan, config.downsample_cell / 2)
    scan_ds, plan_ds, tree = _prepare(scan, plan_pts, config)
    t, _, rmse = _align(scan_ds, tree, plan_ds, grid, config)
    k = int(np.argmin(rmse))
    return Pose.from_array(t[k]), float(rmse[k])
