from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from shapely.geometry import Polygon
from shapely.ops import unary_union

from ..embed.model import EncoderParams, encode
from ..render import EMBED_DIMS, render_batch
from ..scene import DEFAULT_CLEARANCE, FloorPlan, extrude


class DatabaseError(ValueError):
    pass


@dataclass
class GridDatabase:
    resolution: float
    poses: np.ndarray                    # (N, 2)
    embeddings: np.ndarray | None        # (N, 128) unit rows
    depths: np.ndarray | None = None     # (N, H, W) cached layout renders
    labels: np.ndarray | None = None
    dims: tuple = EMBED_DIMS

    def __len__(self):
        return len(self.poses)


def free_space_bounds(plan: FloorPlan, clearance: float) -> tuple:
    """Bounding box of the rooms eroded by the wall clearance."""
    eroded = unary_union([Polygon(r).buffer(-clearance, join_style="mitre") for r in plan.rooms])
    if eroded.is_empty:
        raise DatabaseError(f"no free space with clearance {clearance}")
    return eroded.bounds


def grid_poses(plan: FloorPlan, resolution: float, clearance: float = DEFAULT_CLEARANCE) -> np.ndarray:
    """Uniform grid anchored at the free-space bounding-box minimum plus half a cell."""
    if resolution <= 0:
        raise DatabaseError("resolution must be positive")
    x0, y0, x1, y1 = free_space_bounds(plan, clearance)
    xs = x0 + resolution / 2 + resolution * np.arange(int(np.floor((x1 - x0) / resolution + 1e-9)) + 1)
    ys = y0 + resolution / 2 + resolution * np.arange(int(np.floor((y1 - y0) / resolution + 1e-9)) + 1)
    xs, ys = xs[xs <= x1], ys[ys <= y1]
    grid = np.array([[x, y] for x in xs for y in ys]).reshape(-1, 2)
    return grid[plan.contains(grid, clearance)]


def build_database(plan: FloorPlan, resolution: float, params: EncoderParams | None,
                   dims: tuple = EMBED_DIMS, clearance: float = DEFAULT_CLEARANCE,
                   keep_depths: bool = False) -> GridDatabase:
    """Render and embed the layout at every grid pose in free space."""
    poses = grid_poses(plan, resolution, clearance)
    if len(poses) == 0:
        raise DatabaseError(f"no grid pose in free space at resolution {resolution}")
    need_render = params is not None or keep_depths
    depths = labels = emb = None
    if need_render:
        depths, labels = render_batch(extrude(plan), poses, *dims)
    if params is not None:
        emb = encode(params, depths) if dims == EMBED_DIMS else None
        if emb is None:
            raise DatabaseError(f"embedding needs {EMBED_DIMS} renders, got {dims}")
    if not keep_depths:
        depths = labels = None
    return GridDatabase(resolution, poses, emb, depths, labels, dims)


def retrieve_nn(query: np.ndarray, db: GridDatabase):
    """Entry indices by ascending embedding distance (ties to lower index) and the distances."""
    if len(db) == 0:
        raise DatabaseError("empty database")
    d = np.linalg.norm(db.embeddings - np.asarray(query)[None], axis=1)
    order = np.argsort(d, kind="stable")
    return order, d[order]
