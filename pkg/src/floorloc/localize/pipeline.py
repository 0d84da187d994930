from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..embed.model import EncoderParams, encode
from ..render import EMBED_DIMS, PanoDepth
from ..scene import FloorPlan, Pose
from .database import GridDatabase, retrieve_nn
from .refine import (FreeSpace, LatentCost, LPOConfig, decode_refine, latent_pose_optimize,
                     vdr_refine)

# Table-style method names -> refinement stages run after retrieval
STAGE_PRESETS = {
    "retrieval": (),
    "vdr": ("vdr",),
    "lpo": ("lpo",),
    "vdr+lpo": ("vdr", "lpo"),
    "vdr+decode": ("vdr", "decode"),
}


class PipelineError(ValueError):
    pass


@dataclass(frozen=True)
class PipelineConfig:
    stages: tuple = ("vdr", "lpo")
    vdr_n: int = 200
    vdr_radius: float | None = None     # default: twice the grid resolution
    lpo: LPOConfig = LPOConfig()
    margin: float = 0.1

    @classmethod
    def preset(cls, name: str, **kw) -> "PipelineConfig":
        if name not in STAGE_PRESETS:
            raise PipelineError(f"unknown stage preset {name!r}; choose from {sorted(STAGE_PRESETS)}")
        return cls(stages=STAGE_PRESETS[name], **kw)


@dataclass
class LocalizationResult:
    retrieved_pose: Pose
    vdr_pose: Pose | None = None
    refined_pose: Pose | None = None
    stage_costs: dict = field(default_factory=dict)
    lpo_trace: list = field(default_factory=list)
    gt_pose: Pose | None = None
    retrieved_index: int = -1

    @property
    def final_pose(self) -> Pose:
        if self.refined_pose is not None:
            return self.refined_pose
        if self.vdr_pose is not None:
            return self.vdr_pose
        return self.retrieved_pose

    @property
    def error(self) -> float | None:
        return None if self.gt_pose is None else self.final_pose.distance(self.gt_pose)

    def to_dict(self) -> dict:
        pose = lambda p: None if p is None else [p.x, p.y]
        return {
            "retrieved_pose": pose(self.retrieved_pose),
            "retrieved_index": self.retrieved_index,
            "vdr_pose": pose(self.vdr_pose),
            "refined_pose": pose(self.refined_pose),
            "final_pose": pose(self.final_pose),
            "stage_costs": dict(self.stage_costs),
            "lpo_trace": [{"pose": pose(p), "cost": c} for p, c in self.lpo_trace],
            "gt_pose": pose(self.gt_pose),
            "error": self.error,
        }


def query_embedding(query, params: EncoderParams) -> np.ndarray:
    if isinstance(query, PanoDepth):
        if (query.width, query.height) != EMBED_DIMS:
            raise PipelineError(
                f"query render is {query.width}x{query.height}, encoder expects {EMBED_DIMS[0]}x{EMBED_DIMS[1]}")
        return encode(params, query)
    return np.asarray(query, dtype=float)


def localize_full(query, plan: FloorPlan, db: GridDatabase, layout_params: EncoderParams,
                  config: PipelineConfig = PipelineConfig(), query_params: EncoderParams | None = None,
                  gt_pose: Pose | None = None) -> LocalizationResult:
    """Retrieve, then run the configured refinement stages.

    `query` is a 32x64 query render (embedded with `query_params`, or the
    layout branch when none is given) or an embedding.
    """
    if db.embeddings is None:
        raise PipelineError("database has no embeddings")
    unknown = set(config.stages) - {"vdr", "lpo", "decode"}
    if unknown:
        raise PipelineError(f"unknown stages {sorted(unknown)}")
    q = query_embedding(query, query_params or layout_params)
    if q.shape != db.embeddings.shape[1:]:
        raise PipelineError("query embedding dimension does not match the database")
    order, dist = retrieve_nn(q, db)
    top = int(order[0])
    result = LocalizationResult(Pose.from_array(db.poses[top]), gt_pose=gt_pose, retrieved_index=top)
    result.stage_costs["retrieval"] = float(dist[0])
    fs = FreeSpace(plan, config.margin)
    current = result.retrieved_pose
    if "vdr" in config.stages:
        radius = config.vdr_radius or 2 * db.resolution
        cost = LatentCost(plan, layout_params, q)
        current, c = vdr_refine(current, cost, radius, config.vdr_n, fs)
        result.vdr_pose = current
        result.stage_costs["vdr"] = c
    if "lpo" in config.stages:
        pose, trace = latent_pose_optimize(current, q, plan, layout_params, config.lpo, fs)
        result.refined_pose = pose
        result.lpo_trace = trace
        result.stage_costs["lpo"] = min(c for _, c in trace)
    elif "decode" in config.stages:
        pose, trace = decode_refine(current, q, plan, layout_params, config.lpo, fs)
        result.refined_pose = pose
        result.lpo_trace = trace
        result.stage_costs["decode"] = min(c for _, c in trace)
    return result
