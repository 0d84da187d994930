"""Evaluation protocol: per-query localisation runs aggregated into report rows."""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from ..embed.model import EncoderParams
from ..localize import (ICPConfig, PipelineConfig, STAGE_PRESETS, build_database, icp_localize,
                        localize_full)
from ..metrics import KINDS
from ..scene import extrude
from ..render import (EMBED_DIMS, LOCALIZE_DIMS, horizontal_scan, render_furnished_depth,
                      render_layout_depth)
from .corpus import CorpusConfig, EvalScene, build_corpus
from .oracle import OracleScorer

THRESHOLDS = (("under_1cm", 0.01), ("under_5cm", 0.05), ("under_10cm", 0.10), ("under_1m", 1.0))
METHOD_ALIASES = {"lalaloc": "vdr+lpo", "oracle": "oracle:chamfer3d"}


class EvalError(ValueError):
    pass


def _nanmean(values) -> float:
    return float(np.mean(values)) if len(values) else math.nan


@dataclass(frozen=True)
class EvalRow:
    method: str
    errors: tuple            # metres, one per query in corpus order
    layout_hits: tuple = ()  # empty when the method has no retrieval stage
    pose_hits: tuple = ()
    room_hits: tuple = ()

    @property
    def layout_r1(self) -> float:
        return _nanmean(self.layout_hits)

    @property
    def pose_r1(self) -> float:
        return _nanmean(self.pose_hits)

    @property
    def median_cm(self) -> float:
        return float(np.median(self.errors)) * 100.0

    @property
    def correct_room(self) -> float:
        return _nanmean(self.room_hits)

    def fractions(self) -> dict:
        e = np.asarray(self.errors)
        return {name: float((e < t).mean()) for name, t in THRESHOLDS}

    def summary(self) -> dict:
        return {"method": self.method, "layout_r1": self.layout_r1, "pose_r1": self.pose_r1,
                "median_cm": self.median_cm, **self.fractions(), "correct_room": self.correct_room}


@dataclass(frozen=True)
class EvalReport:
    name: str
    rows: tuple
    corpus: dict = field(default_factory=dict)

    def row(self, method: str) -> EvalRow:
        for r in self.rows:
            if r.method == method:
                return r
        raise KeyError(method)

    @property
    def methods(self) -> list:
        return [r.method for r in self.rows]


@dataclass(frozen=True)
class EvalSetup:
    methods: tuple = ("oracle", "icp", "lalaloc")
    layout_params: EncoderParams | None = None
    query_params: EncoderParams | None = None
    pipeline: PipelineConfig = PipelineConfig()
    icp: ICPConfig = ICPConfig()


def parse_method(method: str):
    """Split a method label into (family, argument).

    Families: pose, oracle (argument = metric kind), icp, and the learned
    stage presets (argument = Vogel sample count or None), e.g. ``vdr@10``.
    """
    name = METHOD_ALIASES.get(method, method)
    if name == "pose" or name == "icp":
        return name, None
    if name.startswith("oracle:"):
        kind = name.split(":", 1)[1]
        if kind not in KINDS:
            raise EvalError(f"unknown oracle metric {kind!r}; choose from {KINDS}")
        return "oracle", kind
    preset, _, n = name.partition("@")
    if preset not in STAGE_PRESETS:
        raise EvalError(f"unknown method {method!r}")
    if n:
        if not n.isdigit() or int(n) < 1:
            raise EvalError(f"method {method!r}: sample count must be a positive integer")
        return preset, int(n)
    return preset, None


def _needs_params(methods) -> bool:
    return any(parse_method(m)[0] not in ("pose", "oracle", "icp") for m in methods)


def evaluate_scene(scene: EvalScene, setup: EvalSetup, resolution: float, clearance: float) -> dict:
    """Per-method lists of (error, layout_hit, pose_hit, room_hit) for one scene."""
    plan = scene.plan
    db = build_database(plan, resolution, setup.layout_params, EMBED_DIMS, clearance, keep_depths=True)
    scorers = {}

    def scorer(kind):
        if kind not in scorers:
            scorers[kind] = OracleScorer(db, kind)
        return scorers[kind]

    layout3d = extrude(plan)
    out = {m: [] for m in setup.methods}
    for gt in scene.queries:
        gt_xy = gt.as_array()
        layout = render_layout_depth(layout3d, gt, *EMBED_DIMS)
        oracle = scorer("chamfer3d")
        best_top, best_layout = oracle.best(layout)
        layout_hit = lambda top: top == best_top or oracle.distance(layout, top) <= best_layout
        nearest = int(np.argmin(np.linalg.norm(db.poses - gt_xy, axis=1)))
        gt_room = plan.room_of(gt_xy[None])[0]
        query = None
        for method in setup.methods:
            family, arg = parse_method(method)
            if family == "icp":
                scan = horizontal_scan(render_furnished_depth(scene.furnished, gt, *LOCALIZE_DIMS))
                pose, _ = icp_localize(scan, plan, db.poses, setup.icp)
                out[method].append((pose.distance(gt), None, None,
                                    bool(plan.room_of(pose.as_array()[None])[0] == gt_room)))
                continue
            if family == "pose":
                top, pose_xy = nearest, db.poses[nearest]
            elif family == "oracle":
                top = scorer(arg).best(layout)[0]
                pose_xy = db.poses[top]
            else:
                if setup.layout_params is None:
                    raise EvalError(f"method {method!r} needs trained layout params")
                if query is None:
                    query = render_furnished_depth(scene.furnished, gt, *EMBED_DIMS)
                cfg = replace(setup.pipeline, stages=STAGE_PRESETS[family])
                if arg is not None:
                    cfg = replace(cfg, vdr_n=arg)
                res = localize_full(query, plan, db, setup.layout_params, cfg,
                                    setup.query_params, gt_pose=gt)
                top, pose_xy = res.retrieved_index, res.final_pose.as_array()
            err = float(np.linalg.norm(pose_xy - gt_xy))
            room_ok = bool(plan.room_of(np.asarray(pose_xy)[None])[0] == gt_room)
            out[method].append((err, bool(layout_hit(top)), top == nearest, room_ok))
    return out


def _scene_job(args):
    scene, setup, resolution, clearance = args
    return evaluate_scene(scene, setup, resolution, clearance)


def run_scenes(scenes, setup: EvalSetup, resolution: float, clearance: float, jobs: int = 1) -> list:
    """Evaluate every scene, in order, optionally across worker processes."""
    work = [(s, setup, resolution, clearance) for s in scenes]
    if jobs <= 1 or len(work) <= 1:
        return [_scene_job(w) for w in work]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_scene_job, work))


def _rows(methods, per_scene) -> tuple:
    rows = []
    for m in methods:
        recs = [r for scene in per_scene for r in scene[m]]
        errors = tuple(r[0] for r in recs)
        has_retrieval = recs and recs[0][1] is not None
        rows.append(EvalRow(
            m, errors,
            tuple(r[1] for r in recs) if has_retrieval else (),
            tuple(r[2] for r in recs) if has_retrieval else (),
            tuple(r[3] for r in recs)))
    return tuple(rows)


def evaluate_suite(corpus: CorpusConfig, setup: EvalSetup, jobs: int = 1, name: str = "main",
                   scenes=None) -> EvalReport:
    """Run every method of `setup` on the corpus and aggregate per-method rows."""
    if not setup.methods:
        raise EvalError("no methods to evaluate")
    for m in setup.methods:
        parse_method(m)
    if _needs_params(setup.methods) and setup.layout_params is None:
        raise EvalError("learned methods need trained layout params")
    scenes = build_corpus(corpus) if scenes is None else scenes
    if not scenes:
        raise EvalError("empty corpus")
    per_scene = run_scenes(scenes, setup, corpus.resolution, corpus.clearance, jobs)
    return EvalReport(name, _rows(setup.methods, per_scene), corpus.describe())


def vdr_sweep(corpus: CorpusConfig, setup: EvalSetup, ns=(1, 10, 50, 200), jobs: int = 1,
              scenes=None) -> EvalReport:
    """VDR-only and VDR+LPO rows for every sample count, from identical retrievals."""
    if not ns or min(ns) < 1:
        raise EvalError("sample counts must be >= 1")
    methods = tuple(m for n in ns for m in (f"vdr@{n}", f"vdr+lpo@{n}"))
    return evaluate_suite(corpus, replace(setup, methods=methods), jobs, "vdr-sweep", scenes)


def metric_ablation(corpus: CorpusConfig, jobs: int = 1, scenes=None) -> EvalReport:
    """Nearest-grid-pose row plus one oracle row per layout metric."""
    setup = EvalSetup(methods=("pose",) + tuple(f"oracle:{k}" for k in KINDS))
    return evaluate_suite(corpus, setup, jobs, "metric-ablation", scenes)


def relabel(report: EvalReport, suffix: str) -> tuple:
    return tuple(replace(r, method=f"{r.method} [{suffix}]") for r in report.rows)


def furniture_sweep(corpus: CorpusConfig, setup: EvalSetup, levels=("empty", "simple", "full"),
                    jobs: int = 1) -> EvalReport:
    rows = []
    for level in levels:
        rows += relabel(evaluate_suite(replace(corpus, level=level), setup, jobs), level)
    return EvalReport("furniture", tuple(rows), {**corpus.describe(), "level": list(levels)})


def grid_resolution_sweep(corpus: CorpusConfig, setup: EvalSetup, resolutions=(0.5, 1.0),
                          jobs: int = 1) -> EvalReport:
    rows = []
    for res in resolutions:
        rows += relabel(evaluate_suite(replace(corpus, resolution=res), setup, jobs), f"grid {res:g}m")
    return EvalReport("grid-resolution", tuple(rows), {**corpus.describe(), "resolution": list(resolutions)})
