"""Acceptance suite: one test per criterion, tolerances as pinned in the build contract.

Run alone with ``pytest tests/test_acceptance.py -v``. The trained branches
are built once per session from the desk training plans (seeds 100..119,
disjoint from the evaluation corpus).
"""

import time

import numpy as np
import pytest

from floorloc.cli import main as cli_main
from floorloc.embed import (LayoutTrainConfig, QueryTrainConfig, build_pool, encode, init_params,
                            loss_decode, loss_kd_lr, loss_l2, loss_log_ratio,
                            loss_log_ratio_cross, train_layout_branch, train_query_branch)
from floorloc._rng import subseed
from floorloc.embed.model import forward
from floorloc.embed.training import query_pairs
from floorloc.eval import (DESK_PARAMS, CorpusConfig, EvalSetup, evaluate_suite, export_report,
                           metric_ablation, vdr_sweep)
from floorloc.localize import FreeSpace, LPOConfig, latent_pose_optimize
from floorloc.metrics import KINDS, chamfer_3d
from floorloc.render import (EMBED_DIMS, backproject, depth_pose_jacobian, fd_depth_jacobian,
                             render_layout_depth)
from floorloc.scene import FloorPlan, Pose, extrude, generate_floorplan, sample_query_poses
from oracles import brute_chamfer, fd_grad, surface_residual

TRAIN_SEEDS = range(100, 120)
HELD_OUT_SEEDS = range(700, 705)
DESK = CorpusConfig()                     # 20 scenes x 10 queries, 0.5 m grid, full furniture


def _rel(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-12)


@pytest.fixture(scope="session")
def train_plans():
    return [generate_floorplan(s, DESK_PARAMS) for s in TRAIN_SEEDS]


@pytest.fixture(scope="session")
def layout_params(train_plans):
    params, _ = train_layout_branch(train_plans, LayoutTrainConfig())
    return params


@pytest.fixture(scope="session")
def query_params(train_plans, layout_params):
    before = layout_params.to_bytes()
    params, _ = train_query_branch(train_plans, layout_params, QueryTrainConfig())
    return params, before


def test_criterion_1_gradient_correctness():
    t0 = time.perf_counter()
    rng = np.random.default_rng(1)
    checked = 0
    for k in range(10):
        plan = generate_floorplan(k, DESK_PARAMS)
        scene = extrude(plan)
        pose = sample_query_poses(plan, 1, k)[0]
        an = depth_pose_jacobian(scene, pose, *EMBED_DIMS)
        fd = fd_depth_jacobian(scene, pose, *EMBED_DIMS, step=1e-4)
        # non-edge pixels with a non-zero derivative (floor/ceiling rows are exactly zero)
        ok = an.valid & fd.valid & (np.abs(fd.d_depth_dx) + np.abs(fd.d_depth_dy) > 1e-6)
        idx = np.flatnonzero(ok)
        pick = rng.choice(idx, size=min(len(idx), 150), replace=False)
        a = np.stack([an.d_depth_dx.ravel()[pick], an.d_depth_dy.ravel()[pick]], axis=1)
        f = np.stack([fd.d_depth_dx.ravel()[pick], fd.d_depth_dy.ravel()[pick]], axis=1)
        err = np.linalg.norm(a - f, axis=1) / np.linalg.norm(f, axis=1)
        assert err.max() < 1e-4
        checked += len(pick)
    assert checked >= 1000

    unit = lambda: (lambda v: v / np.linalg.norm(v))(rng.normal(size=16))
    configs = 0
    for _ in range(25):
        g = [unit() for _ in range(3)]
        ch = rng.uniform(0.1, 3.0, 2)
        _, grads = loss_log_ratio(*g, *ch)
        for k in range(3):
            f = lambda x, k=k: loss_log_ratio(*(g[:k] + [x] + g[k + 1:]), *ch)[0]
            assert _rel(grads[k], fd_grad(f, g[k])) < 1e-5
        f_p, g_p = unit(), unit()
        _, grad = loss_log_ratio_cross(f_p, g[1], g[2], *ch)
        assert _rel(grad, fd_grad(lambda x: loss_log_ratio_cross(x, g[1], g[2], *ch)[0], f_p)) < 1e-5
        _, grad = loss_kd_lr(f_p, g_p, g[1], g[2])
        assert _rel(grad, fd_grad(lambda x: loss_kd_lr(x, g_p, g[1], g[2])[0], f_p)) < 1e-5
        _, grad = loss_l2(f_p, g_p)
        assert _rel(grad, fd_grad(lambda x: loss_l2(x, g_p)[0], f_p)) < 1e-5
        pred, target = rng.normal(size=(4, 8)), rng.normal(size=(4, 8))
        _, grad = loss_decode(pred, target)
        assert _rel(grad, fd_grad(lambda x: loss_decode(x, target)[0], pred)) < 1e-5
        configs += 5
    assert configs >= 100
    assert time.perf_counter() - t0 < 60


def test_criterion_2_oracle_retrieval():
    t0 = time.perf_counter()
    row = evaluate_suite(DESK, EvalSetup(methods=("oracle",))).row("oracle")
    assert len(row.errors) == 200
    assert row.layout_r1 == 1.0
    assert row.pose_r1 >= 0.85
    assert time.perf_counter() - t0 < 300


def test_criterion_3_icp_clean_and_furnished():
    # half the desk corpus keeps the multi-start ICP runs to a few minutes
    clean = evaluate_suite(CorpusConfig(n_scenes=10, level="empty"), EvalSetup(methods=("icp",)))
    full = evaluate_suite(CorpusConfig(n_scenes=10, level="full"), EvalSetup(methods=("icp",)))
    clean_cm, full_cm = clean.row("icp").median_cm, full.row("icp").median_cm
    assert clean_cm <= 1.0
    assert full_cm >= 5 * clean_cm


def test_criterion_4_lpo_basin(layout_params):
    t0 = time.perf_counter()
    rng = np.random.default_rng(4)
    hits = 0
    for _ in range(100):
        w, h = rng.uniform(3.0, 6.0, 2)
        plan = FloorPlan(rooms=(((0.0, 0.0), (w, 0.0), (w, h), (0.0, h)),))
        gt = Pose(*rng.uniform((0.6, 0.6), (w - 0.6, h - 0.6)))
        # layout branch as both query and reference encoder
        query = encode(layout_params, render_layout_depth(extrude(plan), gt, *EMBED_DIMS))
        r, a = 0.25 * np.sqrt(rng.uniform()), rng.uniform(0, 2 * np.pi)
        init = Pose(gt.x + r * np.cos(a), gt.y + r * np.sin(a))
        pose, _ = latent_pose_optimize(init, query, plan, layout_params, LPOConfig(), FreeSpace(plan))
        hits += pose.distance(gt) < 0.05
    assert hits >= 90
    assert time.perf_counter() - t0 < 300


def test_criterion_5_pipeline_ordering(layout_params, query_params):
    setup = EvalSetup(methods=("retrieval", "vdr", "vdr+lpo", "vdr+decode"),
                      layout_params=layout_params, query_params=query_params[0])
    rep = evaluate_suite(DESK, setup)
    med = {r.method: r.median_cm for r in rep.rows}
    assert med["retrieval"] > med["vdr"] >= med["vdr+lpo"]
    assert med["vdr+decode"] > med["vdr+lpo"]


def test_criterion_6_metric_ablation():
    for res in (0.5, 1.0):
        rep = metric_ablation(CorpusConfig(kind="ambiguity", level="empty", resolution=res))
        chamfer = rep.row("oracle:chamfer3d")
        others = [rep.row(f"oracle:{k}") for k in KINDS if k != "chamfer3d"]
        table = export_report(rep, "markdown")
        assert chamfer.pose_r1 > max(r.pose_r1 for r in others), f"grid {res} m\n{table}"
        assert chamfer.correct_room > max(r.correct_room for r in others), f"grid {res} m\n{table}"


def test_criterion_7_vdr_sweep(layout_params, query_params):
    setup = EvalSetup(layout_params=layout_params, query_params=query_params[0])
    rep = vdr_sweep(DESK, setup, ns=(1, 10, 50, 200))
    vdr = [rep.row(f"vdr@{n}").median_cm for n in (1, 10, 50, 200)]
    lpo = [rep.row(f"vdr+lpo@{n}").median_cm for n in (1, 10, 50, 200)]
    assert all(a >= b for a, b in zip(vdr, vdr[1:])), vdr
    assert lpo[0] - lpo[-1] < vdr[0] - vdr[-1], (vdr, lpo)


def test_criterion_8_invariant_suites(tmp_path):
    # surface residual of backprojected renders
    for k in range(3):
        plan = generate_floorplan(k, DESK_PARAMS)
        for pose in sample_query_poses(plan, 2, k):
            cloud = backproject(render_layout_depth(extrude(plan), pose, 128, 64))
            assert surface_residual(plan, (pose.x, pose.y), cloud).max() < 1e-9
    # Chamfer against the O(n^2) definition
    rng = np.random.default_rng(8)
    for _ in range(20):
        a = rng.normal(size=(rng.integers(1, 501), 3))
        b = rng.normal(size=(rng.integers(1, 501), 3))
        assert abs(chamfer_3d(a, b) - brute_chamfer(a, b)) < 1e-9
    # threshold monotonicity in every exported row
    rep = evaluate_suite(CorpusConfig(n_scenes=2, queries_per_scene=4),
                         EvalSetup(methods=("pose", "oracle", "oracle:edges", "icp")))
    for row in rep.rows:
        f = row.fractions()
        assert f["under_1cm"] <= f["under_5cm"] <= f["under_10cm"] <= f["under_1m"]
    # bitwise determinism of generate / train / eval, independent of --jobs
    runs = []
    for tag, jobs in (("a", 1), ("b", 2)):
        d = tmp_path / tag
        assert cli_main(["generate", "--scenes", "2", "--queries", "2", "--seed", "3",
                         "--out", str(d / "scenes")]) == 0
        assert cli_main(["train", "layout", "--scenes", str(d / "scenes"), "--epochs", "2",
                         "--out", str(d / "model")]) == 0
        assert cli_main(["eval", "main", "--scenes", "2", "--queries", "2", "--seed", "3",
                         "--methods", "pose,oracle,icp,vdr+lpo", "--resolution", "1.0",
                         "--layout-params", str(d / "model" / "layout.params"),
                         "--jobs", str(jobs), "--out", str(d / "eval")]) == 0
        runs.append(d)
    files = ["scenes/scene_000.json", "scenes/scene_001.json", "scenes/queries.json",
             "model/layout.params", "model/layout_trace.csv", "eval/main.csv", "eval/main.md",
             "eval/main_queries.csv", "eval/main.json"]
    for name in files:
        assert (runs[0] / name).read_bytes() == (runs[1] / name).read_bytes(), name


def test_criterion_9_frozen_teacher(layout_params, query_params):
    params, before = query_params
    assert layout_params.to_bytes() == before
    pools = [build_pool(generate_floorplan(s, DESK_PARAMS), s, 2.0, level="full")
             for s in HELD_OUT_SEEDS]
    xf, g = query_pairs(pools, layout_params)
    held_out = lambda p: np.linalg.norm(forward(p, xf)[1] - g, axis=1).mean()
    trained = held_out(params)
    # the exact initialisation query-branch training starts from
    baseline = held_out(init_params("query", subseed(QueryTrainConfig().seed, "query-init")))
    assert trained <= 0.5 * baseline
