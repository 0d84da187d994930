import math
import xml.etree.ElementTree as ET

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from floorloc.embed import init_params
from floorloc.eval import (CorpusConfig, EvalReport, EvalRow, EvalSetup, EvalError, OracleScorer,
                           build_corpus, distance_field_svg, evaluate_suite, export_report,
                           metric_ablation, oracle_embedder, parse_method, parse_report_csv,
                           plot_error_cdf, plot_vdr_sweep, svg_cell_colors, vdr_sweep, write_report)
from floorloc.eval.corpus import CorpusError
from floorloc.eval.figures import ramp
from floorloc.eval.report import CSV_COLUMNS
from floorloc.localize import LPOConfig, PipelineConfig, build_database
from floorloc.metrics import KINDS, MetricError
from floorloc.render import EMBED_DIMS, render_layout_depth
from floorloc.scene import FloorPlan, Pose, extrude, generate_floorplan

RECT = FloorPlan(rooms=(((0.0, 0.0), (5.0, 0.0), (5.0, 3.5), (0.0, 3.5)),))
SMALL = CorpusConfig(n_scenes=2, queries_per_scene=3, level="simple")


@pytest.fixture(scope="module")
def rect_oracle():
    return oracle_embedder(RECT, "chamfer3d", 0.5)


@pytest.fixture(scope="module")
def small_report():
    return evaluate_suite(SMALL, EvalSetup(methods=("pose", "oracle", "oracle:depth", "icp")))


def test_corpus_deterministic_and_seeded():
    a, b = build_corpus(SMALL), build_corpus(SMALL)
    assert [s.plan for s in a] == [s.plan for s in b]
    assert [s.queries for s in a] == [s.queries for s in b]
    assert [s.furnished.furniture for s in a] == [s.furnished.furniture for s in b]
    other = build_corpus(CorpusConfig(n_scenes=2, queries_per_scene=3, level="simple", seed=1))
    assert [s.plan.rooms for s in other] != [s.plan.rooms for s in a]
    for s in a:
        q = np.array([p.as_array() for p in s.queries])
        assert s.plan.contains(q, SMALL.clearance).all()
        for box in s.furnished.furniture:
            assert (box.distance_to(q) > 0).all()


def test_corpus_errors():
    with pytest.raises(CorpusError):
        CorpusConfig(n_scenes=0)
    with pytest.raises(CorpusError):
        CorpusConfig(kind="castle")
    with pytest.raises(CorpusError):
        build_corpus(SMALL, plans=[])


def test_ambiguity_corpus_has_near_duplicate_rooms():
    for s in build_corpus(CorpusConfig(n_scenes=5, kind="ambiguity")):
        sizes = np.array([np.ptp(r, axis=0) for r in s.plan.room_arrays])
        gap = np.abs(sizes[:, None] - sizes[None]).max(axis=2) + 9 * np.eye(len(sizes))
        assert gap.min() <= 0.3


def test_oracle_query_at_grid_pose_ranks_first(rect_oracle):
    s3 = extrude(RECT)
    for i in (0, 7, len(rect_oracle.db) - 1):
        q = render_layout_depth(s3, Pose.from_array(rect_oracle.db.poses[i]), *EMBED_DIMS)
        order, d = rect_oracle.rank(q)
        assert order[0] == i and d[0] == 0.0
        assert rect_oracle.best(q) == (i, 0.0)


@settings(max_examples=12, deadline=None)
@given(st.floats(0.35, 4.65), st.floats(0.35, 3.15))
def test_pruned_best_equals_full_argmin(rect_oracle, x, y):
    q = render_layout_depth(extrude(RECT), Pose(x, y), *EMBED_DIMS)
    d = rect_oracle.distances(q)
    i, v = rect_oracle.best(q)
    assert i == int(np.argmin(d)) and v == d[i]
    assert rect_oracle.distance(q, 3) == d[3]


def test_pruned_best_on_multi_room_plan():
    plan = generate_floorplan(11)
    orc = oracle_embedder(plan, "chamfer3d", 0.5)
    rng = np.random.default_rng(0)
    s3 = extrude(plan)
    for _ in range(5):
        i = rng.integers(len(orc.db))
        q = render_layout_depth(s3, Pose.from_array(orc.db.poses[i] + rng.uniform(-0.2, 0.2, 2)), *EMBED_DIMS)
        d = orc.distances(q)
        assert orc.best(q) == (int(np.argmin(d)), float(d.min()))


def test_oracle_errors():
    db = build_database(RECT, 1.0, None, EMBED_DIMS)
    with pytest.raises(MetricError):
        OracleScorer(db, "chamfer3d")       # no cached renders
    with pytest.raises(MetricError):
        oracle_embedder(RECT, "hausdorff")
    orc = oracle_embedder(RECT, "depth", 1.0)
    with pytest.raises(MetricError):
        orc.distances(render_layout_depth(extrude(RECT), Pose(1, 1), 32, 16))


def test_single_room_retrieval_error_within_grid_diagonal(rect_oracle):
    s3 = extrude(RECT)
    rng = np.random.default_rng(3)
    diag = 0.5 * math.sqrt(2)
    for _ in range(10):
        gt = Pose(*rng.uniform((0.3, 0.3), (4.7, 3.2)))
        i, _ = rect_oracle.best(render_layout_depth(s3, gt, *EMBED_DIMS))
        assert np.linalg.norm(rect_oracle.db.poses[i] - gt.as_array()) <= diag


def test_distance_field_svg(rect_oracle):
    pose = Pose.from_array(rect_oracle.db.poses[12] + 0.03)
    svg = distance_field_svg(RECT, pose, rect_oracle)
    root = ET.fromstring(svg)
    ns = "{http://www.w3.org/2000/svg}"
    rects = root.findall(f"{ns}rect")
    assert len(rects) == len(rect_oracle.db)
    assert len(root.findall(f"{ns}circle")) == 1 and len(root.findall(f"{ns}polygon")) == 1
    cells = svg_cell_colors(svg)
    d = np.array([c[0] for c in cells])
    assert int(np.argmin(d)) == 12
    # colour channels move monotonically from the low to the high end of the ramp
    order = np.argsort(d)
    rgb = np.array([cells[k][1] for k in order])
    assert (np.diff(rgb[:, 0]) <= 0).all() and (np.diff(rgb[:, 1]) <= 0).all()
    assert (np.diff(rgb[:, 2]) >= 0).all()


@given(st.lists(st.floats(0, 1), min_size=2, max_size=50))
def test_ramp_monotone(ts):
    c = ramp(np.sort(ts))
    assert (np.diff(c[:, 0]) <= 0).all() and (np.diff(c[:, 1]) <= 0).all()
    assert (np.diff(c[:, 2]) >= 0).all()


def test_parse_method():
    assert parse_method("oracle") == ("oracle", "chamfer3d")
    assert parse_method("lalaloc") == ("vdr+lpo", None)
    assert parse_method("vdr@10") == ("vdr", 10)
    assert parse_method("icp") == ("icp", None)
    for bad in ("oracle:hausdorff", "teleport", "vdr@0", "vdr@x"):
        with pytest.raises(EvalError):
            parse_method(bad)


def test_suite_errors():
    with pytest.raises(EvalError):
        evaluate_suite(SMALL, EvalSetup(methods=()))
    with pytest.raises(EvalError):
        evaluate_suite(SMALL, EvalSetup(methods=("lalaloc",)))
    with pytest.raises(EvalError):
        evaluate_suite(SMALL, EvalSetup(methods=("pose",)), scenes=[])


def test_report_rows(small_report):
    n = SMALL.n_scenes * SMALL.queries_per_scene
    assert small_report.methods == ["pose", "oracle", "oracle:depth", "icp"]
    for row in small_report.rows:
        assert len(row.errors) == n
        f = row.fractions()
        assert f["under_1cm"] <= f["under_5cm"] <= f["under_10cm"] <= f["under_1m"]
    pose = small_report.row("pose")
    assert pose.pose_r1 == 1.0 and pose.correct_room == 1.0
    assert small_report.row("oracle").layout_r1 == 1.0
    icp = small_report.row("icp")
    assert math.isnan(icp.layout_r1) and len(icp.room_hits) == n
    # the grid is anchored at the free-space bounds, so the nearest entry is within one cell diagonal
    assert max(pose.errors) <= SMALL.resolution * math.sqrt(2)


def test_report_deterministic_across_jobs(small_report):
    again = evaluate_suite(SMALL, EvalSetup(methods=("pose", "oracle", "oracle:depth", "icp")), jobs=2)
    assert export_report(again) == export_report(small_report)
    assert again.rows == small_report.rows


def test_csv_export_round_trip(small_report):
    text = export_report(small_report, "csv")
    assert text.splitlines()[0] == ",".join(CSV_COLUMNS)
    parsed = parse_report_csv(text)
    for rec, row in zip(parsed, small_report.rows):
        s = row.summary()
        assert rec["method"] == row.method
        for c in CSV_COLUMNS[1:]:
            assert rec[c] == s[c] or (math.isnan(rec[c]) and math.isnan(s[c]))
        assert rec["under_1cm"] <= rec["under_5cm"] <= rec["under_10cm"] <= rec["under_1m"]
    with pytest.raises(ValueError):
        parse_report_csv("method,recall\nx,1\n")
    with pytest.raises(ValueError):
        export_report(small_report, "latex")


def test_markdown_and_files(small_report, tmp_path):
    md = export_report(small_report, "markdown")
    lines = md.splitlines()
    assert lines[2].startswith("| Method | Layout R@1 | Pose R@1 | Median (cm)")
    assert sum(l.startswith("| ") for l in lines) == 1 + len(small_report.rows)
    paths = write_report(small_report, tmp_path, "r")
    assert sorted(p.name for p in paths) == ["r.csv", "r.json", "r.md", "r_queries.csv"]
    assert len((tmp_path / "r_queries.csv").read_text().splitlines()) == 1 + 4 * 6
    plot_error_cdf(small_report, tmp_path / "cdf.png")
    assert (tmp_path / "cdf.png").stat().st_size > 1000


@settings(max_examples=30)
@given(st.lists(st.floats(0, 5, allow_nan=False), min_size=1, max_size=40))
def test_threshold_fractions_monotone(errors):
    f = EvalRow("m", tuple(errors)).fractions()
    assert f["under_1cm"] <= f["under_5cm"] <= f["under_10cm"] <= f["under_1m"]


def test_metric_ablation_shape():
    corpus = CorpusConfig(n_scenes=1, queries_per_scene=2, level="empty", resolution=1.0)
    r = metric_ablation(corpus)
    assert r.methods == ["pose"] + [f"oracle:{k}" for k in KINDS]
    assert r.row("oracle:chamfer3d").layout_r1 == 1.0


def test_vdr_sweep_rows_and_plot(tmp_path):
    corpus = CorpusConfig(n_scenes=1, queries_per_scene=2, level="empty", resolution=1.0)
    lpo = LPOConfig(max_iterations=20, convergence_window=5)
    setup = EvalSetup(layout_params=init_params("layout", 0), pipeline=PipelineConfig(lpo=lpo))
    r = vdr_sweep(corpus, setup, ns=(1, 10))
    assert r.methods == ["vdr@1", "vdr+lpo@1", "vdr@10", "vdr+lpo@10"]
    # both modes of one n start from the same retrieval
    assert r.row("vdr@1").layout_hits == r.row("vdr+lpo@1").layout_hits
    plot_vdr_sweep(r, tmp_path / "sweep.png")
    assert (tmp_path / "sweep.png").stat().st_size > 1000
    with pytest.raises(EvalError):
        vdr_sweep(corpus, setup, ns=(0,))


def test_report_lookup():
    rep = EvalReport("x", (EvalRow("a", (0.1,)),))
    assert rep.row("a").median_cm == pytest.approx(10.0)
    with pytest.raises(KeyError):
        rep.row("b")
