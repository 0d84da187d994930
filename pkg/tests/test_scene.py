import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from shapely.geometry import Polygon

from floorloc.scene import (FURNITURE_COUNTS, FloorPlan, FurnishedScene, GenerationError,
                            GenerationParams, PlanParseError, Pose, SamplingError,
                            ValidationError, extrude, generate_floorplan, load_furnished,
                            load_plan, place_furniture, sample_query_poses, save_plan)

SQUARE = ((0.0, 0.0), (4.0, 0.0), (4.0, 4.0), (0.0, 4.0))
L_SHAPE = ((0.0, 0.0), (4.0, 0.0), (4.0, 2.0), (2.0, 2.0), (2.0, 4.0), (0.0, 4.0))


def test_four_rooms_tile_bounds():
    plan = generate_floorplan(1, GenerationParams(size=(10.0, 8.0), room_count=(4, 4)))
    assert len(plan.rooms) == 4
    assert plan.room_areas().sum() == pytest.approx(80.0, rel=1e-9)
    assert all(all(x in (0.0, 10.0) or 0 < x < 10 for x, _ in r) for r in plan.rooms)


def test_generation_is_deterministic():
    params = GenerationParams(size=(10.0, 8.0), room_count=(4, 4))
    assert generate_floorplan(1, params) == generate_floorplan(1, params)


def test_single_room_equals_bounds():
    plan = generate_floorplan(2, GenerationParams(size=(6.0, 6.0), room_count=(1, 1)))
    assert len(plan.rooms) == 1
    xs = sorted({x for x, _ in plan.rooms[0]})
    ys = sorted({y for _, y in plan.rooms[0]})
    assert xs == [0.0, 6.0] and ys == [0.0, 6.0]


def test_infeasible_generation():
    with pytest.raises(GenerationError):
        generate_floorplan(0, GenerationParams(size=(6.0, 6.0), min_room_side=7.0))
    with pytest.raises(GenerationError):
        generate_floorplan(0, GenerationParams(size=(6.0, 6.0), min_room_side=3.5, room_count=(3, 3)))


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), merge=st.sampled_from([0.0, 0.5, 1.0]))
def test_partition_property(seed, merge):
    params = GenerationParams(size=(9.3, 7.1), room_count=(2, 6), merge_prob=merge)
    plan = generate_floorplan(seed, params)
    assert plan.room_areas().sum() == pytest.approx(9.3 * 7.1, rel=1e-9)
    for room in plan.rooms:
        assert len(room) >= 4
        assert Polygon(room).is_valid


def test_merging_produces_l_shapes():
    plans = [generate_floorplan(s, GenerationParams(merge_prob=1.0, room_count=(3, 5)))
             for s in range(20)]
    assert any(len(r) == 6 for p in plans for r in p.rooms)


def test_plan_invariants_rejected():
    with pytest.raises(ValidationError):
        FloorPlan(rooms=(SQUARE,), ceiling_height=2.6, camera_height=2.7)
    with pytest.raises(ValidationError):
        FloorPlan(rooms=(((0, 0), (4, 4), (4, 0), (0, 4)),))        # bow tie
    with pytest.raises(ValidationError):
        FloorPlan(rooms=(SQUARE, ((2, 2), (6, 2), (6, 6), (2, 6))))  # overlap
    with pytest.raises(ValidationError):
        FloorPlan(rooms=(((0, 0), (4, 0), (0, 4)),))                 # triangle


def test_extrude_counts():
    square = extrude(FloorPlan(rooms=(SQUARE,)))
    assert square.n_walls == 4 and len(square.floors) == 1 and len(square.ceilings) == 1
    quads = square.wall_quads()
    assert quads[..., 2].min() == 0.0 and quads[..., 2].max() == 2.6
    assert extrude(FloorPlan(rooms=(L_SHAPE,))).n_walls == 6
    two = extrude(FloorPlan(rooms=(SQUARE, ((4, 0), (8, 0), (8, 4), (4, 4)))))
    shared = [w for w in two.walls if np.allclose(sorted(w[:, 0]), [4, 4])]
    assert len(shared) == 2
    # normals point into the owning room
    mids = two.walls.mean(axis=1) + 0.01 * two.normals
    rooms = FloorPlan(rooms=(SQUARE, ((4, 0), (8, 0), (8, 4), (4, 4)))).room_of(mids)
    assert (rooms == two.wall_room).all()


def test_furniture_levels():
    plan = generate_floorplan(5, GenerationParams())
    assert place_furniture(plan, "empty", 1).furniture == ()
    assert place_furniture(plan, "full", 3) == place_furniture(plan, "full", 3)
    simple, full = place_furniture(plan, "simple", 3), place_furniture(plan, "full", 3)
    assert len(full.furniture) > len(simple.furniture)
    n = len(plan.rooms)
    assert FURNITURE_COUNTS["simple"][0] * n <= len(simple.furniture) <= FURNITURE_COUNTS["simple"][1] * n
    assert FURNITURE_COUNTS["full"][0] * n <= len(full.furniture) <= FURNITURE_COUNTS["full"][1] * n
    for b in full.furniture:
        assert b.height < plan.ceiling_height


def test_furniture_keeps_queries_clear():
    plan = generate_floorplan(6, GenerationParams())
    poses = sample_query_poses(plan, 10, 0)
    f = place_furniture(plan, "full", 9, keep_clear=poses)
    xy = np.array([[p.x, p.y] for p in poses])
    for b in f.furniture:
        assert (b.distance_to(xy) > 0.1).all()


def test_query_pose_clearance():
    plan = FloorPlan(rooms=(SQUARE,))
    poses = sample_query_poses(plan, 200, 4, clearance=0.3)
    xy = np.array([[p.x, p.y] for p in poses])
    assert ((xy > 0.3) & (xy < 3.7)).all()
    assert poses == sample_query_poses(plan, 200, 4, clearance=0.3)
    with pytest.raises(SamplingError):
        sample_query_poses(plan, 5, 0, clearance=2.1)


def test_plan_round_trip(tmp_path):
    plan = generate_floorplan(11, GenerationParams(merge_prob=0.5))
    furnished = place_furniture(plan, "simple", 2)
    path = tmp_path / "p.json"
    save_plan(path, furnished)
    assert load_plan(path) == plan
    assert load_furnished(path) == furnished
    doc = json.loads(path.read_text())
    assert set(doc) == {"id", "ceiling_height", "camera_height", "rooms", "furniture", "level", "seed", "furniture_seed"}


def test_parse_errors(tmp_path):
    plan = FloorPlan(rooms=(SQUARE,))
    path = tmp_path / "p.json"
    save_plan(path, plan)
    doc = json.loads(path.read_text())
    del doc["ceiling_height"]
    path.write_text(json.dumps(doc))
    with pytest.raises(PlanParseError, match="ceiling_height"):
        load_plan(path)
    path.write_text('{"id": "x",\n "rooms": [}')
    with pytest.raises(PlanParseError, match="line 2"):
        load_plan(path)
    doc = json.loads(json.dumps({"id": "x", "ceiling_height": 2.6, "camera_height": 1.6,
                                 "rooms": [[[0, 0], [4, 4], [4, 0], [0, 4]]]}))
    path.write_text(json.dumps(doc))
    with pytest.raises(ValidationError, match="self-intersecting"):
        load_plan(path)


def test_pose_helpers():
    assert Pose(0, 0).distance(Pose(3, 4)) == 5.0
    assert Pose.from_array(np.array([1.5, 2.0])) == Pose(1.5, 2.0)
    plan = FloorPlan(rooms=(SQUARE, ((4, 0), (8, 0), (8, 4), (4, 4))))
    assert list(plan.room_of([[1, 1], [5, 1], [9, 1]])) == [0, 1, -1]


def test_furnished_scene_validation():
    plan = FloorPlan(rooms=(SQUARE,))
    from floorloc.scene import Box
    with pytest.raises(ValidationError):
        FurnishedScene(plan, (Box(3.5, 3.5, 4.5, 4.5, 1.0),), "simple", 0)
    with pytest.raises(ValidationError):
        FurnishedScene(plan, (Box(1, 1, 2, 2, 1.0),), "empty", 0)
    with pytest.raises(ValidationError):
        FurnishedScene(plan, (Box(1, 1, 2, 2, 3.0),), "full", 0)
