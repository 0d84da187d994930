"""Floor plans, query poses and furniture clutter.

A floor plan is a set of disjoint room polygons (metres, counter-clockwise)
plus the ceiling and camera heights. Extruding it gives the 3D reference
model used by the renderer: one vertical wall quad per polygon edge and a
floor and ceiling polygon per room.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
from shapely.geometry import Polygon, box as shapely_box
from shapely.ops import unary_union

from ._rng import rng_for

LEVELS = ("empty", "simple", "full")
FURNITURE_COUNTS = {"empty": (0, 0), "simple": (2, 5), "full": (6, 12)}
# share of boxes that are tall cabinets reaching above camera height; the rest are table/sofa height
TALL_FRACTION = 0.25

DEFAULT_CEILING_HEIGHT = 2.6
DEFAULT_CAMERA_HEIGHT = 1.6
DEFAULT_CLEARANCE = 0.3


class SceneError(ValueError):
    pass


class ValidationError(SceneError):
    pass


class GenerationError(SceneError):
    pass


class PlacementError(SceneError):
    pass


class SamplingError(SceneError):
    pass


class PlanParseError(SceneError):
    pass


@dataclass(frozen=True)
class Pose:
    x: float
    y: float

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y], dtype=float)

    def distance(self, other: "Pose") -> float:
        return math.hypot(self.x - other.x, self.y - other.y)

    @classmethod
    def from_array(cls, xy) -> "Pose":
        return cls(float(xy[0]), float(xy[1]))


def signed_area(poly: np.ndarray) -> float:
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def points_in_polygon(xy: np.ndarray, poly: np.ndarray) -> np.ndarray:
    """Even-odd crossing test; boundary points are not reliably classified."""
    xy = np.atleast_2d(xy)
    px, py = xy[:, 0:1], xy[:, 1:2]
    ax, ay = poly[:, 0], poly[:, 1]
    bx, by = np.roll(ax, -1), np.roll(ay, -1)
    straddle = (ay > py) != (by > py)
    with np.errstate(divide="ignore", invalid="ignore"):
        x_cross = ax + (py - ay) * (bx - ax) / (by - ay)
    crossings = straddle & (px < x_cross)
    return (crossings.sum(axis=1) % 2) == 1


def point_segment_distance(xy: np.ndarray, segments: np.ndarray) -> np.ndarray:
    """Distances (N, S) from points to segments given as (S, 2, 2)."""
    xy = np.atleast_2d(xy)
    a = segments[:, 0]
    ab = segments[:, 1] - a
    ap = xy[:, None, :] - a[None]
    denom = np.maximum((ab * ab).sum(-1), 1e-300)
    t = np.clip((ap * ab[None]).sum(-1) / denom, 0.0, 1.0)
    closest = a[None] + t[..., None] * ab[None]
    return np.linalg.norm(xy[:, None, :] - closest, axis=-1)


def _polygon_edges(poly: np.ndarray) -> np.ndarray:
    return np.stack([poly, np.roll(poly, -1, axis=0)], axis=1)


@dataclass(frozen=True)
class FloorPlan:
    rooms: tuple
    ceiling_height: float = DEFAULT_CEILING_HEIGHT
    camera_height: float = DEFAULT_CAMERA_HEIGHT
    id: str = "plan"
    seed: int | None = None

    def __post_init__(self):
        rooms = tuple(tuple((float(x), float(y)) for x, y in room) for room in self.rooms)
        object.__setattr__(self, "rooms", rooms)
        object.__setattr__(self, "ceiling_height", float(self.ceiling_height))
        object.__setattr__(self, "camera_height", float(self.camera_height))
        self.validate()

    def validate(self):
        if not self.rooms:
            raise ValidationError("plan has no rooms")
        if not (0.0 < self.camera_height < self.ceiling_height):
            raise ValidationError(
                f"camera_height {self.camera_height} must lie in (0, ceiling_height={self.ceiling_height})")
        shapes = []
        for k, room in enumerate(self.rooms):
            if len(room) < 4:
                raise ValidationError(f"room {k} has {len(room)} vertices, need at least 4")
            poly = Polygon(room)
            if not poly.exterior.is_simple or not poly.is_valid:
                raise ValidationError(f"room {k} polygon is self-intersecting")
            if signed_area(np.asarray(room)) <= 0.0:
                raise ValidationError(f"room {k} is not counter-clockwise")
            shapes.append(poly)
        for i in range(len(shapes)):
            for j in range(i + 1, len(shapes)):
                overlap = shapes[i].intersection(shapes[j]).area
                if overlap > 1e-9 * min(shapes[i].area, shapes[j].area):
                    raise ValidationError(f"rooms {i} and {j} overlap (area {overlap:.3g})")

    @cached_property
    def room_arrays(self) -> list:
        return [np.asarray(room, dtype=float) for room in self.rooms]

    @cached_property
    def walls(self) -> np.ndarray:
        return np.concatenate([_polygon_edges(p) for p in self.room_arrays])

    @cached_property
    def wall_room(self) -> np.ndarray:
        return np.concatenate([np.full(len(p), k) for k, p in enumerate(self.room_arrays)])

    @property
    def bounds(self) -> tuple:
        pts = np.concatenate(self.room_arrays)
        return (*pts.min(axis=0), *pts.max(axis=0))

    def room_areas(self) -> np.ndarray:
        return np.array([signed_area(p) for p in self.room_arrays])

    def room_of(self, xy) -> np.ndarray:
        """Index of the room containing each point, -1 outside every room."""
        xy = np.atleast_2d(np.asarray(xy, dtype=float))
        out = np.full(len(xy), -1)
        for k, poly in enumerate(self.room_arrays):
            inside = points_in_polygon(xy, poly)
            out[inside & (out < 0)] = k
        return out

    def wall_distance(self, xy) -> np.ndarray:
        xy = np.atleast_2d(np.asarray(xy, dtype=float))
        return point_segment_distance(xy, self.walls).min(axis=1)

    def contains(self, xy, clearance: float = 0.0) -> np.ndarray:
        """Points strictly inside a room and at least `clearance` from every wall."""
        xy = np.atleast_2d(np.asarray(xy, dtype=float))
        inside = self.room_of(xy) >= 0
        dist = self.wall_distance(xy)
        return inside & (dist >= clearance) & (dist > 0.0)


@dataclass(frozen=True)
class Box:
    """Axis-aligned furniture box standing on the floor."""
    xmin: float
    ymin: float
    xmax: float
    ymax: float
    height: float

    @property
    def footprint(self) -> list:
        return [[self.xmin, self.ymin], [self.xmax, self.ymin],
                [self.xmax, self.ymax], [self.xmin, self.ymax]]

    def as_array(self) -> np.ndarray:
        return np.array([self.xmin, self.ymin, self.xmax, self.ymax, self.height])

    def distance_to(self, xy: np.ndarray) -> np.ndarray:
        xy = np.atleast_2d(xy)
        dx = np.maximum(np.maximum(self.xmin - xy[:, 0], xy[:, 0] - self.xmax), 0.0)
        dy = np.maximum(np.maximum(self.ymin - xy[:, 1], xy[:, 1] - self.ymax), 0.0)
        return np.hypot(dx, dy)


@dataclass(frozen=True)
class Scene3D:
    """Extruded reference model: wall quads, floors, ceilings and optional boxes."""
    walls: np.ndarray            # (S, 2, 2) wall base segments
    normals: np.ndarray          # (S, 2) unit normals pointing into the owning room
    wall_room: np.ndarray        # (S,)
    floors: tuple                # per-room polygons at z = 0
    ceilings: tuple              # per-room polygons at z = ceiling_height
    ceiling_height: float
    camera_height: float
    boxes: np.ndarray = field(default_factory=lambda: np.zeros((0, 5)))

    @property
    def n_walls(self) -> int:
        return len(self.walls)

    def wall_quads(self) -> np.ndarray:
        """(S, 4, 3) corners of each vertical wall quad."""
        a, b = self.walls[:, 0], self.walls[:, 1]
        z0 = np.zeros((len(a), 1))
        z1 = np.full((len(a), 1), self.ceiling_height)
        return np.stack([np.hstack([a, z0]), np.hstack([b, z0]),
                         np.hstack([b, z1]), np.hstack([a, z1])], axis=1)


def extrude(plan: FloorPlan, boxes=()) -> Scene3D:
    walls = plan.walls.copy()
    edge = walls[:, 1] - walls[:, 0]
    length = np.linalg.norm(edge, axis=1, keepdims=True)
    normals = np.stack([-edge[:, 1], edge[:, 0]], axis=1) / length
    box_arr = np.array([b.as_array() for b in boxes]) if len(boxes) else np.zeros((0, 5))
    return Scene3D(
        walls=walls,
        normals=normals,
        wall_room=plan.wall_room.copy(),
        floors=tuple(plan.room_arrays),
        ceilings=tuple(plan.room_arrays),
        ceiling_height=plan.ceiling_height,
        camera_height=plan.camera_height,
        boxes=box_arr,
    )


@dataclass(frozen=True)
class FurnishedScene:
    plan: FloorPlan
    furniture: tuple = ()
    level: str = "empty"
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "furniture", tuple(self.furniture))
        if self.level not in LEVELS:
            raise ValidationError(f"unknown furniture level {self.level!r}")
        if self.level == "empty" and self.furniture:
            raise ValidationError("empty level must not carry furniture")
        rooms = [Polygon(r) for r in self.plan.rooms]
        for k, b in enumerate(self.furniture):
            if not b.height < self.plan.ceiling_height:
                raise ValidationError(f"box {k} is taller than the ceiling")
            fp = shapely_box(b.xmin, b.ymin, b.xmax, b.ymax)
            if not any(r.buffer(1e-9).contains(fp) for r in rooms):
                raise ValidationError(f"box {k} footprint is not inside a room")

    @cached_property
    def scene3d(self) -> Scene3D:
        return extrude(self.plan, self.furniture)


@dataclass(frozen=True)
class GenerationParams:
    size: tuple = (10.0, 8.0)
    min_room_side: float = 2.0
    room_count: tuple = (2, 5)
    merge_prob: float = 0.0
    equal_split_prob: float = 0.0
    split_jitter: float = 0.0        # equal splits land within +-jitter of the midpoint
    snap: float = 0.05
    ceiling_height: float = DEFAULT_CEILING_HEIGHT
    camera_height: float = DEFAULT_CAMERA_HEIGHT


def _split_position(rng, lo, hi, min_side, snap, equal, jitter=0.0):
    if equal:
        mid = 0.5 * (lo + hi)
        if jitter > 0:
            mid += float(rng.uniform(-jitter, jitter))
            if snap > 0:
                mid = lo + snap * round((mid - lo) / snap)
        return min(max(mid, lo + min_side), hi - min_side)
    a, b = lo + min_side, hi - min_side
    if snap > 0:
        ka, kb = math.ceil((a - lo) / snap - 1e-9), math.floor((b - lo) / snap + 1e-9)
        if ka <= kb:
            return lo + snap * int(rng.integers(ka, kb + 1))
    return float(rng.uniform(a, b))


def _bsp_rectangles(rng, params: GenerationParams, target: int) -> list:
    w, h = params.size
    rects = [(0.0, 0.0, float(w), float(h))]
    m = params.min_room_side
    while len(rects) < target:
        cand = [k for k, (x0, y0, x1, y1) in enumerate(rects)
                if x1 - x0 >= 2 * m - 1e-12 or y1 - y0 >= 2 * m - 1e-12]
        if not cand:
            break
        areas = np.array([(rects[k][2] - rects[k][0]) * (rects[k][3] - rects[k][1]) for k in cand])
        k = cand[int(rng.choice(len(cand), p=areas / areas.sum()))]
        x0, y0, x1, y1 = rects.pop(k)
        can_x, can_y = x1 - x0 >= 2 * m - 1e-12, y1 - y0 >= 2 * m - 1e-12
        split_x = can_x and (not can_y or (x1 - x0) >= (y1 - y0))
        equal = rng.random() < params.equal_split_prob
        if split_x:
            s = _split_position(rng, x0, x1, m, params.snap, equal, params.split_jitter)
            rects[k:k] = [(x0, y0, s, y1), (s, y0, x1, y1)]
        else:
            s = _split_position(rng, y0, y1, m, params.snap, equal, params.split_jitter)
            rects[k:k] = [(x0, y0, x1, s), (x0, s, x1, y1)]
    return rects


def _clean_ring(coords) -> list:
    """CCW ring without the closing vertex or collinear points."""
    pts = [tuple(round(c, 9) for c in p) for p in coords[:-1]]
    changed = True
    while changed and len(pts) > 3:
        changed = False
        for i in range(len(pts)):
            a, b, c = np.array(pts[i - 1]), np.array(pts[i]), np.array(pts[(i + 1) % len(pts)])
            if abs((b[0] - a[0]) * (c[1] - b[1]) - (b[1] - a[1]) * (c[0] - b[0])) < 1e-12:
                pts.pop(i)
                changed = True
                break
    if signed_area(np.array(pts)) < 0:
        pts.reverse()
    return pts


def _try_merge(rng, rooms: list) -> bool:
    """Merge one pair of adjacent rectangles into an L-shaped room."""
    pairs = []
    for i in range(len(rooms)):
        for j in range(i + 1, len(rooms)):
            if len(rooms[i]) != 4 or len(rooms[j]) != 4:
                continue
            a, b = Polygon(rooms[i]), Polygon(rooms[j])
            if a.intersection(b).length <= 0:
                continue
            u = unary_union([a, b])
            if u.geom_type != "Polygon" or len(u.interiors):
                continue
            ring = _clean_ring(list(u.exterior.coords))
            if len(ring) == 6:
                pairs.append((i, j, ring))
    if not pairs:
        return False
    i, j, ring = pairs[int(rng.integers(len(pairs)))]
    rooms[i] = ring
    rooms.pop(j)
    return True


def generate_floorplan(seed: int, params: GenerationParams = GenerationParams(),
                       plan_id: str | None = None) -> FloorPlan:
    """Recursive axis-aligned splits of the bounding rectangle, optionally
    merging neighbours into L-shaped rooms."""
    w, h = params.size
    lo, hi = params.room_count
    if lo < 1 or hi < lo:
        raise GenerationError(f"invalid room count range {params.room_count}")
    if params.min_room_side <= 0 or params.min_room_side > min(w, h):
        raise GenerationError(
            f"min_room_side {params.min_room_side} does not fit bounds {w}x{h}")
    rng = rng_for(seed, "floorplan")
    n_rooms = int(rng.integers(lo, hi + 1))
    n_merge = int(rng.binomial(n_rooms, params.merge_prob)) if params.merge_prob > 0 else 0
    rects = _bsp_rectangles(rng, params, n_rooms + n_merge)
    if len(rects) < n_rooms:
        raise GenerationError(
            f"cannot fit {n_rooms} rooms of side >= {params.min_room_side} in {w}x{h}")
    rooms = [_clean_ring(list(shapely_box(*r).exterior.coords)) for r in rects]
    for _ in range(len(rects) - n_rooms):
        if not _try_merge(rng, rooms):
            break
    return FloorPlan(rooms=tuple(tuple(r) for r in rooms),
                     ceiling_height=params.ceiling_height,
                     camera_height=params.camera_height,
                     id=plan_id if plan_id is not None else f"plan-{seed}",
                     seed=int(seed))


def sample_query_poses(plan: FloorPlan, n: int, seed: int,
                       clearance: float = DEFAULT_CLEARANCE, avoid=(),
                       avoid_margin: float = 0.1) -> list:
    """Uniform poses over free space at least `clearance` from every wall.

    `avoid` is an optional sequence of furniture boxes the poses must stay
    `avoid_margin` away from.
    """
    if n < 1:
        raise SamplingError("n must be >= 1")
    feasible = unary_union([Polygon(r).buffer(-clearance, join_style=2) for r in plan.rooms])
    if feasible.is_empty or feasible.area <= 0:
        raise SamplingError(f"no free space at clearance {clearance}")
    rng = rng_for(seed, "queries")
    x0, y0, x1, y1 = plan.bounds
    out = []
    for _ in range(1000):
        xy = np.column_stack([rng.uniform(x0, x1, 4 * n), rng.uniform(y0, y1, 4 * n)])
        ok = plan.contains(xy, clearance)
        for b in avoid:
            ok &= b.distance_to(xy) > avoid_margin
        out.extend(Pose.from_array(p) for p in xy[ok])
        if len(out) >= n:
            return out[:n]
    raise SamplingError(f"could not sample {n} poses at clearance {clearance}")


def place_furniture(plan: FloorPlan, level: str, seed: int, keep_clear=(),
                    margin: float = 0.1, max_retries: int = 200) -> FurnishedScene:
    """Drop axis-aligned boxes into every room; boxes stay `margin` away from
    every pose in `keep_clear`."""
    if level not in LEVELS:
        raise PlacementError(f"unknown furniture level {level!r}")
    if level == "empty":
        return FurnishedScene(plan=plan, furniture=(), level=level, seed=seed)
    rng = rng_for(seed, "furniture", plan.id)
    clear = np.array([[p.x, p.y] for p in keep_clear]).reshape(-1, 2)
    lo, hi = FURNITURE_COUNTS[level]
    max_h = min(2.2, plan.ceiling_height - 0.1)
    boxes = []
    for k, room in enumerate(plan.room_arrays):
        poly = Polygon(room)
        rx0, ry0 = room.min(axis=0)
        rx1, ry1 = room.max(axis=0)
        count = int(rng.integers(lo, hi + 1))
        for _ in range(count):
            for _attempt in range(max_retries):
                bw, bd = rng.uniform(0.3, 1.2, 2)
                if rng.random() < TALL_FRACTION:
                    bh = float(rng.uniform(min(1.8, max_h - 0.1), max_h))
                else:
                    bh = float(rng.uniform(0.4, 1.0))
                if bw >= rx1 - rx0 or bd >= ry1 - ry0:
                    continue
                bx = float(rng.uniform(rx0, rx1 - bw))
                by = float(rng.uniform(ry0, ry1 - bd))
                b = Box(bx, by, bx + float(bw), by + float(bd), bh)
                if not poly.contains(shapely_box(b.xmin, b.ymin, b.xmax, b.ymax)):
                    continue
                if len(clear) and (b.distance_to(clear) <= margin).any():
                    continue
                boxes.append(b)
                break
            else:
                raise PlacementError(f"could not place box in room {k} after {max_retries} tries")
    return FurnishedScene(plan=plan, furniture=tuple(boxes), level=level, seed=seed)


def plan_to_dict(plan: FloorPlan, furnished: FurnishedScene | None = None) -> dict:
    return {
        "id": plan.id,
        "ceiling_height": plan.ceiling_height,
        "camera_height": plan.camera_height,
        "rooms": [[list(v) for v in room] for room in plan.rooms],
        "furniture": [{"footprint": b.footprint, "height": b.height}
                      for b in (furnished.furniture if furnished else ())],
        "level": furnished.level if furnished else "empty",
        "seed": plan.seed,
        "furniture_seed": furnished.seed if furnished else None,
    }


def save_plan(path, plan, furnished: FurnishedScene | None = None):
    if isinstance(plan, FurnishedScene):
        plan, furnished = plan.plan, plan
    Path(path).write_text(json.dumps(plan_to_dict(plan, furnished), indent=1))


def _field(obj, name, kind=None):
    if name not in obj:
        raise PlanParseError(f"missing field '{name}'")
    value = obj[name]
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise PlanParseError(f"field '{name}': expected a number, got {value!r}")
        return float(value)
    return value


def _parse_point(p, where):
    if (not isinstance(p, list) or len(p) != 2
            or not all(isinstance(c, (int, float)) and not isinstance(c, bool) for c in p)):
        raise PlanParseError(f"field '{where}': expected [x, y] pair, got {p!r}")
    return float(p[0]), float(p[1])


def _parse(text: str):
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise PlanParseError(f"line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    if not isinstance(obj, dict):
        raise PlanParseError("top level must be a JSON object")
    rooms_raw = _field(obj, "rooms")
    if not isinstance(rooms_raw, list):
        raise PlanParseError("field 'rooms': expected a list of polygons")
    rooms = []
    for k, room in enumerate(rooms_raw):
        if not isinstance(room, list):
            raise PlanParseError(f"field 'rooms[{k}]': expected a list of points")
        rooms.append(tuple(_parse_point(p, f"rooms[{k}][{i}]") for i, p in enumerate(room)))
    seed = obj.get("seed")
    plan = FloorPlan(rooms=tuple(rooms),
                     ceiling_height=_field(obj, "ceiling_height", float),
                     camera_height=_field(obj, "camera_height", float),
                     id=str(_field(obj, "id")),
                     seed=None if seed is None else int(seed))
    boxes = []
    for k, item in enumerate(obj.get("furniture", [])):
        fp = [_parse_point(p, f"furniture[{k}].footprint[{i}]")
              for i, p in enumerate(_field(item, "footprint"))]
        xs, ys = [p[0] for p in fp], [p[1] for p in fp]
        boxes.append(Box(min(xs), min(ys), max(xs), max(ys), _field(item, "height", float)))
    return plan, boxes, obj.get("level", "empty"), obj.get("furniture_seed")


def load_plan(path) -> FloorPlan:
    return _parse(Path(path).read_text())[0]


def load_furnished(path) -> FurnishedScene:
    plan, boxes, level, fseed = _parse(Path(path).read_text())
    return FurnishedScene(plan=plan, furniture=tuple(boxes), level=level,
                          seed=0 if fseed is None else int(fseed))
