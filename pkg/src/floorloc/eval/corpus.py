"""Seeded evaluation corpora: scenes, query poses and furniture."""

from __future__ import annotations

from dataclasses import asdict, dataclass, replace

from .._rng import subseed
from ..scene import (DEFAULT_CLEARANCE, FloorPlan, FurnishedScene, GenerationParams,
                     generate_floorplan, place_furniture, sample_query_poses)

# Desk corpus: mixed rectangular and L-shaped rooms.
DESK_PARAMS = GenerationParams(merge_prob=0.3)

# Near-duplicate rooms: mostly equal splits with a little jitter, and bounds
# that are not a multiple of any grid resolution.
AMBIGUITY_PARAMS = GenerationParams(size=(9.7, 7.3), min_room_side=1.8, room_count=(4, 6),
                                    equal_split_prob=0.9, split_jitter=0.15)

CORPUS_KINDS = {"desk": DESK_PARAMS, "ambiguity": AMBIGUITY_PARAMS}


class CorpusError(ValueError):
    pass


@dataclass(frozen=True)
class CorpusConfig:
    n_scenes: int = 20
    queries_per_scene: int = 10
    resolution: float = 0.5
    clearance: float = DEFAULT_CLEARANCE
    level: str = "full"
    kind: str = "desk"
    seed: int = 0

    def __post_init__(self):
        if self.n_scenes < 1 or self.queries_per_scene < 1:
            raise CorpusError("corpus needs at least one scene and one query per scene")
        if self.kind not in CORPUS_KINDS:
            raise CorpusError(f"unknown corpus kind {self.kind!r}")
        if self.resolution <= 0:
            raise CorpusError("grid resolution must be positive")

    def describe(self) -> dict:
        d = asdict(self)
        d["scene_seeds"] = [self.scene_seed(k) for k in range(self.n_scenes)]
        return d

    def scene_seed(self, k: int) -> int:
        return subseed(self.seed, self.kind, "scene", k)


@dataclass(frozen=True)
class EvalScene:
    index: int
    plan: FloorPlan
    furnished: FurnishedScene
    queries: tuple


def corpus_scene(config: CorpusConfig, k: int, plan: FloorPlan | None = None) -> EvalScene:
    seed = config.scene_seed(k)
    if plan is None:
        plan = generate_floorplan(seed, CORPUS_KINDS[config.kind], plan_id=f"{config.kind}-{k:03d}")
    queries = tuple(sample_query_poses(plan, config.queries_per_scene, subseed(seed, "queries"),
                                       config.clearance))
    # furniture is placed after the queries so that it never swallows a camera
    furnished = place_furniture(plan, config.level, subseed(seed, "furniture"), keep_clear=queries)
    return EvalScene(k, plan, furnished, queries)


def build_corpus(config: CorpusConfig, plans=None) -> list:
    """Scenes for `config`; `plans` substitutes pre-generated floor plans."""
    if plans is not None:
        if not plans:
            raise CorpusError("empty plan list")
        config = replace(config, n_scenes=len(plans))
        return [corpus_scene(config, k, p) for k, p in enumerate(plans)]
    return [corpus_scene(config, k) for k in range(config.n_scenes)]
