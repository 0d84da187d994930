"""Ground-truth layout scorers that stand in for the learned embedding."""

from __future__ import annotations

import numpy as np

from ..embed.model import EncoderParams, encode
from ..localize.database import GridDatabase, build_database
from ..metrics import KINDS, ChamferIndex, MetricError, layout_distance
from ..render import EMBED_DIMS, PanoDepth, backproject
from ..scene import DEFAULT_CLEARANCE, FloorPlan


# full clouds: a 64x32 render backprojects to at most 2048 points
ORACLE_POINTS = None
CHUNKS = 16


def _bounded_chamfer(a: ChamferIndex, b: ChamferIndex, bound: float) -> float | None:
    """Exact Chamfer of a and b, or None once a partial sum proves it exceeds `bound`.

    Nearest-neighbour distances are non-negative, so every partial sum of the
    two per-side means is a lower bound on the total.
    """
    bound = bound * (1 + 1e-9) + 1e-12     # chunked sums round differently; never prune a tie
    lower = 0.0
    for src, tree in ((a.points, b.tree), (b.points, a.tree)):
        n = len(src)
        for k in range(CHUNKS):
            d, _ = tree.query(src[k::CHUNKS])
            lower += d.sum() / n
            if lower > bound:
                return None
    # recompute in the canonical summation order so values match distances()
    return a.chamfer(b)


class OracleScorer:
    """Ranks database entries by a layout metric against a query layout render.

    Chamfer uses full backprojected clouds unless `max_points` asks for a
    pixel-stride subsample.
    """

    def __init__(self, db: GridDatabase, kind: str, max_points: int | None = ORACLE_POINTS):
        if kind not in KINDS:
            raise MetricError(f"unknown metric {kind!r}; choose from {KINDS}")
        if db.depths is None:
            raise MetricError("oracle scoring needs a database with cached renders")
        self.db = db
        self.kind = kind
        self.max_points = max_points
        self._clouds = None

    def _cloud(self, pano: PanoDepth) -> ChamferIndex:
        cloud = backproject(pano)
        return ChamferIndex(cloud if self.max_points is None else cloud.subsample(self.max_points))

    def _entry(self, i: int) -> PanoDepth:
        return PanoDepth(self.db.depths[i], self.db.labels[i])

    def distances(self, query: PanoDepth) -> np.ndarray:
        self._check(query)
        if self.kind == "chamfer3d":
            q = self._cloud(query)
            return np.array([q.chamfer(c) for c in self._clouds_full()])
        return np.array([layout_distance(self.kind, query, self._entry(i)) for i in range(len(self.db))])

    def _check(self, query: PanoDepth):
        if query.depth.shape != self.db.depths.shape[1:]:
            raise MetricError(f"query render {query.depth.shape} does not match the database "
                              f"{self.db.depths.shape[1:]}")

    def distance(self, query: PanoDepth, i: int) -> float:
        """Metric value for a single database entry."""
        self._check(query)
        if self.kind == "chamfer3d":
            return self._cloud(query).chamfer(self._clouds_full()[i])
        return layout_distance(self.kind, query, self._entry(i))

    def best(self, query: PanoDepth):
        """(index, distance) of the closest entry, ties to the lower index.

        Same answer as ``argmin(distances(query))``; for Chamfer most entries
        are rejected after a fraction of their nearest-neighbour queries.
        """
        if self.kind != "chamfer3d":
            d = self.distances(query)
            i = int(np.argmin(d))
            return i, float(d[i])
        self._check(query)
        clouds = self._clouds_full()
        q = self._cloud(query)
        # visit likely winners first so the bound tightens early; order only affects speed
        est = np.abs(self.db.depths - query.depth[None]).mean(axis=(1, 2))
        best_i, best_d = -1, np.inf
        for i in np.argsort(est, kind="stable"):
            d = _bounded_chamfer(q, clouds[i], best_d)
            if d is not None and (d < best_d or (d == best_d and i < best_i)):
                best_i, best_d = int(i), d
        return best_i, float(best_d)

    def _clouds_full(self) -> list:
        if self._clouds is None:
            self._clouds = [self._cloud(self._entry(i)) for i in range(len(self.db))]
        return self._clouds

    def rank(self, query: PanoDepth):
        """Entry order (ties to the lower index) and the sorted distances."""
        d = self.distances(query)
        order = np.argsort(d, kind="stable")
        return order, d[order]


def oracle_embedder(plan: FloorPlan, kind: str, resolution: float = 0.5,
                    dims: tuple = EMBED_DIMS, clearance: float = DEFAULT_CLEARANCE,
                    db: GridDatabase | None = None, max_points: int | None = ORACLE_POINTS) -> OracleScorer:
    """Oracle scorer over the plan's grid database (built here unless given)."""
    if db is None:
        db = build_database(plan, resolution, None, dims, clearance, keep_depths=True)
    return OracleScorer(db, kind, max_points)


class EmbeddingScorer:
    """Same interface as OracleScorer, ranking by learned embedding distance."""

    def __init__(self, db: GridDatabase, params: EncoderParams):
        if db.embeddings is None:
            raise MetricError("database has no embeddings")
        self.db = db
        self.params = params
        self.kind = "embedding"

    def distances(self, query: PanoDepth) -> np.ndarray:
        return np.linalg.norm(self.db.embeddings - encode(self.params, query)[None], axis=1)

    def _check(self, query: PanoDepth):
        if query.depth.shape != self.db.depths.shape[1:]:
            raise MetricError(f"query render {query.depth.shape} does not match the database "
                              f"{self.db.depths.shape[1:]}")

    def distance(self, query: PanoDepth, i: int) -> float:
        """Metric value for a single database entry."""
        self._check(query)
        if self.kind == "chamfer3d":
            return self._cloud(query).chamfer(self._clouds_full()[i])
        return layout_distance(self.kind, query, self._entry(i))

    def best(self, query: PanoDepth):
        """(index, distance) of the closest entry, ties to the lower index.

        Same answer as ``argmin(distances(query))``; for Chamfer most entries
        are rejected after a fraction of their nearest-neighbour queries.
        """
        if self.kind != "chamfer3d":
            d = self.distances(query)
            i = int(np.argmin(d))
            return i, float(d[i])
        self._check(query)
        clouds = self._clouds_full()
        q = self._cloud(query)
        # visit likely winners first so the bound tightens early; order only affects speed
        est = np.abs(self.db.depths - query.depth[None]).mean(axis=(1, 2))
        best_i, best_d = -1, np.inf
        for i in np.argsort(est, kind="stable"):
            d = _bounded_chamfer(q, clouds[i], best_d)
            if d is not None and (d < best_d or (d == best_d and i < best_i)):
                best_i, best_d = int(i), d
        return best_i, float(best_d)

    def _clouds_full(self) -> list:
        if self._clouds is None:
            self._clouds = [self._cloud(self._entry(i)) for i in range(len(self.db))]
        return self._clouds

    def rank(self, query: PanoDepth):
        d = self.distances(query)
        order = np.argsort(d, kind="stable")
        return order, d[order]
