"""Pose refinement: Vogel-disc resampling and gradient-based pose optimisation
against a latent (or decoded-depth) cost."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..embed.model import DEPTH_SCALE, EncoderParams, decode, forward, preprocess
from ..metrics import layout_distance
from ..render import EMBED_DIMS, PanoDepth, depth_pose_jacobian, render_batch
from ..scene import FloorPlan, Pose, extrude

GOLDEN_RATIO = (1 + 5 ** 0.5) / 2
GRADIENT_MODES = ("analytic", "finite_difference")
ZERO_COST = 1e-12    # batched matrix products leave ~1e-16 residue at an exact match


class RefineError(ValueError):
    pass


@dataclass(frozen=True)
class LPOConfig:
    initial_step: float = 0.01
    plateau_factor: float = 0.5
    plateau_threshold: float = 0.05
    plateau_patience: int = 10
    convergence_delta: float = 0.001
    convergence_window: int = 20
    max_iterations: int = 150
    gradient_mode: str = "finite_difference"
    fd_step: float = 1e-3

    def __post_init__(self):
        if not 0 < self.plateau_factor < 1:
            raise RefineError("plateau_factor must lie in (0, 1)")
        if self.max_iterations < self.convergence_window:
            raise RefineError("max_iterations must be >= convergence_window")
        if self.gradient_mode not in GRADIENT_MODES:
            raise RefineError(f"unknown gradient mode {self.gradient_mode!r}")


class FreeSpace:
    """Poses inside a room and at least `margin` from every wall."""

    def __init__(self, plan: FloorPlan, margin: float = 0.1):
        self.plan = plan
        self.margin = margin

    def contains(self, xy) -> np.ndarray:
        return self.plan.contains(xy, self.margin)

    def clamp(self, old: np.ndarray, new: np.ndarray) -> np.ndarray:
        """Last feasible point on the segment old -> new (old must be feasible)."""
        if self.contains(new)[0] and self.plan.room_of(new)[0] == self.plan.room_of(old)[0]:
            return new
        lo, hi = 0.0, 1.0
        for _ in range(40):
            mid = 0.5 * (lo + hi)
            p = old + mid * (new - old)
            if self.contains(p)[0] and self.plan.room_of(p)[0] == self.plan.room_of(old)[0]:
                lo = mid
            else:
                hi = mid
        return old + lo * (new - old)


class LatentCost:
    """Distance between the layout embedding rendered at a pose and a query embedding."""

    def __init__(self, plan: FloorPlan, params: EncoderParams, query: np.ndarray):
        self.scene = extrude(plan)
        self.params = params
        self.query = np.asarray(query, dtype=float)

    def __call__(self, xy) -> np.ndarray:
        depth, _ = render_batch(self.scene, np.atleast_2d(xy), *EMBED_DIMS)
        _, e = forward(self.params, preprocess(depth))
        return np.linalg.norm(e - self.query, axis=1)

    def value_and_grad(self, xy: np.ndarray):
        """Analytic gradient through normalisation, encoder and the depth Jacobian."""
        w, h = EMBED_DIMS
        depth, _ = render_batch(self.scene, xy[None], w, h)
        x = preprocess(depth)
        z, e = forward(self.params, x)
        diff = e[0] - self.query
        cost = float(np.linalg.norm(diff))
        if cost == 0.0:
            return cost, np.zeros(2), True
        jac = depth_pose_jacobian(self.scene, xy, w, h)
        in_range = ((depth[0] > 0.1) & (depth[0] < 20.0)).reshape(-1)
        dx = np.stack([jac.d_depth_dx.reshape(-1), jac.d_depth_dy.reshape(-1)], axis=1)
        dx = dx * in_range[:, None] / DEPTH_SCALE                       # (2048, 2)
        dz = self.params.weight @ dx                                     # (128, 2)
        norm = np.linalg.norm(z[0])
        de = (dz - np.outer(e[0], e[0] @ dz)) / norm
        return cost, diff @ de / cost, bool(jac.valid.all())


class DecodeCost:
    """Mean absolute difference between a decoded target layout and renders."""

    def __init__(self, plan: FloorPlan, params: EncoderParams, query: np.ndarray):
        self.scene = extrude(plan)
        self.target = decode(params, np.asarray(query, dtype=float))

    def __call__(self, xy) -> np.ndarray:
        depth, _ = render_batch(self.scene, np.atleast_2d(xy), *EMBED_DIMS)
        return np.abs(depth - self.target[None]).mean(axis=(1, 2))


class MetricCost:
    """Ground-truth layout dissimilarity between renders and a query render."""

    def __init__(self, plan: FloorPlan, kind: str, query: PanoDepth):
        self.scene = extrude(plan)
        self.kind = kind
        self.query = query

    def __call__(self, xy) -> np.ndarray:
        depth, labels = render_batch(self.scene, np.atleast_2d(xy), self.query.width, self.query.height)
        return np.array([layout_distance(self.kind, PanoDepth(d, l), self.query)
                         for d, l in zip(depth, labels)])


def vogel_offsets(n: int, radius: float) -> np.ndarray:
    """Golden-angle spiral: r_i = radius*sqrt(i/n), theta_i = 2*pi*i*(1 - 1/phi), i = 1..n."""
    if n < 1 or radius <= 0:
        raise RefineError("need n >= 1 and radius > 0")
    i = np.arange(1, n + 1)
    r = radius * np.sqrt(i / n)
    theta = 2 * np.pi * i * (1 - 1 / GOLDEN_RATIO)
    return np.column_stack([r * np.cos(theta), r * np.sin(theta)])


def vogel_points(center, radius: float, n: int, free_space: FreeSpace | None = None) -> np.ndarray:
    """Centre followed by the disc samples; samples outside free space are dropped."""
    c = center.as_array() if isinstance(center, Pose) else np.asarray(center, dtype=float)
    pts = c[None] + vogel_offsets(n, radius)
    if free_space is not None:
        pts = pts[free_space.contains(pts)]
    return np.vstack([c[None], pts])


def vdr_refine(center, cost, radius: float, n: int = 200, free_space: FreeSpace | None = None):
    """Best candidate of a Vogel disc around `center` (the centre itself included).

    Returns (Pose, cost).
    """
    cand = vogel_points(center, radius, n, free_space)
    costs = cost(cand)
    k = int(np.argmin(costs))
    return Pose.from_array(cand[k]), float(costs[k])


def _fd_grad(cost, xy, step):
    offs = np.array([[0, 0], [step, 0], [-step, 0], [0, step], [0, -step]])
    c = cost(xy[None] + offs)
    return float(c[0]), np.array([c[1] - c[2], c[3] - c[4]]) / (2 * step)


def optimize_pose(init, cost, config: LPOConfig, free_space: FreeSpace, analytic=None):
    """Adam on (x, y) with plateau step decay; returns (best Pose, trace).

    `analytic`, if given, maps xy -> (cost, grad, valid) and is used in
    analytic gradient mode.
    """
    x = init.as_array() if isinstance(init, Pose) else np.asarray(init, dtype=float)
    if not free_space.contains(x)[0]:
        raise RefineError(f"initial pose {tuple(x)} is outside free space")
    lr = config.initial_step
    m = np.zeros(2)
    v = np.zeros(2)
    b1, b2, eps = 0.9, 0.999, 1e-8
    trace = []
    best_cost, best_x = np.inf, x.copy()
    plateau_best, bad = np.inf, 0
    stall = 0
    for it in range(config.max_iterations):
        if config.gradient_mode == "analytic" and analytic is not None:
            c, g, _ = analytic(x)
        else:
            c, g = _fd_grad(cost, x, config.fd_step)
        trace.append((Pose.from_array(x), c))
        if best_cost - c < config.convergence_delta:
            stall += 1
        else:
            stall = 0
        if c < best_cost:
            best_cost, best_x = c, x.copy()
        if c <= ZERO_COST or stall >= config.convergence_window:
            break
        if c < plateau_best * (1 - config.plateau_threshold):
            plateau_best, bad = c, 0
        else:
            bad += 1
            if bad > config.plateau_patience:
                lr *= config.plateau_factor
                bad = 0
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        step = lr * (m / (1 - b1 ** (it + 1))) / (np.sqrt(v / (1 - b2 ** (it + 1))) + eps)
        x = free_space.clamp(x, x - step)
    return Pose.from_array(best_x), trace


def latent_pose_optimize(init, query: np.ndarray, plan: FloorPlan, params: EncoderParams,
                         config: LPOConfig = LPOConfig(), free_space: FreeSpace | None = None):
    """Minimise the embedding distance between the rendered layout and the query."""
    cost = LatentCost(plan, params, query)
    fs = free_space or FreeSpace(plan)
    return optimize_pose(init, cost, config, fs, analytic=cost.value_and_grad)


def decode_refine(init, query: np.ndarray, plan: FloorPlan, params: EncoderParams,
                  config: LPOConfig = LPOConfig(), free_space: FreeSpace | None = None):
    """Same optimiser against the L1 distance to the decoded query layout."""
    cost = DecodeCost(plan, params, query)
    fs = free_space or FreeSpace(plan)
    mode = config if config.gradient_mode == "finite_difference" else \
        LPOConfig(**{**config.__dict__, "gradient_mode": "finite_difference"})
    return optimize_pose(init, cost, mode, fs)
