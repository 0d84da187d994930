"""Two-stage training: the layout branch on triplets, then the query branch
against the frozen layout branch."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from .._rng import rng_for, subseed
from ..metrics import ChamferIndex
from ..render import EMBED_DIMS, backproject, PanoDepth, render_batch
from ..scene import FloorPlan, Pose, extrude, place_furniture, sample_query_poses
from .losses import log_ratio_all_pairs
from .model import EncoderParams, forward, init_params, normalize_backward, preprocess

log = logging.getLogger(__name__)

POSITIVE_RADIUS = 0.5
NEGATIVE_RADIUS = 2.0
MIN_CHAMFER = 1e-6
QUERY_LOSSES = ("l2", "log_ratio_cross", "kd_lr")


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class LayoutTrainConfig:
    epochs: int = 20
    lr: float = 0.5
    batch_size: int = 4
    milestones: tuple = (0.5, 0.75)
    gamma: float = 0.1
    n_neg: int = 20
    decode_weight: float = 1.0
    pool_density: float = 2.0
    anchors_per_scene: int = 24
    chamfer_points: int = 512
    clearance: float = 0.3
    seed: int = 0


@dataclass(frozen=True)
class QueryTrainConfig:
    epochs: int = 50
    lr: float = 1.0
    batch_size: int = 64
    milestones: tuple = (0.5, 0.75)
    gamma: float = 0.1
    loss: str = "l2"
    level: str = "full"
    n_neg: int = 20
    pool_density: float = 4.0
    anchors_per_scene: int = 24
    chamfer_points: int = 512
    clearance: float = 0.3
    seed: int = 0


@dataclass(frozen=True)
class Triplet:
    anchor_pose: Pose
    pos_pose: Pose
    neg_pose: Pose
    gt_anchor_pos: float
    gt_anchor_neg: float


@dataclass
class PosePool:
    """Poses of one scene with their 32x64 layout renders (and optional furnished renders)."""
    scene: FloorPlan
    xy: np.ndarray
    layout: np.ndarray                   # (N, 2048) preprocessed
    layout_depth: np.ndarray             # (N, 32, 64) metres
    query: np.ndarray | None = None      # (N, 2048) preprocessed furnished renders
    chamfer_points: int = 512
    _clouds: dict = field(default_factory=dict, repr=False)
    _chamfer: dict = field(default_factory=dict, repr=False)

    def __len__(self):
        return len(self.xy)

    def cloud(self, i: int) -> ChamferIndex:
        if i not in self._clouds:
            pano = PanoDepth(self.layout_depth[i], np.zeros(self.layout_depth[i].shape, int))
            self._clouds[i] = ChamferIndex(backproject(pano).subsample(self.chamfer_points))
        return self._clouds[i]

    def chamfer(self, i: int, j: int) -> float:
        key = (min(i, j), max(i, j))
        if key not in self._chamfer:
            self._chamfer[key] = self.cloud(i).chamfer(self.cloud(j))
        return self._chamfer[key]


@dataclass(frozen=True)
class TripletBatch:
    """One anchor with its positive (first) and negatives, Chamfer precomputed."""
    pool: PosePool
    anchor: int
    neighbours: np.ndarray
    chamfer: np.ndarray

    def triplets(self) -> list:
        pose = lambda k: Pose.from_array(self.pool.xy[k])
        pos = self.neighbours[0]
        return [Triplet(pose(self.anchor), pose(pos), pose(n), float(self.chamfer[0]), float(self.chamfer[m + 1]))
                for m, n in enumerate(self.neighbours[1:])]


def build_pool(plan: FloorPlan, seed: int, density: float, clearance: float = 0.3,
               level: str | None = None, chamfer_points: int = 512) -> PosePool:
    scene = extrude(plan)
    w, h = EMBED_DIMS
    n = max(8, int(round(density * plan.room_areas().sum())))
    avoid = ()
    furnished = None
    if level is not None:
        furnished = place_furniture(plan, level, subseed(seed, "pool-furniture"))
        avoid = furnished.furniture
    poses = sample_query_poses(plan, n, subseed(seed, "pool"), clearance, avoid=avoid)
    xy = np.array([[p.x, p.y] for p in poses])
    depth, _ = render_batch(scene, xy, w, h)
    query = None
    if furnished is not None:
        fdepth, _ = render_batch(furnished.scene3d, xy, w, h, furniture=True)
        query = preprocess(fdepth)
    return PosePool(plan, xy, preprocess(depth), depth, query, chamfer_points)


def sample_triplets(pool: PosePool, anchor: int, n_neg: int = 20, seed: int = 0):
    """One positive (< 0.5 m) and `n_neg` negatives (> 2 m) for an anchor.

    Returns None, with a warning, when the anchor has no usable positive or
    too few negatives.
    """
    rng = rng_for(seed, "triplets", anchor)
    dist = np.linalg.norm(pool.xy - pool.xy[anchor], axis=1)
    pos_cand = [k for k in np.nonzero((dist < POSITIVE_RADIUS) & (dist > 0))[0]
                if pool.chamfer(anchor, k) > MIN_CHAMFER]
    neg_cand = np.nonzero(dist > NEGATIVE_RADIUS)[0]
    if not pos_cand:
        warnings.warn(f"anchor {anchor}: no positive within {POSITIVE_RADIUS} m, skipped")
        return None
    if len(neg_cand) < n_neg:
        warnings.warn(f"anchor {anchor}: only {len(neg_cand)} negatives, skipped")
        return None
    pos = int(pos_cand[int(rng.integers(len(pos_cand)))])
    order = rng.permutation(neg_cand)
    negs = []
    for k in order:
        if pool.chamfer(anchor, int(k)) > MIN_CHAMFER:
            negs.append(int(k))
            if len(negs) == n_neg:
                break
    if len(negs) < n_neg:
        warnings.warn(f"anchor {anchor}: degenerate negatives, skipped")
        return None
    nbrs = np.array([pos] + negs)
    ch = np.array([pool.chamfer(anchor, int(k)) for k in nbrs])
    return TripletBatch(pool, anchor, nbrs, ch)


def _triplet_set(pools, anchors_per_scene, n_neg, seed):
    batches = []
    for s, pool in enumerate(pools):
        rng = rng_for(seed, "anchors", s)
        anchors = rng.permutation(len(pool))[:anchors_per_scene]
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            for a in anchors:
                tb = sample_triplets(pool, int(a), n_neg, subseed(seed, "scene", s))
                if tb is not None:
                    batches.append(tb)
    return batches


def _lr_at(epoch, epochs, lr, milestones, gamma):
    passed = sum(epoch >= int(round(m * epochs)) for m in milestones)
    return lr * gamma ** passed


def _check_divergence(trace, initial):
    if not np.isfinite(trace[-1]):
        raise TrainingError(f"loss became non-finite at epoch {len(trace)}")
    if len(trace) >= 3 and all(v > 10 * initial for v in trace[-3:]):
        raise TrainingError(f"loss diverged: {trace[-3:]} vs initial {initial}")


def layout_batch_step(params: EncoderParams, batches, decode_weight: float):
    """Loss and parameter gradients for a minibatch of anchors."""
    keys, index = [], {}
    for tb in batches:
        for k in [tb.anchor, *tb.neighbours]:
            key = (id(tb.pool), int(k))
            if key not in index:
                index[key] = len(keys)
                keys.append((tb.pool, int(k)))
    x = np.stack([pool.layout[k] for pool, k in keys])
    z, e = forward(params, x)
    grad_e = np.zeros_like(e)
    lr_total = 0.0
    for tb in batches:
        ia = index[(id(tb.pool), tb.anchor)]
        inb = [index[(id(tb.pool), int(k))] for k in tb.neighbours]
        v, ga, gn = log_ratio_all_pairs(e[ia], e[inb], tb.chamfer)
        lr_total += v / len(batches)
        grad_e[ia] += ga / len(batches)
        np.add.at(grad_e, inb, gn / len(batches))
    pred = e @ params.dec_weight.T + params.dec_bias
    res = pred - x
    dec_loss = float(np.abs(res).mean())
    g_pred = decode_weight * np.sign(res) / res.size
    grads = {
        "dec_weight": g_pred.T @ e,
        "dec_bias": g_pred.sum(axis=0),
    }
    grad_e += g_pred @ params.dec_weight
    grad_z = normalize_backward(z, grad_e)
    grads["weight"] = grad_z.T @ x
    grads["bias"] = grad_z.sum(axis=0)
    return lr_total + decode_weight * dec_loss, grads


def _sgd(params: EncoderParams, grads: dict, lr: float):
    for name, g in grads.items():
        setattr(params, name, getattr(params, name) - lr * g)


def train_layout_branch(scenes, config: LayoutTrainConfig = LayoutTrainConfig(), pools=None):
    """Fit the layout encoder and decoder. Returns (params, per-epoch mean loss)."""
    if not scenes and not pools:
        raise TrainingError("no training scenes")
    if pools is None:
        pools = [build_pool(p, subseed(config.seed, "layout-pool", k), config.pool_density,
                            config.clearance, chamfer_points=config.chamfer_points)
                 for k, p in enumerate(scenes)]
    batches = _triplet_set(pools, config.anchors_per_scene, config.n_neg, config.seed)
    if not batches:
        raise TrainingError("no usable triplets in the training scenes")
    params = init_params("layout", subseed(config.seed, "layout-init"))
    rng = rng_for(config.seed, "layout-shuffle")
    trace, initial = [], None
    for epoch in range(config.epochs):
        lr = _lr_at(epoch, config.epochs, config.lr, config.milestones, config.gamma)
        order = rng.permutation(len(batches))
        losses = []
        for s in range(0, len(order), config.batch_size):
            mb = [batches[k] for k in order[s:s + config.batch_size]]
            loss, grads = layout_batch_step(params, mb, config.decode_weight)
            if initial is None:
                initial = loss
            _sgd(params, grads, lr)
            losses.append(loss)
        trace.append(float(np.mean(losses)))
        log.info("layout epoch %d lr %.3g loss %.5f", epoch, lr, trace[-1])
        _check_divergence(trace, initial)
    return params, trace


def query_pairs(pools, layout_params: EncoderParams):
    """Furnished inputs and the frozen layout embeddings at the same poses."""
    xf = np.concatenate([p.query for p in pools])
    _, g = forward(layout_params, np.concatenate([p.layout for p in pools]))
    return xf, g


def l2_loss_and_grads(params: EncoderParams, xf: np.ndarray, g: np.ndarray):
    z, f = forward(params, xf)
    diff = f - g
    d = np.linalg.norm(diff, axis=1)
    grad_f = np.where(d[:, None] > 0, diff / np.maximum(d, 1e-300)[:, None], 0.0) / len(d)
    grad_z = normalize_backward(z, grad_f)
    return float(d.mean()), {"weight": grad_z.T @ xf, "bias": grad_z.sum(axis=0)}


def _query_triplet_step(params, layout_params, batches, loss):
    xa = np.stack([tb.pool.query[tb.anchor] for tb in batches])
    z, f = forward(params, xa)
    grad_f = np.zeros_like(f)
    total = 0.0
    for m, tb in enumerate(batches):
        _, g_n = forward(layout_params, tb.pool.layout[tb.neighbours])
        if loss == "kd_lr":
            _, g_p = forward(layout_params, tb.pool.layout[tb.anchor][None])
            targets = np.linalg.norm(g_n - g_p[0], axis=1)
        else:
            targets = tb.chamfer
        v, ga, _ = log_ratio_all_pairs(f[m], g_n, targets)
        total += v / len(batches)
        grad_f[m] = ga / len(batches)
    grad_z = normalize_backward(z, grad_f)
    return total, {"weight": grad_z.T @ xa, "bias": grad_z.sum(axis=0)}


def train_query_branch(scenes, layout_params: EncoderParams,
                       config: QueryTrainConfig = QueryTrainConfig(), pools=None):
    """Fit the query encoder on furnished renders; the layout branch is read only.

    Returns (params, per-epoch mean loss).
    """
    if config.loss not in QUERY_LOSSES:
        raise TrainingError(f"unknown query loss {config.loss!r}")
    if layout_params is None or layout_params.branch != "layout":
        raise TrainingError("query-branch training needs trained layout-branch params")
    if not scenes and not pools:
        raise TrainingError("no training scenes")
    if pools is None:
        pools = [build_pool(p, subseed(config.seed, "query-pool", k), config.pool_density,
                            config.clearance, level=config.level,
                            chamfer_points=config.chamfer_points)
                 for k, p in enumerate(scenes)]
    params = init_params("query", subseed(config.seed, "query-init"))
    rng = rng_for(config.seed, "query-shuffle")
    trace, initial = [], None
    if config.loss == "l2":
        xf, g = query_pairs(pools, layout_params)
        n_items = len(xf)
    else:
        batches = _triplet_set(pools, config.anchors_per_scene, config.n_neg, config.seed)
        if not batches:
            raise TrainingError("no usable triplets in the training scenes")
        n_items = len(batches)
    for epoch in range(config.epochs):
        lr = _lr_at(epoch, config.epochs, config.lr, config.milestones, config.gamma)
        order = rng.permutation(n_items)
        losses = []
        for s in range(0, n_items, config.batch_size):
            sel = order[s:s + config.batch_size]
            if config.loss == "l2":
                loss, grads = l2_loss_and_grads(params, xf[sel], g[sel])
            else:
                loss, grads = _query_triplet_step(params, layout_params,
                                                  [batches[k] for k in sel], config.loss)
            if initial is None:
                initial = loss
            _sgd(params, grads, lr)
            losses.append(loss)
        trace.append(float(np.mean(losses)))
        log.info("query epoch %d lr %.3g loss %.5f", epoch, lr, trace[-1])
        _check_divergence(trace, initial)
    return params, trace
