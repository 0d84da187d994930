"""Embedding losses with analytic gradients.

Each single-example loss returns ``(value, gradient)`` where gradient is a
tuple matching the trainable arguments. The ``*_all_pairs`` forms evaluate
the log-ratio family over every ordered pair of distinct neighbours of one
anchor in O(K).
"""

from __future__ import annotations

import numpy as np


class LossError(ValueError):
    pass


def _dist(a, b):
    d = float(np.linalg.norm(a - b))
    if d == 0.0:
        raise LossError("coincident embeddings")
    return d


def loss_log_ratio(g_p, g_i, g_j, ch_ip: float, ch_jp: float):
    """Squared mismatch between embedding and Chamfer log-ratios.

    Returns value and gradients w.r.t. (g_p, g_i, g_j).
    """
    if ch_ip <= 0 or ch_jp <= 0:
        raise LossError("ground-truth Chamfer distances must be positive")
    d_i, d_j = _dist(g_i, g_p), _dist(g_j, g_p)
    r = np.log(d_i / d_j) - np.log(ch_ip / ch_jp)
    grad_i = 2 * r * (g_i - g_p) / d_i ** 2
    grad_j = -2 * r * (g_j - g_p) / d_j ** 2
    return float(r * r), (-(grad_i + grad_j), grad_i, grad_j)


def loss_log_ratio_cross(f_p, g_i, g_j, ch_ip: float, ch_jp: float):
    """Log-ratio loss anchored on the query embedding; gradient w.r.t. f_p only."""
    value, (grad_p, _, _) = loss_log_ratio(f_p, g_i, g_j, ch_ip, ch_jp)
    return value, grad_p


def loss_kd_lr(f_p, g_p, g_i, g_j):
    """Log-ratio loss with the frozen layout distances as targets."""
    t_i, t_j = _dist(g_i, g_p), _dist(g_j, g_p)
    d_i, d_j = _dist(g_i, f_p), _dist(g_j, f_p)
    r = np.log(d_i / d_j) - np.log(t_i / t_j)
    grad = 2 * r * ((f_p - g_i) / d_i ** 2 - (f_p - g_j) / d_j ** 2)
    return float(r * r), grad


def loss_decode(pred, target):
    pred, target = np.asarray(pred, dtype=float), np.asarray(target, dtype=float)
    if pred.shape != target.shape:
        raise LossError(f"shape mismatch {pred.shape} vs {target.shape}")
    res = pred - target
    return float(np.abs(res).mean()), np.sign(res) / res.size


def loss_l2(f_p, g_p):
    """Euclidean distance; the layout embedding is frozen so only f_p gets a gradient."""
    diff = np.asarray(f_p, dtype=float) - np.asarray(g_p, dtype=float)
    d = float(np.linalg.norm(diff))
    if d == 0.0:
        return 0.0, np.zeros_like(diff)
    return d, diff / d


def _pairs_from_offsets(a: np.ndarray):
    """Mean of (a_i - a_j)^2 over ordered pairs i != j, and d/da."""
    k = len(a)
    if k < 2:
        return 0.0, np.zeros_like(a)
    n_pairs = k * (k - 1)
    total = 2 * (k * (a * a).sum() - a.sum() ** 2)
    grad = 4 * (k * a - a.sum()) / n_pairs
    return float(total / n_pairs), grad


def log_ratio_all_pairs(anchor: np.ndarray, neighbours: np.ndarray, targets: np.ndarray):
    """Mean log-ratio loss over all ordered neighbour pairs of one anchor.

    `targets` are the positive ground-truth distances (Chamfer, or teacher
    embedding distances for the distillation variant). Returns value and
    gradients w.r.t. anchor and neighbours.
    """
    diff = neighbours - anchor
    d = np.linalg.norm(diff, axis=1)
    if (d == 0).any():
        raise LossError("coincident embeddings")
    if (targets <= 0).any():
        raise LossError("targets must be positive")
    a = np.log(d) - np.log(targets)
    value, grad_a = _pairs_from_offsets(a)
    grad_n = (grad_a / d ** 2)[:, None] * diff
    return value, -grad_n.sum(axis=0), grad_n
