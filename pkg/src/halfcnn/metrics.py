"""Saliency scores: AUC, shuffled AUC, and fixation extraction from maps."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import InputError, ShapeError
from .tensor import as_tensor

DEFAULT_TOP_FRACTION = 0.05
DEFAULT_ROUNDS = 100


@dataclass
class FixationSet:
    """Distinct ``(x, y)`` cells at map resolution."""

    points: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), dtype=np.int64))
    image_id: str = ""

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.int64).reshape(-1, 2)
        if len(np.unique(pts, axis=0)) != len(pts):
            raise InputError("fixation set contains duplicate points")
        self.points = pts

    def __len__(self):
        return len(self.points)


def _as_points(fixations) -> np.ndarray:
    if isinstance(fixations, FixationSet):
        return fixations.points
    return FixationSet(fixations).points


def _single_channel(heatmap) -> np.ndarray:
    m = as_tensor(heatmap)
    if m.shape[0] != 1:
        raise ShapeError(f"expected a single-channel map, got {m.shape[0]} channels")
    return m[0]


def _check_inside(pts: np.ndarray, shape) -> None:
    h, w = shape
    if np.any(pts[:, 0] < 0) or np.any(pts[:, 0] >= w) or np.any(pts[:, 1] < 0) or np.any(pts[:, 1] >= h):
        raise InputError(f"fixation outside the {h}x{w} map")


def roc_area(positives, negatives) -> float:
    """Mann-Whitney estimate of P(pos > neg), ties counting one half."""
    pos = np.asarray(positives, dtype=np.float64).ravel()
    neg = np.sort(np.asarray(negatives, dtype=np.float64).ravel())
    if pos.size == 0 or neg.size == 0:
        raise InputError("ROC area needs at least one positive and one negative")
    below = np.searchsorted(neg, pos, side="left")
    upto = np.searchsorted(neg, pos, side="right")
    # integer and half-integer counts stay exact in float64
    u = below.sum() + 0.5 * (upto - below).sum()
    return float(u) / (pos.size * neg.size)


def auc(heatmap, fixations) -> float:
    """ROC area with fixated cells as positives and every other cell as a negative."""
    m = _single_channel(heatmap)
    pts = _as_points(fixations)
    if len(pts) == 0:
        raise InputError("AUC needs at least one fixation")
    _check_inside(pts, m.shape)
    is_fix = np.zeros(m.shape, dtype=bool)
    is_fix[pts[:, 1], pts[:, 0]] = True
    return roc_area(m[is_fix], m[~is_fix])


def shuffle_pool(others: Sequence, shape=None) -> np.ndarray:
    """Union of other images' fixation points, optionally restricted to a map shape."""
    arrays = [_as_points(o) for o in others]
    pool = np.unique(np.concatenate(arrays), axis=0) if arrays else np.zeros((0, 2), dtype=np.int64)
    if shape is not None and len(pool):
        h, w = shape
        keep = (pool[:, 0] >= 0) & (pool[:, 0] < w) & (pool[:, 1] >= 0) & (pool[:, 1] < h)
        pool = pool[keep]
    return pool


def sauc(heatmap, fixations, shuffle_negatives: Sequence, n_rounds: int = DEFAULT_ROUNDS,
         seed: int = 0) -> float:
    """Shuffled AUC.

    Each round draws ``len(fixations)`` negatives with replacement from the
    pooled fixation locations of other images and scores them on this map;
    the result is the mean over rounds.
    """
    m = _single_channel(heatmap)
    pts = _as_points(fixations)
    if len(pts) == 0:
        raise InputError("sAUC needs at least one fixation")
    _check_inside(pts, m.shape)
    pool = shuffle_pool(shuffle_negatives, m.shape)
    if len(pool) == 0:
        raise InputError("sAUC shuffle pool is empty")
    if n_rounds < 1:
        raise InputError("sAUC needs at least one round")
    rng = np.random.default_rng(seed)
    pos = m[pts[:, 1], pts[:, 0]]
    scores = []
    for _ in range(n_rounds):
        pick = pool[rng.integers(0, len(pool), size=len(pts))]
        scores.append(roc_area(pos, m[pick[:, 1], pick[:, 0]]))
    return float(np.mean(scores))


def fixations_from_map(heatmap, top_fraction: float = DEFAULT_TOP_FRACTION,
                       image_id: str = "") -> FixationSet:
    """The ``ceil(top_fraction * cells)`` highest cells; ties resolved in row-major order."""
    if not 0 < top_fraction <= 1:
        raise InputError(f"top_fraction must lie in (0, 1], got {top_fraction}")
    m = _single_channel(heatmap)
    # guard against products like 0.1 * 30 = 3.0000000000000004
    count = min(m.size, math.ceil(top_fraction * m.size - 1e-9))
    order = np.argsort(-m.ravel(), kind="stable")[:count]
    ys, xs = np.divmod(order, m.shape[1])
    return FixationSet(np.column_stack([xs, ys]), image_id)
