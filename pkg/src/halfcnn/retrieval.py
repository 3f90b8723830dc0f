"""Detection windows from predicted heatmaps, and how well they match the truth."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import ndimage

from .errors import DegenerateError, InputError, ShapeError
from .groundtruth import BACKGROUND, Window
from .tensor import as_tensor

DEFAULT_THRESHOLD = 0.2
DEFAULT_IOU = 0.5

_EIGHT = np.ones((3, 3), dtype=bool)


@dataclass
class Component:
    label: int
    cells: np.ndarray  # (n, 3): x, y, value at map resolution
    threshold: float = DEFAULT_THRESHOLD

    @property
    def size(self) -> int:
        return len(self.cells)


def components(heatmap, threshold: float = DEFAULT_THRESHOLD) -> list[Component]:
    """8-connected regions of cells strictly above ``threshold``.

    Labels follow row-major order of each region's first cell.
    """
    m = as_tensor(heatmap)
    if m.shape[0] != 1:
        raise ShapeError(f"expected a single-channel map, got {m.shape[0]} channels")
    m = m[0]
    labels, n = ndimage.label(m > threshold, structure=_EIGHT)
    out = []
    for lab in range(1, n + 1):
        ys, xs = np.nonzero(labels == lab)
        cells = np.column_stack([xs, ys, m[ys, xs]]).astype(np.float64)
        out.append(Component(lab, cells, threshold))
    return out


def _truncation_ratio(level: float) -> float:
    """Per-axis variance of a 2-D Gaussian cut at ``level`` of its peak, over sigma^2."""
    if not 0.0 < level < 1.0:
        return 1.0
    t = -math.log(level)
    return (1.0 - (1.0 + t) * level) / (1.0 - level)


def fit_window(comp: Component, factor: int, hold: int = 1) -> Window:
    """Invert the Gaussian target construction for one component.

    Cell weights are ``value - 0.1``. The weighted centroid gives the centre;
    the weighted variances are corrected for the threshold cut-off and for
    block averaging before ``w = 6 sigma_x`` and ``h = 6 sigma_y`` are formed.
    Width and height never drop below ``factor`` pixels.

    ``hold > 1`` declares a map that is constant on ``hold x hold`` cell
    blocks (a network ending in pool + up-sample). Such a map carries block
    averages over ``hold * factor`` pixels, each copied to ``hold`` cells per
    axis, and both spreads are removed as well.
    """
    if hold < 1:
        raise InputError(f"hold must be >= 1, got {hold}")
    if comp.size == 0:
        raise DegenerateError("empty component")
    xs, ys, vals = comp.cells[:, 0], comp.cells[:, 1], comp.cells[:, 2]
    u = np.maximum(vals - BACKGROUND, 0.0)
    total = u.sum()
    if total <= 0:
        raise DegenerateError("component has no response above the background level")
    # offsets from the bounding-box midpoint with an exactly rounded sum, so a
    # mirror-symmetric component lands exactly on its axis
    mid_x, mid_y = 0.5 * (xs.min() + xs.max()), 0.5 * (ys.min() + ys.max())
    mx = mid_x + math.fsum(u * (xs - mid_x)) / total
    my = mid_y + math.fsum(u * (ys - mid_y)) / total
    var_x = (u @ (xs - mx) ** 2) / total
    var_y = (u @ (ys - my) ** 2) / total
    kappa = _truncation_ratio((comp.threshold - BACKGROUND) / u.max())
    coarse = hold * factor
    blur = (coarse * coarse - 1) / 12.0 + (hold * hold - 1) * factor * factor / 12.0
    sx = math.sqrt(max(var_x * factor * factor / kappa - blur, 0.0))
    sy = math.sqrt(max(var_y * factor * factor / kappa - blur, 0.0))
    # cell j averages pixels j*f .. j*f + f - 1
    cx, cy = (mx + 0.5) * factor - 0.5, (my + 0.5) * factor - 0.5
    return Window(cx, cy, max(6.0 * sx, float(factor)), max(6.0 * sy, float(factor)))


def detect(heatmap, factor: int, threshold: float = DEFAULT_THRESHOLD, hold: int = 1) -> list[Window]:
    """All windows recoverable from ``heatmap``; degenerate components are dropped."""
    found = []
    for comp in components(heatmap, threshold):
        try:
            found.append(fit_window(comp, factor, hold))
        except DegenerateError:
            continue
    return found


def iou(a: Window, b: Window) -> float:
    if a == b:
        return 1.0
    ax0, ay0, ax1, ay1 = a.bounds
    bx0, by0, bx1, by1 = b.bounds
    iw = max(0.0, min(ax1, bx1) - max(ax0, bx0))
    ih = max(0.0, min(ay1, by1) - max(ay0, by0))
    inter = iw * ih
    union = a.w * a.h + b.w * b.h - inter
    # rounding can push the ratio of near-identical boxes past one
    return min(inter / union, 1.0) if union > 0 else 0.0


def match_windows(predicted: Sequence[Window], truth: Sequence[Window],
                  iou_min: float = DEFAULT_IOU) -> list[tuple[int, int, float]]:
    """Greedy one-to-one matching by descending IoU; returns ``(pred, truth, iou)``."""
    cand = [(iou(p, t), i, j) for i, p in enumerate(predicted) for j, t in enumerate(truth)]
    cand = sorted((c for c in cand if c[0] >= iou_min), key=lambda c: (-c[0], c[1], c[2]))
    used_p, used_t, pairs = set(), set(), []
    for score, i, j in cand:
        if i in used_p or j in used_t:
            continue
        used_p.add(i)
        used_t.add(j)
        pairs.append((i, j, score))
    return pairs


def retrieval_rate(predicted: Sequence[Sequence[Window]], truth: Sequence[Sequence[Window]],
                   iou_min: float = DEFAULT_IOU) -> float:
    """Fraction of ground-truth windows matched by a prediction with IoU >= ``iou_min``.

    With no ground-truth windows at all the rate is 1.0 (nothing was missed).
    """
    if len(predicted) != len(truth):
        raise ShapeError(f"{len(predicted)} prediction lists for {len(truth)} images")
    n_truth = sum(len(t) for t in truth)
    if n_truth == 0:
        return 1.0
    hits = sum(len(match_windows(p, t, iou_min)) for p, t in zip(predicted, truth))
    return hits / n_truth
