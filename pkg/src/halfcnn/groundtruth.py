"""Target maps from detection windows, and padded/masked training samples."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DimensionError, InputError
from .tensor import as_tensor, block_downsample, pad_zero

BACKGROUND = 0.1
PEAK = 0.9


@dataclass(frozen=True)
class Window:
    """Axis-aligned rectangle given by centre and extent, in image pixels."""

    cx: float
    cy: float
    w: float
    h: float

    def __post_init__(self):
        if not (self.w > 0 and self.h > 0):
            raise InputError(f"window width and height must be positive, got {self.w}x{self.h}")

    @property
    def sigma_x(self) -> float:
        return self.w / 6.0

    @property
    def sigma_y(self) -> float:
        return self.h / 6.0

    @property
    def bounds(self) -> tuple[float, float, float, float]:
        """``(x0, y0, x1, y1)``."""
        return (self.cx - self.w / 2, self.cy - self.h / 2, self.cx + self.w / 2, self.cy + self.h / 2)

    def mirrored(self, width: float) -> "Window":
        """Reflection about the vertical axis of an image ``width`` pixels wide."""
        return Window(width - 1 - self.cx, self.cy, self.w, self.h)


@dataclass
class Sample:
    image: np.ndarray
    target: np.ndarray
    mask: np.ndarray
    windows: list[Window] | None = None
    fixations: np.ndarray | None = None
    content_shape: tuple[int, int] | None = None
    image_id: str = ""


def gaussian_map(windows: Sequence[Window], height: int, width: int) -> np.ndarray:
    """Peak-normalised Gaussians, one per window, merged by pixelwise maximum.

    Pixel ``(x, y)`` sits at integer coordinates (column, row); each window
    contributes ``exp(-(x-cx)^2 / (2 sx^2) - (y-cy)^2 / (2 sy^2))`` with
    ``sx = w / 6`` and ``sy = h / 6``.
    """
    out = np.zeros((1, height, width))
    ys = np.arange(height, dtype=np.float64)[:, None]
    xs = np.arange(width, dtype=np.float64)[None, :]
    for win in windows:
        if not isinstance(win, Window):
            win = Window(*win)
        g = np.exp(-0.5 * (((xs - win.cx) / win.sigma_x) ** 2 + ((ys - win.cy) / win.sigma_y) ** 2))
        np.maximum(out[0], g, out=out[0])
    return out


def renormalize_range(m) -> np.ndarray:
    """Affine map [0, 1] -> [0.1, 0.9]."""
    m = as_tensor(m)
    if np.any(m < 0.0) or np.any(m > 1.0) or not np.all(np.isfinite(m)):
        raise InputError("map values must lie in [0, 1] before renormalisation")
    return BACKGROUND + (PEAK - BACKGROUND) * m


def content_mask(content_h: int, content_w: int, canvas_h: int, canvas_w: int, factor: int) -> np.ndarray:
    """1 where a map cell's whole ``factor x factor`` source block is image content."""
    mask = np.zeros((1, canvas_h // factor, canvas_w // factor))
    mask[:, :content_h // factor, :content_w // factor] = 1.0
    return mask


def prepare_sample(image, windows: Sequence[Window] | None = None, target_map=None,
                   canvas_h: int = 256, canvas_w: int = 256, factor: int = 4,
                   fixations=None, image_id: str = "") -> Sample:
    """Place ``image`` at the top-left of a zero canvas and build target + mask.

    The full-resolution target comes from ``windows`` (Gaussians drawn on
    the canvas) or from ``target_map`` (values in [0, 1] at image size, zero
    padded). It is block-averaged by ``factor`` and renormalised to
    [0.1, 0.9].
    """
    image = as_tensor(image)
    _, h, w = image.shape
    if h > canvas_h or w > canvas_w:
        raise InputError(f"image {h}x{w} does not fit in a {canvas_h}x{canvas_w} canvas")
    if factor < 1 or canvas_h % factor or canvas_w % factor:
        raise DimensionError(f"canvas {canvas_h}x{canvas_w} is not divisible by factor {factor}")
    if target_map is not None and windows:
        raise InputError("give either windows or a target map, not both")

    canvas = pad_zero(image, 0, canvas_h - h, 0, canvas_w - w)
    if target_map is not None:
        tm = as_tensor(target_map)
        if tm.shape != (1, h, w):
            raise InputError(f"target map shape {tm.shape} does not match image size {h}x{w}")
        full = pad_zero(tm, 0, canvas_h - h, 0, canvas_w - w)
    else:
        full = gaussian_map(windows or [], canvas_h, canvas_w)
    target = renormalize_range(block_downsample(full, factor))
    mask = content_mask(h, w, canvas_h, canvas_w, factor)
    fix = None if fixations is None else np.asarray(fixations, dtype=np.int64).reshape(-1, 2)
    return Sample(canvas, target, mask, list(windows) if windows else None, fix, (h, w), image_id)
