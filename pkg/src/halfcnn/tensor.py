"""Rank-3 float64 tensors (channels, height, width) and shape utilities.

Tensors are plain C-contiguous ``numpy.ndarray`` objects; this module only
validates them and provides the padding / resampling helpers the rest of the
package relies on. None of the helpers mutate their inputs.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DimensionError, ShapeError

DTYPE = np.float64


def as_tensor(data, copy: bool = False) -> np.ndarray:
    """Coerce ``data`` to a contiguous float64 (C, H, W) array.

    2-D input is promoted to a single channel.
    """
    arr = np.array(data, dtype=DTYPE, copy=True) if copy else np.asarray(data, dtype=DTYPE)
    if arr.ndim == 2:
        arr = arr[None, :, :]
    if arr.ndim != 3:
        raise ShapeError(f"tensor must be rank 3 (C, H, W), got shape {arr.shape}")
    if min(arr.shape) < 1:
        raise ShapeError(f"tensor dimensions must be >= 1, got {arr.shape}")
    return np.ascontiguousarray(arr)


@dataclass
class FilterBank:
    """Convolution filters ``(out, in, k_h, k_w)`` plus one bias per output channel."""

    weights: np.ndarray
    biases: np.ndarray

    def __post_init__(self):
        self.weights = np.ascontiguousarray(self.weights, dtype=DTYPE)
        self.biases = np.ascontiguousarray(self.biases, dtype=DTYPE)
        if self.weights.ndim != 4:
            raise ShapeError(f"filter weights must be 4-D, got {self.weights.shape}")
        if self.biases.shape != (self.weights.shape[0],):
            raise ShapeError(
                f"expected {self.weights.shape[0]} biases, got shape {self.biases.shape}"
            )
        k_h, k_w = self.weights.shape[2:]
        if k_h % 2 == 0 or k_w % 2 == 0:
            raise ConfigError(f"kernel size must be odd for same-padding, got {k_h}x{k_w}")

    @property
    def out_channels(self) -> int:
        return self.weights.shape[0]

    @property
    def in_channels(self) -> int:
        return self.weights.shape[1]

    @property
    def kernel_size(self) -> tuple[int, int]:
        return self.weights.shape[2], self.weights.shape[3]

    @classmethod
    def zeros(cls, out_channels: int, in_channels: int, k_h: int, k_w: int | None = None):
        k_w = k_h if k_w is None else k_w
        return cls(np.zeros((out_channels, in_channels, k_h, k_w)), np.zeros(out_channels))


def pad_zero(t, top: int, bottom: int, left: int, right: int) -> np.ndarray:
    """Zero-pad every channel; content lands at offset ``(top, left)``."""
    t = as_tensor(t)
    if min(top, bottom, left, right) < 0:
        raise DimensionError("padding margins must be non-negative")
    c, h, w = t.shape
    out = np.zeros((c, h + top + bottom, w + left + right), dtype=DTYPE)
    out[:, top:top + h, left:left + w] = t
    return out


def block_downsample(t, factor: int) -> np.ndarray:
    """Average non-overlapping ``factor x factor`` blocks of each channel."""
    t = as_tensor(t)
    if factor < 1:
        raise DimensionError(f"factor must be >= 1, got {factor}")
    c, h, w = t.shape
    if h % factor or w % factor:
        raise DimensionError(f"{h}x{w} is not divisible by factor {factor}")
    if factor == 1:
        return t.copy()
    blocks = t.reshape(c, h // factor, factor, w // factor, factor)
    return blocks.mean(axis=(2, 4))


def crop(t, top: int, left: int, height: int, width: int) -> np.ndarray:
    t = as_tensor(t)
    _, h, w = t.shape
    if top < 0 or left < 0 or height < 1 or width < 1 or top + height > h or left + width > w:
        raise DimensionError(
            f"crop region (top={top}, left={left}, {height}x{width}) outside {h}x{w} tensor"
        )
    return t[:, top:top + height, left:left + width].copy()
