"""Forward and backward passes for the layers of a regression network.

Every function works on single (C, H, W) float64 tensors and returns fresh
arrays. Backward functions take the upstream gradient plus whatever the
forward pass needs, and return gradients with respect to inputs and
parameters.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import kernels
from .errors import ConfigError, DimensionError, ShapeError
from .tensor import FilterBank, as_tensor

_SIGMOID_LO = np.nextafter(0.0, 1.0)
_SIGMOID_HI = np.nextafter(1.0, 0.0)


# -- convolution ---------------------------------------------------------------

def conv_same_forward(x, bank: FilterBank) -> np.ndarray:
    """Same-padded cross-correlation: ``out[o] = b[o] + sum_c x[c] * w[o, c]``."""
    x = as_tensor(x)
    if x.shape[0] != bank.in_channels:
        raise ShapeError(f"input has {x.shape[0]} channels, filters expect {bank.in_channels}")
    return kernels.conv_forward(x, bank.weights, bank.biases)


def conv_same_backward(x, bank: FilterBank, dout):
    """Return ``(dx, dweights, dbiases)`` for :func:`conv_same_forward`."""
    x = as_tensor(x)
    dout = as_tensor(dout)
    if dout.shape != (bank.out_channels,) + x.shape[1:]:
        raise ShapeError(f"upstream gradient shape {dout.shape} does not match conv output")
    return kernels.conv_backward(x, bank.weights, dout)


# -- ReLU ----------------------------------------------------------------------

def relu(x) -> np.ndarray:
    return np.maximum(as_tensor(x), 0.0)


def relu_backward(dout, x) -> np.ndarray:
    # subgradient at exactly 0 is taken as 0
    return np.where(as_tensor(x) > 0.0, as_tensor(dout), 0.0)


# -- max pooling ---------------------------------------------------------------

def maxpool_forward(x, p: int = 2):
    """Non-overlapping ``p x p`` max pooling.

    Returns ``(pooled, argmax)``. ``argmax[c, i, j]`` is the flat index
    (``row * width + col``) of the winning input cell; ties go to the first
    cell in row-major order.
    """
    x = as_tensor(x)
    if p < 1:
        raise DimensionError(f"pool factor must be >= 1, got {p}")
    _, h, w = x.shape
    if h % p or w % p:
        raise DimensionError(f"{h}x{w} input is not divisible by pool factor {p}")
    return kernels.maxpool_forward(x, p)


def maxpool_backward(dout, argmax, input_shape) -> np.ndarray:
    dout = as_tensor(dout)
    argmax = np.ascontiguousarray(argmax, dtype=np.int64)
    if argmax.shape != dout.shape:
        raise ShapeError(f"argmax shape {argmax.shape} != upstream shape {dout.shape}")
    _, h, w = input_shape
    return kernels.maxpool_backward(dout, argmax, h, w)


# -- local response normalisation ---------------------------------------------

@dataclass(frozen=True)
class LrnParams:
    """Cross-channel normalisation ``b = a / (k + alpha * sum a^2) ** beta``.

    The sum runs over ``n`` neighbouring channels centred on the current one,
    clipped at the first and last channel.
    """

    k: float = 2.0
    alpha: float = 1e-4
    beta: float = 0.75
    n: int = 5

    def __post_init__(self):
        if not self.k > 0:
            raise ConfigError(f"LRN k must be > 0, got {self.k}")
        if self.n < 1 or self.n % 2 == 0:
            raise ConfigError(f"LRN neighbourhood n must be odd and >= 1, got {self.n}")
        if not self.beta > 0:
            raise ConfigError(f"LRN beta must be > 0, got {self.beta}")
        if self.alpha < 0:
            raise ConfigError(f"LRN alpha must be >= 0, got {self.alpha}")


def _channel_window_sum(v: np.ndarray, half: int) -> np.ndarray:
    c = v.shape[0]
    out = np.empty_like(v)
    for ch in range(c):
        out[ch] = v[max(ch - half, 0):min(ch + half, c - 1) + 1].sum(axis=0)
    return out


def _lrn_denominator(a, params: LrnParams) -> np.ndarray:
    return params.k + params.alpha * _channel_window_sum(a * a, params.n // 2)


def lrn_forward(x, params: LrnParams = LrnParams()) -> np.ndarray:
    a = as_tensor(x)
    return a * _lrn_denominator(a, params) ** -params.beta


def lrn_backward(dout, x, params: LrnParams = LrnParams()) -> np.ndarray:
    a = as_tensor(x)
    g = as_tensor(dout)
    denom = _lrn_denominator(a, params)
    scale = denom ** -params.beta
    # the clipped window is symmetric, so the adjoint sum uses the same window
    cross = _channel_window_sum(g * a * scale / denom, params.n // 2)
    return g * scale - 2.0 * params.alpha * params.beta * a * cross


# -- up-sampling ---------------------------------------------------------------

def upsample_forward(x, p: int = 2) -> np.ndarray:
    """Copy every cell into a constant ``p x p`` block."""
    x = as_tensor(x)
    if p < 1:
        raise DimensionError(f"up-sampling factor must be >= 1, got {p}")
    return np.repeat(np.repeat(x, p, axis=1), p, axis=2)


def _check_blocks(g, p):
    _, h, w = g.shape
    if p < 1 or h % p or w % p:
        raise DimensionError(f"{h}x{w} gradient is not divisible by up-sampling factor {p}")


def upsample_backward(dout, p: int = 2) -> np.ndarray:
    """Exact adjoint of :func:`upsample_forward`: sum the gradient over each block."""
    g = as_tensor(dout)
    _check_blocks(g, p)
    c, h, w = g.shape
    return g.reshape(c, h // p, p, w // p, p).sum(axis=(2, 4))


def upsample_backward_blockconstant(dout, p: int = 2) -> np.ndarray:
    """Shortcut rule ``p**2 * dout[p*x, p*y]`` (last cell of each block).

    Only equals :func:`upsample_backward` when the upstream gradient is
    constant within every block. Kept as a negative control for gradient
    checking; the network never uses it by default.
    """
    g = as_tensor(dout)
    _check_blocks(g, p)
    return p * p * g[:, p - 1::p, p - 1::p].copy()


# -- output combiner -----------------------------------------------------------

LINEAR = "linear"
CHANNEL_MAX = "channel_max"
COMBINER_MODES = (LINEAR, CHANNEL_MAX)


@dataclass
class CombinerParams:
    mode: str = LINEAR
    weights: np.ndarray = field(default_factory=lambda: np.zeros(0))
    bias: float = 0.0

    def __post_init__(self):
        if self.mode not in COMBINER_MODES:
            raise ConfigError(f"unknown combiner mode {self.mode!r}")
        self.weights = np.ascontiguousarray(self.weights, dtype=np.float64).reshape(-1)
        self.bias = float(self.bias)


def sigmoid(z):
    """Logistic function without overflow, clipped to the open interval (0, 1)."""
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return np.clip(out, _SIGMOID_LO, _SIGMOID_HI)


def _check_combiner(channels, params: CombinerParams):
    if params.mode == LINEAR and params.weights.shape[0] != channels.shape[0]:
        raise ShapeError(
            f"combiner has {params.weights.shape[0]} weights for {channels.shape[0]} channels"
        )


def combine_forward(channels, params: CombinerParams):
    """Collapse channels to one map and squash it: returns ``(A_o, Z)``."""
    a = as_tensor(channels)
    _check_combiner(a, params)
    if params.mode == LINEAR:
        z = np.tensordot(params.weights, a, axes=1) + params.bias
    else:
        z = a.max(axis=0)
    z = z[None]
    return sigmoid(z), z


class CombineGrads(NamedTuple):
    dz: np.ndarray
    dweights: np.ndarray | None
    dbias: float | None
    dchannels: np.ndarray


def combine_backward(d_out, out, channels, mask, params: CombinerParams) -> CombineGrads:
    """Masked sigmoid + combiner backward pass.

    ``dZ = M * dA_o * A_o * (1 - A_o)``; for the linear combiner
    ``dw_i = sum(A_i * dZ)``, ``db = sum(dZ)``, ``dA_i = w_i * dZ``. For the
    channel-max combiner the gradient flows to the first channel attaining
    the maximum at each pixel.
    """
    a = as_tensor(channels)
    d_out, out, mask = as_tensor(d_out), as_tensor(out), as_tensor(mask)
    _check_combiner(a, params)
    spatial = (1,) + a.shape[1:]
    for name, arr in (("dA_o", d_out), ("A_o", out), ("mask", mask)):
        if arr.shape != spatial:
            raise ShapeError(f"{name} shape {arr.shape} != expected {spatial}")
    dz = mask * d_out * out * (1.0 - out)
    if params.mode == LINEAR:
        dw = np.tensordot(a, dz[0], axes=([1, 2], [0, 1]))
        db = float(dz.sum())
        da = params.weights[:, None, None] * dz
        return CombineGrads(dz, dw, db, da)
    winner = a.argmax(axis=0)
    da = np.zeros_like(a)
    np.put_along_axis(da, winner[None], dz, axis=0)
    return CombineGrads(dz, None, None, da)
