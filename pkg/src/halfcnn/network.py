"""Fully convolutional regression network: blocks, objective, parameter vector.

A network is a stack of convolution blocks (conv -> ReLU -> max-pool ->
optional LRN -> optional 2x up-sampling) followed by an output combiner
that reduces the last block's channels to a single sigmoid map.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import layers
from .errors import ConfigError, DegenerateError, DimensionError, ShapeError, UsageError
from .layers import CombinerParams, LrnParams
from .tensor import FilterBank, as_tensor

POOL = 2

_net_ids = itertools.count()


@dataclass(frozen=True)
class BlockSpec:
    num_filters: int
    filter_size: int
    pool: bool = True
    lrn: bool = False
    upsample: bool = False

    def __post_init__(self):
        if self.num_filters < 1:
            raise ConfigError(f"num_filters must be >= 1, got {self.num_filters}")
        if self.filter_size < 1 or self.filter_size % 2 == 0:
            raise ConfigError(f"filter_size must be odd, got {self.filter_size}")
        if self.upsample and not self.pool:
            raise ConfigError("an up-sampling layer must follow a pooling layer")

    @property
    def factor(self) -> int:
        return POOL if self.pool and not self.upsample else 1


@dataclass(frozen=True)
class NetworkSpec:
    input_channels: int
    blocks: tuple[BlockSpec, ...]
    combiner: str = layers.LINEAR
    target_factor: int | None = None
    lrn: LrnParams = LrnParams()

    def __post_init__(self):
        object.__setattr__(self, "blocks", tuple(self.blocks))
        if self.input_channels < 1:
            raise ConfigError("input_channels must be >= 1")
        if not self.blocks:
            raise ConfigError("a network needs at least one convolution block")
        if self.combiner not in layers.COMBINER_MODES:
            raise ConfigError(f"unknown combiner mode {self.combiner!r}")
        actual = self.net_factor
        if self.target_factor is None:
            object.__setattr__(self, "target_factor", actual)
        tf = self.target_factor
        if tf < 1 or tf & (tf - 1):
            raise ConfigError(f"target_factor must be a power of two, got {tf}")
        if tf != actual:
            raise ConfigError(f"blocks give a down-sampling factor of {actual}, target is {tf}")

    @property
    def net_factor(self) -> int:
        f = 1
        for b in self.blocks:
            f *= b.factor
        return f

    @property
    def size_divisor(self) -> int:
        """Input height/width must be multiples of this for every pooling layer to fit."""
        depth = deepest = 0
        for b in self.blocks:
            if b.pool:
                depth += 1
                deepest = max(deepest, depth)
            if b.upsample:
                depth -= 1
        return POOL ** deepest

    @property
    def output_hold(self) -> int:
        """Side of the cell blocks on which the output map is constant.

        A last block that pools and then up-samples copies each value to a
        ``POOL x POOL`` block; the per-pixel combiner keeps that structure.
        """
        return POOL if self.blocks[-1].upsample else 1

    def filter_shapes(self) -> list[tuple[int, int, int, int]]:
        shapes, c_in = [], self.input_channels
        for b in self.blocks:
            shapes.append((b.num_filters, c_in, b.filter_size, b.filter_size))
            c_in = b.num_filters
        return shapes

    @property
    def param_count(self) -> int:
        n = sum(int(np.prod(s)) + s[0] for s in self.filter_shapes())
        if self.combiner == layers.LINEAR:
            n += self.blocks[-1].num_filters + 1
        return n


def face_spec(input_channels: int = 3) -> NetworkSpec:
    """Three-block face detection / segmentation layout (4x down-sampling)."""
    return NetworkSpec(input_channels, (
        BlockSpec(5, 11, pool=True, lrn=True),
        BlockSpec(5, 7, pool=True, lrn=True),
        BlockSpec(5, 5, pool=True, upsample=True),
    ), target_factor=4)


def saliency_spec(input_channels: int = 3) -> NetworkSpec:
    """Four-block saliency prediction layout (4x down-sampling)."""
    return NetworkSpec(input_channels, (
        BlockSpec(10, 7, pool=True, lrn=True),
        BlockSpec(10, 7, pool=True, lrn=True),
        BlockSpec(10, 5, pool=True, upsample=True),
        BlockSpec(10, 5, pool=True, upsample=True),
    ), target_factor=4)


def toy_spec(input_channels: int = 1) -> NetworkSpec:
    """Two-block network small enough for exhaustive gradient checks."""
    return NetworkSpec(input_channels, (
        BlockSpec(2, 3, pool=True, lrn=True),
        BlockSpec(2, 3, pool=True, upsample=True),
    ), target_factor=2)


@dataclass(frozen=True)
class LossConfig:
    lam: float = 1e-4

    def __post_init__(self):
        if self.lam < 0:
            raise ConfigError(f"L2 coefficient must be >= 0, got {self.lam}")


class Network:
    """Parameters of a built :class:`NetworkSpec`."""

    def __init__(self, spec: NetworkSpec, banks: list[FilterBank], combiner: CombinerParams,
                 seed: int = 0):
        self.spec = spec
        self.banks = banks
        self.combiner = combiner
        self.seed = seed
        self.id = next(_net_ids)
        self.version = 0

    @property
    def factor(self) -> int:
        return self.spec.target_factor

    def __repr__(self):
        return f"Network({len(self.banks)} blocks, {self.spec.param_count} params, seed={self.seed})"


def build(spec: NetworkSpec, seed: int = 0) -> Network:
    """Allocate and initialise a network.

    Filters are drawn from U(-s, s) with ``s = sqrt(3 / fan_in)``; combiner
    weights from U(-0.1, 0.1); all biases start at zero.
    """
    rng = np.random.default_rng(seed)
    banks = []
    for shape in spec.filter_shapes():
        fan_in = shape[1] * shape[2] * shape[3]
        s = np.sqrt(3.0 / fan_in)
        banks.append(FilterBank(rng.uniform(-s, s, size=shape), np.zeros(shape[0])))
    if spec.combiner == layers.LINEAR:
        combiner = CombinerParams(layers.LINEAR, rng.uniform(-0.1, 0.1, spec.blocks[-1].num_filters), 0.0)
    else:
        combiner = CombinerParams(layers.CHANNEL_MAX)
    return Network(spec, banks, combiner, seed)


# -- parameter vector ----------------------------------------------------------

def flatten_params(net: Network) -> np.ndarray:
    parts = []
    for bank in net.banks:
        parts.append(bank.weights.ravel())
        parts.append(bank.biases)
    if net.combiner.mode == layers.LINEAR:
        parts.append(net.combiner.weights)
        parts.append(np.array([net.combiner.bias]))
    return np.concatenate(parts).astype(np.float64)


def param_groups(spec: NetworkSpec) -> list[tuple[str, slice]]:
    """Names and slices of each parameter group inside the flat vector."""
    groups, pos = [], 0
    for i, shape in enumerate(spec.filter_shapes()):
        n = int(np.prod(shape))
        groups.append((f"block{i}.weights", slice(pos, pos + n)))
        groups.append((f"block{i}.biases", slice(pos + n, pos + n + shape[0])))
        pos += n + shape[0]
    if spec.combiner == layers.LINEAR:
        k = spec.blocks[-1].num_filters
        groups.append(("combiner.weights", slice(pos, pos + k)))
        groups.append(("combiner.bias", slice(pos + k, pos + k + 1)))
    return groups


def unflatten_params(net: Network, vec) -> None:
    """Load ``vec`` into ``net`` in place (invalidates outstanding caches)."""
    vec = np.asarray(vec, dtype=np.float64)
    if vec.shape != (net.spec.param_count,):
        raise ShapeError(f"parameter vector has shape {vec.shape}, expected ({net.spec.param_count},)")
    pos = 0
    for bank in net.banks:
        n = bank.weights.size
        bank.weights = vec[pos:pos + n].reshape(bank.weights.shape).copy()
        bank.biases = vec[pos + n:pos + n + bank.out_channels].copy()
        pos += n + bank.out_channels
    if net.combiner.mode == layers.LINEAR:
        k = net.combiner.weights.size
        net.combiner.weights = vec[pos:pos + k].copy()
        net.combiner.bias = float(vec[pos + k])
    net.version += 1


# -- forward / backward --------------------------------------------------------

@dataclass
class LayerCache:
    """What one block's backward pass needs from its forward pass."""

    x: np.ndarray
    pre: np.ndarray
    pool_argmax: np.ndarray | None = None
    pool_in_shape: tuple | None = None
    lrn_in: np.ndarray | None = None


@dataclass
class ForwardCache:
    net_id: int
    net_version: int
    blocks: list[LayerCache] = field(default_factory=list)
    features: np.ndarray | None = None
    output: np.ndarray | None = None


def check_input(net: Network, image: np.ndarray) -> None:
    c, h, w = image.shape
    if c != net.spec.input_channels:
        raise ShapeError(f"image has {c} channels, network expects {net.spec.input_channels}")
    d = net.spec.size_divisor
    if h % d or w % d:
        raise DimensionError(f"image size {h}x{w} must be divisible by {d} for this network")


def forward(net: Network, image):
    """Run the network; returns ``(A_o, cache)`` with ``A_o`` of shape (1, H/f, W/f)."""
    x = as_tensor(image)
    check_input(net, x)
    cache = ForwardCache(net.id, net.version)
    lrn_params = net.spec.lrn
    for spec, bank in zip(net.spec.blocks, net.banks):
        lc = LayerCache(x=x, pre=layers.conv_same_forward(x, bank))
        y = layers.relu(lc.pre)
        if spec.pool:
            lc.pool_in_shape = y.shape
            y, lc.pool_argmax = layers.maxpool_forward(y, POOL)
        if spec.lrn:
            lc.lrn_in = y
            y = layers.lrn_forward(y, lrn_params)
        if spec.upsample:
            y = layers.upsample_forward(y, POOL)
        cache.blocks.append(lc)
        x = y
    out, _ = layers.combine_forward(x, net.combiner)
    cache.features, cache.output = x, out
    return out, cache


def predict(net: Network, image) -> np.ndarray:
    return forward(net, image)[0]


def backprop(net: Network, cache: ForwardCache, d_out, mask=None,
             upsample_backward: Callable = layers.upsample_backward):
    """Gradient of a scalar w.r.t. parameters and input, without the L2 term.

    Returns ``(param_grad, input_grad)``; ``param_grad`` follows
    :func:`flatten_params` ordering.
    """
    if cache.net_id != net.id or cache.net_version != net.version:
        raise UsageError("forward cache does not belong to the current network parameters")
    d_out = as_tensor(d_out)
    if mask is None:
        mask = np.ones_like(d_out)
    cg = layers.combine_backward(d_out, cache.output, cache.features, mask, net.combiner)
    g = cg.dchannels
    parts = []
    for spec, bank, lc in zip(reversed(net.spec.blocks), reversed(net.banks), reversed(cache.blocks)):
        if spec.upsample:
            g = upsample_backward(g, POOL)
        if spec.lrn:
            g = layers.lrn_backward(g, lc.lrn_in, net.spec.lrn)
        if spec.pool:
            g = layers.maxpool_backward(g, lc.pool_argmax, lc.pool_in_shape)
        g = layers.relu_backward(g, lc.pre)
        g, dw, db = layers.conv_same_backward(lc.x, bank, g)
        parts.append((dw.ravel(), db))
    flat = []
    for dw, db in reversed(parts):
        flat.extend((dw, db))
    if net.combiner.mode == layers.LINEAR:
        flat.extend((cg.dweights, np.array([cg.dbias])))
    return np.concatenate(flat), g


def backward(net: Network, cache: ForwardCache, d_out, cfg: LossConfig = LossConfig(),
             mask=None) -> np.ndarray:
    """Parameter gradient of ``loss + lam/2 * ||params||^2``."""
    grad, _ = backprop(net, cache, d_out, mask)
    return grad + cfg.lam * flatten_params(net)


def loss_and_grad(output, target, mask):
    """Masked mean squared error ``sum(M * (A - T)**2) / (2 |M|)`` and its gradient."""
    a, t, m = as_tensor(output), as_tensor(target), as_tensor(mask)
    if not (a.shape == t.shape == m.shape):
        raise ShapeError(f"output {a.shape}, target {t.shape} and mask {m.shape} must match")
    if not np.all((m == 0.0) | (m == 1.0)):
        raise ShapeError("mask must be binary")
    count = m.sum()
    if count == 0:
        raise DegenerateError("mask has no content cells")
    diff = np.where(m > 0, a - t, 0.0)
    loss = 0.5 * float(np.sum(diff * diff)) / count
    return loss, diff / count


def sample_objective(net: Network, image, target, mask, upsample_backward=layers.upsample_backward):
    """Unregularised loss, parameter gradient and input gradient for one sample."""
    out, cache = forward(net, image)
    loss, d_out = loss_and_grad(out, target, mask)
    grad, dx = backprop(net, cache, d_out, mask, upsample_backward)
    return loss, grad, dx


def batch_objective(net: Network, samples: Sequence, cfg: LossConfig = LossConfig()):
    """Mean per-sample loss plus one L2 term, and its gradient.

    ``samples`` are objects with ``image``, ``target`` and ``mask``
    attributes. Per-sample terms are reduced in index order.
    """
    if len(samples) == 0:
        raise UsageError("batch_objective needs at least one sample")
    total, grad = 0.0, np.zeros(net.spec.param_count)
    for s in samples:
        loss, g, _ = sample_objective(net, s.image, s.target, s.mask)
        total += loss
        grad += g
    n = len(samples)
    params = flatten_params(net)
    value = total / n + 0.5 * cfg.lam * float(params @ params)
    return value, grad / n + cfg.lam * params


def make_objective(net: Network, samples: Sequence, cfg: LossConfig = LossConfig()):
    """Wrap :func:`batch_objective` as ``x -> (value, gradient)`` for the optimisers."""

    def objective(x):
        unflatten_params(net, x)
        return batch_objective(net, samples, cfg)

    return objective
