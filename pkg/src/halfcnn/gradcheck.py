"""Central finite-difference checks for every backward pass in the package."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import layers
from . import network as nw
from .layers import CombinerParams, LrnParams
from .tensor import FilterBank

EPS = 1e-5
TOL = 1e-6


def numeric_gradient(f: Callable[[np.ndarray], float], x, eps: float = EPS) -> np.ndarray:
    """``(f(x + eps e_i) - f(x - eps e_i)) / (2 eps)`` for every coordinate.

    Coordinates where either evaluation is not finite come back as NaN.
    """
    x = np.array(x, dtype=np.float64)
    flat = x.reshape(-1)
    grad = np.empty(flat.size)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = f(x)
        flat[i] = orig - eps
        fm = f(x)
        flat[i] = orig
        grad[i] = (fp - fm) / (2.0 * eps) if np.isfinite(fp) and np.isfinite(fm) else np.nan
    return grad.reshape(x.shape)


def relative_error(analytic, numeric) -> np.ndarray:
    a, n = np.asarray(analytic, dtype=np.float64), np.asarray(numeric, dtype=np.float64)
    return np.abs(a - n) / np.maximum(1e-8, np.abs(a) + np.abs(n))


@dataclass
class GroupResult:
    name: str
    size: int
    max_rel_error: float
    worst_index: int
    nonfinite: list[int] = field(default_factory=list)


@dataclass
class GradReport:
    label: str
    tol: float
    groups: list[GroupResult]

    @property
    def max_rel_error(self) -> float:
        return max((g.max_rel_error for g in self.groups), default=0.0)

    @property
    def worst(self) -> tuple[str, int]:
        g = max(self.groups, key=lambda g: g.max_rel_error)
        return g.name, g.worst_index

    @property
    def passed(self) -> bool:
        return all(not g.nonfinite and g.max_rel_error < self.tol for g in self.groups)

    def format(self) -> str:
        width = max([len(g.name) for g in self.groups] + [5])
        lines = [f"gradient check: {self.label} (tol {self.tol:.1e})",
                 f"  {'group':<{width}}  {'size':>6}  {'max rel err':>12}  {'worst':>6}  status"]
        for g in self.groups:
            ok = not g.nonfinite and g.max_rel_error < self.tol
            lines.append(f"  {g.name:<{width}}  {g.size:>6}  {g.max_rel_error:>12.3e}  "
                         f"{g.worst_index:>6}  {'ok' if ok else 'FAIL'}")
        lines.append(f"  result: {'PASS' if self.passed else 'FAIL'}")
        return "\n".join(lines)


def compare(label: str, pairs: dict, tol: float = TOL) -> GradReport:
    """Build a report from ``{group: (analytic, numeric)}``."""
    groups = []
    for name, (a, n) in pairs.items():
        a, n = np.ravel(a), np.ravel(n)
        bad = np.flatnonzero(~np.isfinite(n)).tolist()
        err = relative_error(a, n)
        err[~np.isfinite(err)] = np.inf
        idx = int(np.argmax(err)) if err.size else 0
        groups.append(GroupResult(name, a.size, float(err[idx]) if err.size else 0.0, idx, bad))
    return GradReport(label, tol, groups)


# -- whole network -------------------------------------------------------------

def random_network(spec: nw.NetworkSpec, rng: np.random.Generator) -> nw.Network:
    net = nw.build(spec, seed=int(rng.integers(2**31)))
    nw.unflatten_params(net, rng.normal(0.0, 0.5, spec.param_count))
    return net


def check_network(spec: nw.NetworkSpec, input_shape, seed: int = 0, tol: float = TOL,
                  lam: float = 1e-3, eps: float = EPS, upsample_rule: str = "exact",
                  zero_params: bool = False) -> GradReport:
    """Compare the analytic objective gradient with central differences.

    The objective is one randomly generated sample (image, target in
    [0.1, 0.9], partial content mask) plus the L2 term; both the parameter
    vector and the input image are checked.
    """
    rng = np.random.default_rng(seed)
    net = random_network(spec, rng)
    if zero_params:
        nw.unflatten_params(net, np.zeros(spec.param_count))
    image = rng.uniform(0.0, 1.0, size=input_shape)
    _, h, w = input_shape
    f = spec.target_factor
    target = rng.uniform(0.1, 0.9, size=(1, h // f, w // f))
    mask = np.ones_like(target)
    mask[:, -1, :] = 0.0  # padding band along the bottom edge
    mask[:, :, rng.integers(w // f):] *= rng.integers(0, 2)

    up_bwd = {"exact": layers.upsample_backward,
              "blockconstant": layers.upsample_backward_blockconstant}[upsample_rule]
    theta0 = nw.flatten_params(net)

    def objective(theta, img):
        nw.unflatten_params(net, theta)
        out, _ = nw.forward(net, img)
        loss, _ = nw.loss_and_grad(out, target, mask)
        return loss + 0.5 * lam * float(theta @ theta)

    nw.unflatten_params(net, theta0)
    _, g_theta, g_image = nw.sample_objective(net, image, target, mask, upsample_backward=up_bwd)
    g_theta = g_theta + lam * theta0
    n_theta = numeric_gradient(lambda t: objective(t, image), theta0, eps)
    n_image = numeric_gradient(lambda img: objective(theta0, img), image, eps)
    nw.unflatten_params(net, theta0)

    pairs = {name: (g_theta[sl], n_theta[sl]) for name, sl in nw.param_groups(spec)}
    pairs["input"] = (g_image, n_image)
    label = f"network seed={seed} input={tuple(input_shape)} upsample={upsample_rule}"
    return compare(label, pairs, tol)


# -- individual layers ---------------------------------------------------------

def _layer_cases(rng: np.random.Generator):
    c = int(rng.integers(2, 4))
    h, w = 2 * int(rng.integers(2, 5)), 2 * int(rng.integers(2, 5))
    x = rng.normal(size=(c, h, w))

    # convolution: input, weights, biases
    k = int(rng.choice([1, 3, 5]))
    o = int(rng.integers(2, 4))
    wts, b = rng.normal(size=(o, c, k, k)), rng.normal(size=o)
    g = rng.normal(size=(o, h, w))
    dx, dw, db = layers.conv_same_backward(x, FilterBank(wts, b), g)
    yield "conv", {
        "input": (dx, lambda v: np.sum(g * layers.conv_same_forward(v, FilterBank(wts, b))), x),
        "weights": (dw, lambda v: np.sum(g * layers.conv_same_forward(x, FilterBank(v, b))), wts),
        "biases": (db, lambda v: np.sum(g * layers.conv_same_forward(x, FilterBank(wts, v))), b),
    }

    # relu away from the kink
    xr = np.where(np.abs(x) < 0.1, x + 0.2 * np.sign(x + 1e-300), x)
    g = rng.normal(size=x.shape)
    yield "relu", {"input": (layers.relu_backward(g, xr), lambda v: np.sum(g * layers.relu(v)), xr)}

    g = rng.normal(size=(c, h // 2, w // 2))
    _, arg = layers.maxpool_forward(x, 2)
    yield "maxpool", {"input": (layers.maxpool_backward(g, arg, x.shape),
                                lambda v: np.sum(g * layers.maxpool_forward(v, 2)[0]), x)}

    lp = LrnParams(k=2.0, alpha=0.5, beta=0.75, n=3)
    g = rng.normal(size=x.shape)
    yield "lrn", {"input": (layers.lrn_backward(g, x, lp), lambda v: np.sum(g * layers.lrn_forward(v, lp)), x)}

    g = rng.normal(size=(c, 2 * h, 2 * w))
    yield "upsample", {"input": (layers.upsample_backward(g, 2),
                                 lambda v: np.sum(g * layers.upsample_forward(v, 2)), x)}

    wc, bc = rng.normal(size=c), float(rng.normal())
    g = rng.normal(size=(1, h, w))
    mask = (rng.uniform(size=(1, h, w)) < 0.7).astype(float)

    def masked(params, v):
        return np.sum(mask * g * layers.combine_forward(v, params)[0])

    lin = CombinerParams(layers.LINEAR, wc, bc)
    out, _ = layers.combine_forward(x, lin)
    cg = layers.combine_backward(g, out, x, mask, lin)
    yield "combine_linear", {
        "input": (cg.dchannels, lambda v: masked(lin, v), x),
        "weights": (cg.dweights, lambda v: masked(CombinerParams(layers.LINEAR, v, bc), x), wc),
        "bias": (np.array([cg.dbias]),
                 lambda v: masked(CombinerParams(layers.LINEAR, wc, v[0]), x), np.array([bc])),
    }

    cm = CombinerParams(layers.CHANNEL_MAX)
    out, _ = layers.combine_forward(x, cm)
    cg = layers.combine_backward(g, out, x, mask, cm)
    yield "combine_max", {"input": (cg.dchannels, lambda v: masked(cm, v), x)}


def check_layers(seed: int = 0, tol: float = TOL, eps: float = EPS) -> list[GradReport]:
    """One report per layer type on random 2-3 channel inputs of at most 8x8."""
    rng = np.random.default_rng(seed)
    reports = []
    for name, groups in _layer_cases(rng):
        pairs = {g: (analytic, numeric_gradient(fn, at, eps)) for g, (analytic, fn, at) in groups.items()}
        reports.append(compare(f"{name} seed={seed}", pairs, tol))
    return reports
