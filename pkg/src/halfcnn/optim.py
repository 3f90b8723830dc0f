"""Optimisers: L-BFGS with Armijo backtracking, and momentum SGD."""
from __future__ import annotations

import csv
import logging
from collections import deque
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError, InputError, UsageError

log = logging.getLogger(__name__)

CURVATURE_EPS = 1e-10

CONVERGED = "converged"
MAX_ITERATIONS = "max_iterations"
LINE_SEARCH_FAILED = "line_search_failed"


@dataclass(frozen=True)
class LbfgsConfig:
    memory: int = 10
    max_iterations: int = 100
    gradient_tolerance: float = 1e-6
    c1: float = 1e-4
    backtrack: float = 0.5
    max_halvings: int = 40
    initial_step: float = 1.0

    def __post_init__(self):
        if self.memory < 1:
            raise ConfigError("L-BFGS memory must be >= 1")
        if self.gradient_tolerance <= 0 or self.c1 <= 0:
            raise ConfigError("tolerances must be positive")
        if not 0 < self.backtrack < 1:
            raise ConfigError("backtracking factor must lie in (0, 1)")


@dataclass(frozen=True)
class TraceRow:
    iteration: int
    objective: float
    grad_max_norm: float
    step: float


@dataclass
class OptimResult:
    x: np.ndarray
    trace: list[TraceRow]
    status: str
    evaluations: int = 0

    @property
    def value(self) -> float:
        return self.trace[-1].objective


def two_loop_direction(grad: np.ndarray, pairs) -> np.ndarray:
    """Return ``-H grad`` for the inverse Hessian implied by ``(s, y, rho)`` pairs.

    With no pairs this is plain steepest descent.
    """
    q = grad.copy()
    alphas = []
    for s, y, rho in reversed(pairs):
        a = rho * (s @ q)
        q -= a * y
        alphas.append(a)
    if pairs:
        s, y, _ = pairs[-1]
        q *= (s @ y) / (y @ y)
    for (s, y, rho), a in zip(pairs, reversed(alphas)):
        b = rho * (y @ q)
        q += (a - b) * s
    return -q


def lbfgs_minimize(objective: Callable[[np.ndarray], tuple[float, np.ndarray]], x0,
                   cfg: LbfgsConfig = LbfgsConfig(),
                   callback: Callable[[TraceRow], None] | None = None) -> OptimResult:
    """Minimise ``objective(x) -> (value, gradient)`` from ``x0``.

    Stops on ``max|grad| <= gradient_tolerance``, after ``max_iterations``
    accepted steps, or when backtracking fails to find sufficient decrease.
    Row 0 of the trace is the starting point.
    """
    x = np.array(x0, dtype=np.float64)
    f, g = objective(x)
    f, g = float(f), np.asarray(g, dtype=np.float64)
    evals = 1
    if not np.isfinite(f) or not np.all(np.isfinite(g)):
        raise InputError("objective or gradient is not finite at the starting point")
    pairs: deque = deque(maxlen=cfg.memory)
    trace = [TraceRow(0, f, float(np.max(np.abs(g), initial=0.0)), 0.0)]
    if callback:
        callback(trace[-1])
    status = MAX_ITERATIONS
    for it in range(1, cfg.max_iterations + 1):
        if trace[-1].grad_max_norm <= cfg.gradient_tolerance:
            status = CONVERGED
            break
        d = two_loop_direction(g, list(pairs))
        slope = float(g @ d)
        if not slope < 0:
            pairs.clear()
            d, slope = -g, -float(g @ g)
        step = cfg.initial_step
        accepted = False
        for _ in range(cfg.max_halvings + 1):
            x_new = x + step * d
            f_new, g_new = objective(x_new)
            evals += 1
            f_new = float(f_new)
            if np.isfinite(f_new) and f_new <= f + cfg.c1 * step * slope and f_new < f:
                accepted = True
                break
            step *= cfg.backtrack
        if not accepted:
            status = LINE_SEARCH_FAILED
            log.info("line search failed at iteration %d (f=%.6g)", it, f)
            break
        g_new = np.asarray(g_new, dtype=np.float64)
        s, y = x_new - x, g_new - g
        sy = float(s @ y)
        if sy > CURVATURE_EPS:
            pairs.append((s, y, 1.0 / sy))
        else:
            # a stale memory keeps reproducing the same mis-scaled step
            pairs.clear()
        x, f, g = x_new, f_new, g_new
        trace.append(TraceRow(it, f, float(np.max(np.abs(g), initial=0.0)), step))
        if callback:
            callback(trace[-1])
    else:
        if trace[-1].grad_max_norm <= cfg.gradient_tolerance:
            status = CONVERGED
    return OptimResult(x, trace, status, evals)


@dataclass(frozen=True)
class SgdConfig:
    learning_rate: float = 0.01
    momentum: float = 0.9
    epochs: int = 10
    batch_size: int = 8
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be > 0")
        if not 0 <= self.momentum < 1:
            raise ConfigError("momentum must lie in [0, 1)")
        if self.batch_size < 1 or self.epochs < 0:
            raise ConfigError("batch_size must be >= 1 and epochs >= 0")


@dataclass
class SgdResult:
    x: np.ndarray
    epoch_losses: list[float]
    status: str = "ok"
    batch_size: int = 0


def sgd_minimize(objective: Callable[[np.ndarray, np.ndarray], tuple[float, np.ndarray]],
                 x0, n_samples: int, cfg: SgdConfig = SgdConfig()) -> SgdResult:
    """Momentum SGD over shuffled mini-batches.

    ``objective(x, indices)`` returns the mini-batch value and gradient.
    The per-epoch loss is the mean of the mini-batch values seen during
    that epoch.
    """
    if n_samples < 1:
        raise UsageError("SGD needs at least one sample")
    status, bs = "ok", cfg.batch_size
    if bs > n_samples:
        log.warning("batch_size %d exceeds dataset size %d; clamping", bs, n_samples)
        status, bs = "batch_size_clamped", n_samples
    rng = np.random.default_rng(cfg.seed)
    x = np.array(x0, dtype=np.float64)
    v = np.zeros_like(x)
    losses = []
    for _ in range(cfg.epochs):
        order = rng.permutation(n_samples)
        values = []
        for start in range(0, n_samples, bs):
            f, g = objective(x, order[start:start + bs])
            values.append(float(f))
            v = cfg.momentum * v - cfg.learning_rate * np.asarray(g)
            x = x + v
        losses.append(float(np.mean(values)))
    return SgdResult(x, losses, status, bs)


def sgd_train(net, samples: Sequence, cfg: SgdConfig = SgdConfig(), loss_cfg=None) -> SgdResult:
    """Train ``net`` in place with :func:`sgd_minimize`."""
    from . import network as nw

    loss_cfg = loss_cfg or nw.LossConfig()

    def objective(x, idx):
        nw.unflatten_params(net, x)
        return nw.batch_objective(net, [samples[i] for i in idx], loss_cfg)

    result = sgd_minimize(objective, nw.flatten_params(net), len(samples), cfg)
    nw.unflatten_params(net, result.x)
    return result


def lbfgs_train(net, samples: Sequence, cfg: LbfgsConfig = LbfgsConfig(), loss_cfg=None,
                callback=None) -> OptimResult:
    """Full-batch L-BFGS on ``net`` in place."""
    from . import network as nw

    loss_cfg = loss_cfg or nw.LossConfig()
    result = lbfgs_minimize(nw.make_objective(net, samples, loss_cfg), nw.flatten_params(net),
                            cfg, callback)
    nw.unflatten_params(net, result.x)
    return result


def write_trace_csv(trace: Sequence[TraceRow], path_or_file) -> None:
    """Emit ``iteration,objective,grad_max_norm,step`` rows."""
    own = isinstance(path_or_file, (str, bytes)) or hasattr(path_or_file, "__fspath__")
    fh = open(path_or_file, "w", newline="") if own else path_or_file
    try:
        w = csv.writer(fh)
        w.writerow(["iteration", "objective", "grad_max_norm", "step"])
        for row in trace:
            w.writerow([row.iteration, repr(row.objective), repr(row.grad_max_norm), repr(row.step)])
    finally:
        if own:
            fh.close()
