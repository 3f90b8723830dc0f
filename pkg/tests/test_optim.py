import io as _io
import logging

import numpy as np
import pytest

from halfcnn import network as nw, optim
from halfcnn.errors import ConfigError, InputError
from halfcnn.groundtruth import prepare_sample


def quadratic(c):
    return lambda x: (0.5 * float((x - c) @ (x - c)), x - c)


def rosenbrock(x):
    a, b = x
    f = (1 - a) ** 2 + 100 * (b - a * a) ** 2
    g = np.array([-2 * (1 - a) - 400 * a * (b - a * a), 200 * (b - a * a)])
    return f, g


def test_quadratic_first_step_lands_on_minimum():
    c = np.array([1.0, -2.0, 3.5, 0.25])
    res = optim.lbfgs_minimize(quadratic(c), np.array([10.0, 4.0, -7.0, 2.0]))
    assert len(res.trace) - 1 <= 2
    assert np.linalg.norm(res.x - c) < 1e-10
    assert res.status == optim.CONVERGED


def test_rosenbrock():
    res = optim.lbfgs_minimize(rosenbrock, np.array([-1.2, 1.0]),
                               optim.LbfgsConfig(max_iterations=200, gradient_tolerance=1e-9))
    assert len(res.trace) - 1 <= 200
    assert np.linalg.norm(res.x - 1.0) < 1e-6
    values = [r.objective for r in res.trace]
    assert all(b < a for a, b in zip(values, values[1:]))


def dense_bfgs_direction(g, pairs):
    """-H g with H built by explicit BFGS updates from the scaled identity."""
    n = g.size
    s, y = pairs[-1][0], pairs[-1][1]
    h = np.eye(n) * (s @ y) / (y @ y)
    for s, y, rho in pairs:
        v = np.eye(n) - rho * np.outer(y, s)
        h = v.T @ h @ v + rho * np.outer(s, s)
    return -h @ g


def test_two_loop_matches_dense_bfgs():
    rng = np.random.default_rng(0)
    a = rng.normal(size=(6, 6))
    hess = a @ a.T + 6 * np.eye(6)
    pairs = []
    for _ in range(4):
        s = rng.normal(size=6)
        y = hess @ s
        pairs.append((s, y, 1.0 / (s @ y)))
    g = rng.normal(size=6)
    np.testing.assert_allclose(optim.two_loop_direction(g, pairs), dense_bfgs_direction(g, pairs),
                               rtol=1e-10)
    np.testing.assert_array_equal(optim.two_loop_direction(g, []), -g)


def test_wrong_gradient_ends_in_line_search_failure():
    def bad(x):
        return float(x @ x), -2 * x  # gradient sign flipped
    res = optim.lbfgs_minimize(bad, np.ones(3), optim.LbfgsConfig(max_halvings=5))
    assert res.status == optim.LINE_SEARCH_FAILED
    assert len(res.trace) == 1


def test_nonfinite_start_rejected():
    with pytest.raises(InputError):
        optim.lbfgs_minimize(lambda x: (float("nan"), x), np.ones(2))


def test_config_validation():
    with pytest.raises(ConfigError):
        optim.LbfgsConfig(memory=0)
    with pytest.raises(ConfigError):
        optim.LbfgsConfig(backtrack=1.0)
    with pytest.raises(ConfigError):
        optim.SgdConfig(momentum=1.0)


def test_trace_csv():
    res = optim.lbfgs_minimize(quadratic(np.zeros(2)), np.ones(2))
    buf = _io.StringIO()
    optim.write_trace_csv(res.trace, buf)
    lines = buf.getvalue().strip().splitlines()
    assert lines[0] == "iteration,objective,grad_max_norm,step"
    assert len(lines) == len(res.trace) + 1


def test_sgd_matches_hand_iterated_momentum():
    # one parameter, f(x) = (x - 3)^2 / 2 on a single sample
    cfg = optim.SgdConfig(learning_rate=0.1, momentum=0.8, epochs=25, batch_size=1)
    res = optim.sgd_minimize(lambda x, idx: (0.5 * float((x[0] - 3) ** 2), x - 3), np.array([0.0]), 1, cfg)
    x, v = 0.0, 0.0
    for _ in range(25):
        v = 0.8 * v - 0.1 * (x - 3)
        x = x + v
    assert abs(res.x[0] - x) < 1e-12


def test_sgd_seeded_and_tiny_steps():
    target = np.arange(10.0)

    def obj(x, idx):
        d = x - target[idx].mean()
        return 0.5 * float(d @ d), d

    cfg = optim.SgdConfig(learning_rate=0.05, epochs=5, batch_size=3, seed=4)
    a = optim.sgd_minimize(obj, np.zeros(1), 10, cfg)
    b = optim.sgd_minimize(obj, np.zeros(1), 10, cfg)
    assert a.epoch_losses == b.epoch_losses and np.array_equal(a.x, b.x)
    tiny = optim.sgd_minimize(obj, np.zeros(1), 10, optim.SgdConfig(learning_rate=1e-300, epochs=3))
    assert abs(tiny.x[0]) < 1e-290


def test_sgd_batch_clamp_warns(caplog):
    with caplog.at_level(logging.WARNING):
        res = optim.sgd_minimize(lambda x, idx: (0.0, np.zeros_like(x)), np.zeros(1), 2,
                                 optim.SgdConfig(batch_size=5, epochs=1))
    assert res.status == "batch_size_clamped" and res.batch_size == 2
    assert "clamping" in caplog.text


def _toy_samples(n=4):
    rng = np.random.default_rng(0)
    out = []
    for _ in range(n):
        s = prepare_sample(rng.uniform(size=(1, 8, 8)), [], None, 8, 8, 2)
        s.target = np.clip(s.image[:, ::2, ::2], 0.1, 0.9)
        out.append(s)
    return out


def test_lbfgs_train_decreases_network_objective():
    net = nw.build(nw.toy_spec(1), seed=0)
    samples = _toy_samples()
    res = optim.lbfgs_train(net, samples, optim.LbfgsConfig(max_iterations=30))
    values = [r.objective for r in res.trace]
    assert values[-1] < values[0]
    assert all(b < a for a, b in zip(values, values[1:]))
    assert nw.batch_objective(net, samples)[0] == pytest.approx(values[-1], rel=1e-12)


def test_sgd_train_runs():
    net = nw.build(nw.toy_spec(1), seed=0)
    res = optim.sgd_train(net, _toy_samples(), optim.SgdConfig(learning_rate=0.05, epochs=3, batch_size=2))
    assert len(res.epoch_losses) == 3 and all(np.isfinite(res.epoch_losses))
