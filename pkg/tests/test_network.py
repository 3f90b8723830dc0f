import numpy as np
import pytest

from halfcnn import network as nw
from halfcnn.errors import ConfigError, DegenerateError, DimensionError, ShapeError, UsageError
from halfcnn.groundtruth import prepare_sample
from halfcnn.network import BlockSpec, NetworkSpec


def test_face_and_saliency_configs():
    face = nw.face_spec(3)
    assert face.net_factor == 4 and face.target_factor == 4
    assert face.param_count == 1820 + 1230 + 630 + 6 == 3686
    assert nw.saliency_spec(3).net_factor == 4


def test_factor_mismatch_is_config_error():
    blocks = [BlockSpec(2, 3, pool=True)] * 3
    with pytest.raises(ConfigError):
        NetworkSpec(1, blocks, target_factor=4)
    assert NetworkSpec(1, blocks).target_factor == 8


def test_block_spec_validation():
    with pytest.raises(ConfigError):
        BlockSpec(2, 4)
    with pytest.raises(ConfigError):
        BlockSpec(0, 3)
    with pytest.raises(ConfigError):
        BlockSpec(2, 3, pool=False, upsample=True)


def test_size_divisor_counts_deepest_pooling():
    assert nw.face_spec().size_divisor == 8
    assert nw.toy_spec().size_divisor == 4


def test_face_output_size():
    net = nw.build(nw.face_spec(3), seed=0)
    out = nw.predict(net, np.random.default_rng(0).uniform(size=(3, 256, 256)))
    assert out.shape == (1, 64, 64)
    assert np.all((out > 0) & (out < 1))


def test_zero_params_give_half_everywhere():
    net = nw.build(nw.toy_spec(1))
    nw.unflatten_params(net, np.zeros(net.spec.param_count))
    out = nw.predict(net, np.random.default_rng(1).normal(size=(1, 8, 12)))
    np.testing.assert_array_equal(out, 0.5)


def test_flatten_roundtrip_and_group_order():
    spec = nw.face_spec(3)
    net = nw.build(spec, seed=3)
    vec = nw.flatten_params(net)
    assert vec.shape == (3686,)
    groups = nw.param_groups(spec)
    assert [g[0] for g in groups][:2] == ["block0.weights", "block0.biases"]
    assert groups[-1][0] == "combiner.bias" and groups[-1][1].stop == 3686
    np.testing.assert_array_equal(vec[groups[0][1]], net.banks[0].weights.ravel())
    other = nw.build(spec, seed=4)
    nw.unflatten_params(other, vec)
    np.testing.assert_array_equal(nw.flatten_params(other), vec)
    with pytest.raises(ShapeError):
        nw.unflatten_params(other, vec[:-1])


def test_build_is_seeded():
    a, b = nw.build(nw.face_spec(), seed=5), nw.build(nw.face_spec(), seed=5)
    np.testing.assert_array_equal(nw.flatten_params(a), nw.flatten_params(b))
    assert not np.array_equal(nw.flatten_params(a), nw.flatten_params(nw.build(nw.face_spec(), seed=6)))


def test_input_checks():
    net = nw.build(nw.face_spec(3))
    with pytest.raises(ShapeError):
        nw.forward(net, np.zeros((1, 16, 16)))
    with pytest.raises(DimensionError):
        nw.forward(net, np.zeros((3, 12, 16)))


def test_loss_examples():
    t = np.full((1, 2, 2), 0.3)
    loss, d = nw.loss_and_grad(t, t, np.ones_like(t))
    assert loss == 0 and not d.any()
    loss, d = nw.loss_and_grad([[[0.9]]], [[[0.1]]], [[[1.0]]])
    assert abs(loss - 0.32) < 1e-15 and abs(d[0, 0, 0] - 0.8) < 1e-15
    with pytest.raises(DegenerateError):
        nw.loss_and_grad(t, t, np.zeros_like(t))
    with pytest.raises(ShapeError):
        nw.loss_and_grad(t, t, np.full_like(t, 0.5))


def test_penalty_only_gradient():
    net = nw.build(nw.toy_spec(1), seed=2)
    _, cache = nw.forward(net, np.ones((1, 8, 8)))
    zero = np.zeros((1, 4, 4))
    assert not nw.backward(net, cache, zero, nw.LossConfig(0.0)).any()
    g = nw.backward(net, cache, zero, nw.LossConfig(0.25))
    np.testing.assert_array_equal(g, 0.25 * nw.flatten_params(net))


def test_stale_cache_is_rejected():
    net = nw.build(nw.toy_spec(1), seed=2)
    _, cache = nw.forward(net, np.ones((1, 8, 8)))
    nw.unflatten_params(net, nw.flatten_params(net))
    with pytest.raises(UsageError):
        nw.backprop(net, cache, np.zeros((1, 4, 4)))
    with pytest.raises(UsageError):
        nw.batch_objective(net, [])


def test_masked_targets_do_not_matter_bitwise():
    rng = np.random.default_rng(0)
    net = nw.build(nw.toy_spec(1), seed=1)
    s = prepare_sample(rng.uniform(size=(1, 6, 5)), [], None, 8, 8, 2)
    noisy = prepare_sample(s.image[:, :6, :5], [], None, 8, 8, 2)
    noisy.target = np.where(s.mask > 0, s.target, rng.uniform(0.1, 0.9, s.target.shape))
    f1, g1 = nw.batch_objective(net, [s])
    f2, g2 = nw.batch_objective(net, [noisy])
    assert f1 == f2
    np.testing.assert_array_equal(g1, g2)


def test_batch_objective_is_mean_plus_one_penalty():
    rng = np.random.default_rng(4)
    net = nw.build(nw.toy_spec(1), seed=0)
    samples = [prepare_sample(rng.uniform(size=(1, 8, 8)), [], None, 8, 8, 2) for _ in range(3)]
    for s in samples:
        s.target = rng.uniform(0.1, 0.9, s.target.shape)
    cfg = nw.LossConfig(0.1)
    value, grad = nw.batch_objective(net, samples, cfg)
    parts = [nw.sample_objective(net, s.image, s.target, s.mask) for s in samples]
    theta = nw.flatten_params(net)
    expect_v = sum(p[0] for p in parts) / 3 + 0.05 * theta @ theta
    expect_g = sum(p[1] for p in parts) / 3 + 0.1 * theta
    assert abs(value - expect_v) < 1e-14
    np.testing.assert_allclose(grad, expect_g, rtol=1e-13, atol=1e-16)


def test_output_hold():
    assert nw.face_spec().output_hold == 2
    assert nw.NetworkSpec(1, (BlockSpec(2, 3), BlockSpec(2, 3, pool=False))).output_hold == 1
