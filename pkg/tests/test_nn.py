import math

import numpy as np
import pytest

from conftest import central_diff
from owapool.nn import (SGD, Conv2d, Dense, Dropout, Flatten, Network, Pool, Relu, TrainConfig,
                        Variant, build_nin, build_small_net, conv2d_forward, finite_diff_grad_check,
                        freeze_degenerate, load_checkpoint, network_forward_backward, network_loss,
                        save_checkpoint, sgd_step, softmax_cross_entropy, train)
from owapool.nn.checkpoint import CheckpointError, read_checkpoint
from owapool.owa import (Mode, OwaWeights, PoolPlan, Regime, RegularizationConfig, Scope,
                         init_weights, simplex_violation)
from owapool.tensor import ShapeError


def brute_conv(x, k, b, stride, pad):
    x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    N, C, H, W = x.shape
    O, _, kh, kw = k.shape
    oh, ow = (H - kh) // stride + 1, (W - kw) // stride + 1
    y = np.zeros((N, O, oh, ow))
    for n in range(N):
        for o in range(O):
            for i in range(oh):
                for j in range(ow):
                    acc = b[o]
                    for c in range(C):
                        for a in range(kh):
                            for d in range(kw):
                                acc += x[n, c, i * stride + a, j * stride + d] * k[o, c, a, d]
                    y[n, o, i, j] = acc
    return y


def test_conv_examples():
    y = conv2d_forward(np.ones((1, 1, 3, 3)), np.ones((1, 1, 3, 3)), np.zeros(1))
    np.testing.assert_array_equal(y, [[[[9.0]]]])
    x = np.random.default_rng(0).standard_normal((2, 3, 4, 4))
    eye = np.eye(3).reshape(3, 3, 1, 1)
    np.testing.assert_array_equal(conv2d_forward(x, eye), x)


@pytest.mark.parametrize("stride, pad", [(1, 0), (2, 0), (1, 2), (2, 1)])
def test_conv_matches_brute_force(rng, stride, pad):
    x = rng.standard_normal((2, 3, 6, 7))
    k = rng.standard_normal((4, 3, 3, 2))
    b = rng.standard_normal(4)
    np.testing.assert_allclose(conv2d_forward(x, k, b, stride, pad), brute_conv(x, k, b, stride, pad), atol=1e-12)


def test_conv_shape_mismatch():
    with pytest.raises(ShapeError):
        conv2d_forward(np.zeros((1, 2, 4, 4)), np.zeros((1, 3, 3, 3)))


@pytest.mark.parametrize("stride, pad", [(1, 0), (2, 1)])
def test_conv_backward_finite_differences(rng, stride, pad):
    layer = Conv2d(2, 3, 3, stride=stride, padding=pad, rng=rng)
    x = rng.standard_normal((2, 2, 5, 5))
    G = rng.standard_normal(layer.forward(x).shape)
    layer.zero_grad()
    layer.forward(x)
    gx = layer.backward(G)
    f = lambda xv: float((layer.forward(xv) * G).sum())
    np.testing.assert_allclose(gx, central_diff(f, x.copy()), rtol=1e-6, atol=1e-9)
    W = layer.params["W"]
    np.testing.assert_allclose(layer.grads["W"], central_diff(lambda _: float((layer.forward(x) * G).sum()), W),
                               rtol=1e-6, atol=1e-9)


def test_softmax_cross_entropy_examples():
    loss, _ = softmax_cross_entropy(np.zeros((3, 10)), [0, 4, 9])
    assert loss == pytest.approx(math.log(10), abs=1e-12)
    loss, grad = softmax_cross_entropy(np.array([[3.7]]), [0])
    assert loss == 0.0
    np.testing.assert_array_equal(grad, [[0.0]])
    with pytest.raises(ValueError):
        softmax_cross_entropy(np.zeros((2, 3)), [0, 3])


def test_softmax_cross_entropy_grad(rng):
    logits = rng.standard_normal((5, 4))
    labels = rng.integers(0, 4, 5)
    _, grad = softmax_cross_entropy(logits, labels)
    num = central_diff(lambda z: softmax_cross_entropy(z, labels)[0], logits.copy())
    np.testing.assert_allclose(grad, num, atol=1e-6)


def tiny_owa_net(rng, scope=Scope.SHARED, regime=Regime.PENALTY, window=(3, 3), stride=(2, 2)):
    conv = Conv2d(2, 3, 3, rng=rng)
    plan = PoolPlan(window, stride)
    rows = 3 if scope == Scope.PER_CHANNEL else 1
    w = OwaWeights(rng.uniform(-0.5, 1.0, (rows, plan.n)), scope, regime)
    pool = Pool(plan, w)
    oh = (5 - window[0]) // stride[0] + 1
    return Network([conv, Relu(), pool, Flatten(), Dense(3 * oh * oh, 3, rng=rng)])


@pytest.mark.parametrize("scope", [Scope.SHARED, Scope.PER_CHANNEL])
@pytest.mark.parametrize("regime", [Regime.PENALTY, Regime.UNCONSTRAINED])
def test_network_gradients(rng, scope, regime):
    net = tiny_owa_net(rng, scope, regime)
    x = rng.standard_normal((4, 2, 7, 7))
    y = rng.integers(0, 3, 4)
    err = finite_diff_grad_check(net, x, y, 1e-6, reg=RegularizationConfig(1, 1, 0.5), rng=rng)
    assert err < 1e-4


def test_grad_check_linear_net(rng):
    net = Network([Flatten(), Dense(8, 3, rng=rng)])
    x = rng.standard_normal((5, 2, 2, 2))
    y = rng.integers(0, 3, 5)
    assert finite_diff_grad_check(net, x, y, 1e-6, rng=rng) < 1e-8


def test_grad_check_detects_corruption(rng):
    net = tiny_owa_net(rng)
    x = rng.standard_normal((4, 2, 7, 7))
    y = rng.integers(0, 3, 4)
    network_forward_backward(net, x, y)
    i = next(i for i, l in enumerate(net.layers) if isinstance(l, Pool))
    bad = {(i, "w"): net.layers[i].grads["w"] * 1.5 + 0.1}
    err = finite_diff_grad_check(net, x, y, 1e-6, param_selector=lambda j, name, l: j == i, grads=bad, rng=rng)
    assert err > 1e-2


def test_owa_weight_grad_includes_penalty(rng):
    net = tiny_owa_net(rng)
    x = rng.standard_normal((4, 2, 7, 7))
    y = rng.integers(0, 3, 4)
    reg = RegularizationConfig(1, 1, 1)
    pool = net.owa_layers()[0]
    network_forward_backward(net, x, y, reg)
    ana = pool.grads["w"].copy()
    num = central_diff(lambda _: network_loss(net, x, y, reg), pool.params["w"])
    np.testing.assert_allclose(ana, num, rtol=1e-4, atol=1e-8)


def test_frozen_max_matches_max_pooling(rng):
    x = rng.standard_normal((6, 1, 8, 8))
    y = rng.integers(0, 2, 6)
    owa = freeze_degenerate(build_small_net("OWAL", image_size=8, seed=3))
    mx = build_small_net("Max", image_size=8, seed=3)
    a = network_forward_backward(owa, x, y)
    b = network_forward_backward(mx, x, y)
    assert a.J_CE == b.J_CE
    assert a.penalty == 0.0


def test_frozen_trajectories_identical(rng):
    x = rng.standard_normal((40, 1, 8, 8))
    y = rng.integers(0, 2, 40)
    cfg = TrainConfig(learning_rate=0.05, epochs=3, batch_size=8, seed=7)
    owa = freeze_degenerate(build_small_net("OWAL", image_size=8, seed=3))
    mx = build_small_net("Max", image_size=8, seed=3)
    h1 = train(owa, x, y, cfg)
    h2 = train(mx, x, y, cfg)
    assert [r["J_CE"] for r in h1] == [r["J_CE"] for r in h2]
    assert [r["train_acc"] for r in h1] == [r["train_acc"] for r in h2]
    np.testing.assert_array_equal(owa.layers[0].params["W"], mx.layers[0].params["W"])


def test_saturated_gradients_bounded():
    net = Network([Flatten(), Dense(1, 2)])
    net.layers[1].params["W"][...] = [[100.0, -100.0]]
    x = np.ones((3, 1, 1, 1))
    parts = network_forward_backward(net, x, np.zeros(3, dtype=int))
    assert parts.J_CE < 1e-50
    assert np.abs(net.layers[1].grads["W"]).max() < 1e-50


# ------------------------------------------------------------------ optimizer

def test_sgd_zero_lr_is_noop_and_hand_update():
    net = Network([Flatten(), Dense(2, 1)])
    d = net.layers[1]
    d.params["W"][...] = [[1.0], [2.0]]
    d.params["b"][...] = [0.5]
    # quadratic toy: gradients set by hand
    d.grads["W"][...] = [[0.2], [-0.4]]
    d.grads["b"][...] = [1.0]
    before = d.params["W"].copy()
    SGD(0.0, 0.9).step(net)
    np.testing.assert_array_equal(d.params["W"], before)
    opt = SGD(0.1, 0.5)
    opt.step(net)  # v = -0.1 g
    np.testing.assert_allclose(d.params["W"], [[0.98], [2.04]])
    np.testing.assert_allclose(d.params["b"], [0.4])
    opt.step(net)  # v = 0.5 v - 0.1 g = -0.15 g
    np.testing.assert_allclose(d.params["W"], [[0.95], [2.10]])


def test_sgd_quadratic_descends():
    # minimize 0.5 * ||W - target||^2 through the optimizer interface
    net = Network([Flatten(), Dense(2, 2)])
    d = net.layers[1]
    target = np.array([[1.0, -1.0], [0.5, 2.0]])
    opt = SGD(0.1, 0.9)
    for _ in range(300):
        d.grads["W"] = d.params["W"] - target
        d.grads["b"] = np.zeros(2)
        opt.step(net)
    np.testing.assert_allclose(d.params["W"], target, atol=1e-6)


def test_owa_lr_multiplier(rng):
    net = tiny_owa_net(rng)
    pool = net.owa_layers()[0]
    pool.grads["w"] = np.ones_like(pool.params["w"])
    before = pool.params["w"].copy()
    cfg = TrainConfig(learning_rate=0.1, momentum=0.0, weight_lr_multiplier=0.5)
    sgd_step(net, cfg)
    np.testing.assert_allclose(pool.params["w"], before - 0.05)


def test_projected_regime_after_step(rng):
    net = tiny_owa_net(rng, Scope.PER_CHANNEL, Regime.PROJECTED)
    x = rng.standard_normal((4, 2, 7, 7))
    y = rng.integers(0, 3, 4)
    opt = SGD(0.5, 0.9)
    for _ in range(20):
        network_forward_backward(net, x, y)
        opt.step(net)
        w = net.owa_layers()[0].params["w"]
        assert np.all(w >= 0)
        np.testing.assert_allclose(w.sum(axis=1), 1.0, atol=1e-9)


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=0)
    with pytest.raises(ValueError):
        TrainConfig(epochs=0)


# --------------------------------------------------------------------- models

def test_build_nin_geometry():
    net = build_nin(10, "Orig")
    modes = [l.mode for l in net.pool_layers()]
    assert modes == [Mode.MAX, Mode.AVG, Mode.AVG]
    assert [l.plan.window for l in net.pool_layers()] == [(3, 3), (3, 3), (8, 8)]
    out = net.forward(np.random.default_rng(0).standard_normal((2, 3, 32, 32)))
    assert out.shape == (2, 10)

    owal = build_nin(10, Variant.OWAL)
    assert [l.params["w"].shape for l in owal.owa_layers()] == [(1, 9), (1, 9), (1, 64)]
    owalc = build_nin(100, "OWALC")
    assert [l.params["w"].shape[0] for l in owalc.owa_layers()] == [96, 192, 100]
    assert all(l.weights.regime == Regime.PENALTY for l in owalc.owa_layers())
    assert all(l.weights.regime == Regime.UNCONSTRAINED for l in build_nin(10, "OWALCnr").owa_layers())
    assert all(l.weights.regime == Regime.PROJECTED for l in build_nin(10, "OWALco").owa_layers())
    assert [l.mode for l in build_nin(10, "Avg").pool_layers()] == [Mode.AVG] * 3
    with pytest.raises(ValueError):
        build_nin(7)
    with pytest.raises(ValueError):
        Variant.parse("median")


def test_owa_layer_rows_match_channels():
    net = build_nin(10, "OWALC")
    assert [l.params["w"].shape for l in net.owa_layers()] == [(96, 9), (192, 9), (10, 64)]


def test_dropout_only_when_enabled(rng):
    d = Dropout(0.5, enabled=True, rng=rng)
    x = np.ones((2, 3, 4, 4))
    np.testing.assert_array_equal(d.forward(x, train=False), x)
    y = d.forward(x, train=True)
    assert set(np.unique(y)) <= {0.0, 2.0}
    np.testing.assert_array_equal(d.backward(np.ones_like(x)), y)
    np.testing.assert_array_equal(Dropout(0.5).forward(x, train=True), x)


@pytest.mark.parametrize("variant", ["Max", "Avg", "OWAL", "OWALnr", "OWALco", "OWALC", "OWALCnr", "OWALCco"])
def test_memorization(variant):
    # 50-sample memorization task: loss < 0.05 within 500 epochs
    rng = np.random.default_rng(5)
    x = rng.standard_normal((50, 1, 6, 6))
    y = rng.integers(0, 2, 50)
    net = build_small_net(variant, image_size=6, filters=8, seed=1, pool_window=2)
    cfg = TrainConfig(learning_rate=0.05, epochs=500, batch_size=50, weight_lr_multiplier=0.1,
                      reg=RegularizationConfig(1, 1, 0.01))
    best = math.inf

    def cb(epoch, net, row):
        nonlocal best
        best = min(best, row["J_CE"])
        if best < 0.05:
            raise StopIteration

    try:
        train(net, x, y, cfg, callback=cb)
    except StopIteration:
        pass
    assert best < 0.05


def test_penalty_drives_weights_toward_simplex():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((40, 1, 8, 8))
    y = rng.integers(0, 2, 40)
    net = build_small_net("OWAL", image_size=8, seed=0)
    w = net.owa_layers()[0].params["w"]
    w[...] = rng.uniform(-0.05, 0.1, w.shape)
    v0 = simplex_violation(w)
    reg = RegularizationConfig(1, 1, 0.01)
    start = net.penalty(reg)
    train(net, x, y, TrainConfig(learning_rate=0.05, epochs=30, batch_size=20, weight_lr_multiplier=0.1, reg=reg))
    assert net.penalty(reg) < start
    assert simplex_violation(w) < v0


def test_checkpoint_roundtrip(tmp_path):
    net = build_small_net("OWALC", image_size=8, filters=3, seed=4)
    net.owa_layers()[0].params["w"][...] = np.random.default_rng(0).standard_normal((3, 36))
    path = tmp_path / "net.owann"
    save_checkpoint(net, path)
    assert path.read_bytes()[:6] == b"OWANN1"
    other = build_small_net("OWALC", image_size=8, filters=3, seed=99)
    load_checkpoint(other, path)
    for (_, name, a), (_, _, b) in zip(net.parameters(), other.parameters()):
        np.testing.assert_array_equal(a.params[name], b.params[name])
    x = np.random.default_rng(1).standard_normal((2, 1, 8, 8))
    np.testing.assert_array_equal(net.forward(x), other.forward(x))
    with pytest.raises(CheckpointError):
        load_checkpoint(build_small_net("Max", image_size=8, filters=3), path)
    path.write_bytes(path.read_bytes()[:-5])
    with pytest.raises(CheckpointError):
        read_checkpoint(path)
