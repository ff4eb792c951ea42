import numpy as np
import pytest

from slicesim import nn


def scalar_forward(net, x):
    """Independent reimplementation: plain Python loops, no numpy algebra."""
    w1, b1, w2, b2, w3, b3 = net.views()

    def layer(vec, w, b, relu):
        out = []
        for j in range(w.shape[1]):
            acc = float(b[j])
            for i in range(w.shape[0]):
                acc += vec[i] * float(w[i, j])
            out.append(max(acc, 0.0) if relu else acc)
        return out

    h = layer(list(map(float, x)), w1, b1, True)
    h = layer(h, w2, b2, True)
    return np.array(layer(h, w3, b3, False))


def td_loss(net, x, action, target):
    diff = nn.forward(net, x)[action] - target
    return diff * diff


def fd_gradient(net, x, action, target, h=1e-5):
    grad = np.empty(net.n_params)
    for idx in range(net.n_params):
        keep = net.params[idx]
        net.params[idx] = keep + h
        up = td_loss(net, x, action, target)
        net.params[idx] = keep - h
        down = td_loss(net, x, action, target)
        net.params[idx] = keep
        grad[idx] = (up - down) / (2 * h)
    return grad


def test_parameter_count():
    net = nn.ValueNet(8, 3)
    assert net.n_params == 8 * 64 + 64 + 64 * 32 + 32 + 32 * 3 + 3 == 2755


def test_forward_zero_network():
    net = nn.ValueNet(8, 3)
    assert np.all(nn.forward(net, np.ones(8)) == 0.0)


def test_forward_bias_passthrough():
    net = nn.ValueNet(8, 3)
    *_, b3 = net.views()
    b3[:] = (1.5, -2.0, 0.25)
    out = nn.forward(net, np.full(8, 7.0))
    assert out.tolist() == [1.5, -2.0, 0.25]


def test_forward_matches_scalar_loops():
    rng = np.random.default_rng(0)
    for _ in range(5):
        net = nn.init_net(rng, 8, 3)
        x = rng.standard_normal(8)
        got = nn.forward(net, x)
        want = scalar_forward(net, x)
        np.testing.assert_allclose(got, want, rtol=1e-12, atol=1e-12)


def test_forward_deterministic():
    rng = np.random.default_rng(1)
    net = nn.init_net(rng, 8, 3)
    x = rng.standard_normal(8)
    a = nn.forward(net, x)
    b = nn.forward(net, x)
    assert np.array_equal(a, b)


def test_forward_batch_matches_single():
    rng = np.random.default_rng(2)
    net = nn.init_net(rng, 8, 3)
    xs = rng.standard_normal((17, 8))
    batch = nn.forward_batch(net, xs)
    for i, x in enumerate(xs):
        np.testing.assert_allclose(batch[i], nn.forward(net, x), rtol=1e-12)


def test_forward_rejects_bad_shape():
    net = nn.ValueNet(8, 3)
    with pytest.raises(ValueError):
        nn.forward(net, np.zeros(7))


def test_gradient_zero_residual():
    rng = np.random.default_rng(3)
    net = nn.init_net(rng, 8, 3)
    x = rng.standard_normal(8)
    target = float(nn.forward(net, x)[1])
    grad = nn.grad_td_loss(net, x, 1, target)
    assert np.all(grad == 0.0)


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(4)
    for _ in range(3):
        net = nn.init_net(rng, 8, 3)
        x = rng.standard_normal(8)
        action = int(rng.integers(3))
        target = float(rng.standard_normal())
        analytic = nn.grad_td_loss(net, x, action, target)
        numeric = fd_gradient(net, x, action, target)
        np.testing.assert_allclose(analytic, numeric, rtol=1e-4, atol=1e-7)


def test_batch_gradient_rejects_bad_action():
    rng = np.random.default_rng(20)
    net = nn.init_net(rng, 8, 3)
    xs = rng.standard_normal((4, 8))
    targets = rng.standard_normal(4)
    with pytest.raises(ValueError):
        nn.td_batch_grad(net, xs, np.array([0, 1, 3, 0]), targets)
    with pytest.raises(ValueError):
        nn.td_batch_grad(net, xs, np.array([0, -1, 1, 0]), targets)


def test_gradient_leaves_parameters_untouched():
    rng = np.random.default_rng(5)
    net = nn.init_net(rng, 8, 3)
    before = net.params.copy()
    nn.grad_td_loss(net, rng.standard_normal(8), 0, 0.7)
    assert np.array_equal(net.params, before)


def test_dead_relu_unit_gets_zero_gradient():
    rng = np.random.default_rng(6)
    net = nn.init_net(rng, 8, 3)
    w1, b1, *_ = net.views()
    b1[5] = -100.0  # unit 5 is dead for any bounded input
    x = rng.random(8)
    grad = nn.grad_td_loss(net, x, 0, 1.0)
    g_w1 = grad[: 8 * 64].reshape(8, 64)
    g_b1 = grad[8 * 64: 8 * 64 + 64]
    assert np.all(g_w1[:, 5] == 0.0)
    assert g_b1[5] == 0.0


def test_batch_gradient_is_mean_of_singles():
    rng = np.random.default_rng(7)
    net = nn.init_net(rng, 8, 3)
    xs = rng.standard_normal((6, 8))
    acts = rng.integers(0, 3, size=6)
    targets = rng.standard_normal(6)
    batch = nn.td_batch_grad(net, xs, acts, targets)
    singles = np.mean(
        [nn.grad_td_loss(net, xs[i], int(acts[i]), float(targets[i])) for i in range(6)],
        axis=0,
    )
    np.testing.assert_allclose(batch, singles, rtol=1e-10, atol=1e-12)


def test_adam_zero_gradient_is_identity():
    net = nn.ValueNet(4, 2)
    net.params[:] = np.linspace(-1, 1, net.n_params)
    before = net.params.copy()
    adam = nn.AdamState.for_net(net)
    nn.adam_step(net, adam, np.zeros(net.n_params))
    assert np.array_equal(net.params, before)
    assert adam.step_count == 1


def test_adam_first_step_size():
    # with g=1 the bias-corrected ratio is 1, so the step is -lr/(1+eps)
    net = nn.ValueNet(4, 2)
    adam = nn.AdamState.for_net(net, learning_rate=0.01)
    nn.adam_step(net, adam, np.ones(net.n_params))
    np.testing.assert_allclose(net.params, -0.01, rtol=1e-6)


def test_adam_scalar_quadratic_convergence():
    net = nn.ValueNet(1, 1, n_h1=1, n_h2=1)
    adam = nn.AdamState.for_net(net, learning_rate=0.1)
    grad = np.zeros(net.n_params)
    for _ in range(200):
        grad[0] = 2.0 * (net.params[0] - 3.0)
        nn.adam_step(net, adam, grad)
    assert abs(net.params[0] - 3.0) < 0.1


def test_init_biases_zero_and_bounds():
    rng = np.random.default_rng(8)
    net = nn.init_net(rng, 8, 3)
    w1, b1, w2, b2, w3, b3 = net.views()
    assert np.all(b1 == 0) and np.all(b2 == 0) and np.all(b3 == 0)
    assert np.max(np.abs(w1)) <= np.sqrt(6 / (8 + 64))
    assert np.max(np.abs(w2)) <= np.sqrt(6 / (64 + 32))
    assert np.max(np.abs(w3)) <= np.sqrt(6 / (32 + 3))


def test_init_seed_determinism():
    a = nn.init_net(np.random.default_rng(99), 8, 3)
    b = nn.init_net(np.random.default_rng(99), 8, 3)
    assert np.array_equal(a.params, b.params)


def test_copy_isolation():
    rng = np.random.default_rng(9)
    src = nn.init_net(rng, 8, 3)
    dup = nn.copy_net(src)
    x = rng.standard_normal(8)
    np.testing.assert_array_equal(nn.forward(src, x), nn.forward(dup, x))
    snapshot = nn.forward(dup, x)
    adam = nn.AdamState.for_net(src, learning_rate=0.1)
    nn.adam_step(src, adam, np.ones(src.n_params))
    assert not np.array_equal(src.params, dup.params)
    np.testing.assert_array_equal(nn.forward(dup, x), snapshot)


def test_copy_of_zero_net_is_zero():
    dup = nn.copy_net(nn.ValueNet(8, 3))
    assert np.all(dup.params == 0.0)


def test_params_dump_roundtrip(tmp_path):
    rng = np.random.default_rng(10)
    net = nn.init_net(rng, 8, 3)
    path = tmp_path / "params.txt"
    nn.save_params(net, str(path))
    other = nn.ValueNet(8, 3)
    nn.load_params(other, str(path))
    assert np.array_equal(net.params, other.params)
    with pytest.raises(ValueError):
        nn.load_params(nn.ValueNet(8, 2), str(path))
