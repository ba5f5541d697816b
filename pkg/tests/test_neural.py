import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from shallowiv import neural as nn
from shallowiv.errors import NumericAbort

SMOOTH = ("tanh", "softplus", "elu")


@pytest.mark.parametrize("kind", nn.ACTIVATIONS)
def test_activation_derivatives_fd(kind, rng):
    x = rng.uniform(-3, 3, 200)
    x = x[np.abs(x) > 1e-2]  # away from kinks
    h = 1e-6
    vals = nn.activation(kind, x)
    plus = nn.activation(kind, x + h)
    minus = nn.activation(kind, x - h)
    for order in range(3):
        fd = (plus[order] - minus[order]) / (2 * h)
        assert np.allclose(fd, vals[order + 1], rtol=1e-6, atol=1e-7), (kind, order)


def test_activation_values():
    x = np.array([-2.0, 0.0, 1.5])
    assert np.array_equal(nn.activation("relu", x)[0], [0.0, 0.0, 1.5])
    assert np.allclose(nn.activation("relu2", x)[0], [0.0, 0.0, 1.125])
    assert np.allclose(nn.activation("relu3", x)[0], [0.0, 0.0, 1.5**3 / 6])
    assert np.allclose(nn.activation("elu", x)[0], [np.exp(-2) - 1, 0.0, 1.5])
    assert np.allclose(nn.activation("softplus", x)[0], np.log1p(np.exp(x)))
    assert nn.activation("softplus", np.array([800.0]))[0][0] == 800.0
    with pytest.raises(ValueError):
        nn.activation("gelu", x)


def test_model_grid_and_names():
    grid = nn.model_grid()
    assert len(grid) == 45
    names = {m.name for m in grid}
    assert len(names) == 45
    assert all(nn.NetConfig.parse(m.name) == m for m in grid)
    assert nn.NetConfig("relu2", 128, 1).name == "relu2-128x1"
    with pytest.raises(ValueError):
        nn.NetConfig("softplus", 32, 1)
    with pytest.raises(ValueError):
        nn.NetConfig("relu", 0, 1)


def test_he_uniform_bounds_and_determinism():
    cfg = nn.NetConfig("tanh", 64, 2)
    a = nn.he_uniform_init(cfg, 5)
    b = nn.he_uniform_init(cfg, 5)
    c = nn.he_uniform_init(cfg, 6)
    assert all(np.array_equal(x, y) for x, y in zip(a.params(), b.params()))
    assert not np.array_equal(a.weights[0], c.weights[0])
    for w, bias, n_in in zip(a.weights, a.biases, cfg.widths[:-1]):
        assert np.abs(w).max() <= n_in**-0.5 and np.abs(bias).max() <= n_in**-0.5
    assert [w.shape for w in a.weights] == [(64, 2), (64, 64), (1, 64)]


def _jet_fd(net, tau, kappa, h=1e-4):
    f = lambda t, k: nn.forward(net, t, k)  # noqa: E731
    d_tau = (f(tau + h, kappa) - f(tau - h, kappa)) / (2 * h)
    d_kap = (f(tau, kappa + h) - f(tau, kappa - h)) / (2 * h)
    d_kk = (f(tau, kappa + h) - 2 * f(tau, kappa) + f(tau, kappa - h)) / (h * h)
    return d_tau, d_kap, d_kk


@pytest.mark.parametrize("kind", SMOOTH + ("relu2", "relu3"))
def test_jet_matches_finite_differences(kind, rng):
    net = nn.he_uniform_init(nn.NetConfig(kind if kind != "softplus" else "tanh", 16, 2), 3)
    tau, kappa = rng.uniform(0.1, 2, 25), rng.uniform(-1, 1, 25)
    jet = nn.forward_jet(net, tau, kappa)
    assert np.array_equal(jet.omega, nn.forward(net, tau, kappa))
    d_tau, d_kap, d_kk = _jet_fd(net, tau, kappa)
    assert np.allclose(jet.d_tau, d_tau, rtol=1e-6, atol=1e-8)
    assert np.allclose(jet.d_kappa, d_kap, rtol=1e-6, atol=1e-8)
    # relu2 has a jump in A''; skip points whose stencil may cross it
    ok = np.ones(tau.size, bool)
    if kind == "relu2":
        for c, w, b in zip(jet.cache[:-1], net.weights, net.biases):
            ok &= np.all(np.abs(c.x_in @ w.T + b) > 1e-3, axis=1)
    assert np.allclose(jet.d_kappa2[ok], d_kk[ok], rtol=1e-4, atol=1e-5)


def test_relu_network_is_piecewise_linear(rng):
    net = nn.he_uniform_init(nn.NetConfig("relu", 32, 3), 1)
    jet = nn.forward_jet(net, rng.uniform(0.1, 2, 50), rng.uniform(-1, 1, 50))
    # only the softplus output contributes curvature: w_kk = sp''(y) (dy/dk)^2 >= 0
    assert np.all(jet.d_kappa2 >= 0)


@given(st.integers(0, 2**31), st.sampled_from(nn.HIDDEN_ACTIVATIONS), st.integers(1, 3))
def test_softplus_output_is_positive(seed, kind, depth):
    net = nn.he_uniform_init(nn.NetConfig(kind, 8, depth), seed)
    g = np.linspace(-1, 1, 9)
    assert np.all(nn.forward(net, np.abs(g) + 0.1, g) > 0)


def _param_fd(net, loss, h=1e-6):
    out = []
    for p in net.params():
        g = np.zeros_like(p)
        it = np.nditer(p, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            old = p[i]
            p[i] = old + h
            fp = loss()
            p[i] = old - h
            fm = loss()
            p[i] = old
            g[i] = (fp - fm) / (2 * h)
        out.append(g)
    return out


@pytest.mark.parametrize("kind", nn.HIDDEN_ACTIVATIONS)
def test_backward_matches_finite_differences(kind, rng):
    net = nn.he_uniform_init(nn.NetConfig(kind, 6, 2), 11)
    tau, kappa = rng.uniform(0.2, 2, 7), rng.uniform(-1, 1, 7)
    adj = [rng.normal(size=7) for _ in range(4)]

    def loss():
        j = nn.forward_jet(net, tau, kappa)
        return float(np.dot(adj[0], j.omega) + np.dot(adj[1], j.d_tau) + np.dot(adj[2], j.d_kappa)
                     + np.dot(adj[3], j.d_kappa2))

    d_w, d_b = nn.backward(net, nn.forward_jet(net, tau, kappa), adj)
    analytic = [g for pair in zip(d_w, d_b) for g in pair]
    numeric = _param_fd(net, loss)
    for a, n in zip(analytic, numeric):
        scale = max(np.abs(n).max(), 1e-3)
        assert np.abs(a - n).max() / scale < 1e-5, kind


def test_forward_aborts_on_overflow():
    net = nn.he_uniform_init(nn.NetConfig("relu3", 8, 3), 0)
    net.weights[0] *= 1e120
    with pytest.raises(NumericAbort) as err:
        nn.forward_jet(net, [1.0], [0.5])
    assert err.value.layer is not None


def test_checkpoint_round_trip(tmp_path):
    net = nn.he_uniform_init(nn.NetConfig("elu", 32, 3), 9)
    nn.save_checkpoint(net, tmp_path / "c.bin")
    back = nn.load_checkpoint(tmp_path / "c.bin")
    assert back.activation == "elu" and back.hidden_widths == (32, 32, 32)
    assert all(np.array_equal(a, b) for a, b in zip(net.params(), back.params()))
    raw = (tmp_path / "c.bin").read_bytes()
    assert raw[:8] == b"SHIVNET\0"
    assert len(raw) == 8 + 8 + 3 + 4 + 12 + 8 * sum(w.size + b.size for w, b in zip(net.weights, net.biases))


def test_checkpoint_rejects_garbage(tmp_path):
    (tmp_path / "x.bin").write_bytes(b"nonsense")
    with pytest.raises(ValueError):
        nn.load_checkpoint(tmp_path / "x.bin")
    net = nn.he_uniform_init(nn.NetConfig("tanh", 4, 1), 0)
    nn.save_checkpoint(net, tmp_path / "y.bin")
    (tmp_path / "y.bin").write_bytes((tmp_path / "y.bin").read_bytes() + b"\0")
    with pytest.raises(ValueError):
        nn.load_checkpoint(tmp_path / "y.bin")


def test_copy_is_deep():
    net = nn.he_uniform_init(nn.NetConfig("tanh", 4, 1), 0)
    dup = net.copy()
    dup.weights[0][0, 0] += 1.0
    assert net.weights[0][0, 0] != dup.weights[0][0, 0]
    z = nn.zeros_like_network(net)
    assert all(not p.any() for p in z.params())
