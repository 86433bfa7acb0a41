import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from branchtrace import mlp

CASES = [(act, 1, mask) for act in mlp.ACTIVATIONS for mask in ("none", "sin_pi_x")] + \
        [(act, 2, mask) for act in mlp.ACTIVATIONS for mask in ("none", "sin_pi_x_sin_pi_y")]


def random_net(act, p, mask, seed, q=5):
    return mlp.init_random(p, 2, q, act, mask, seed=seed, range=1.0, output_bias=0.3)


def rel_err(a, b):
    return np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-12)


def test_weight_counts():
    assert mlp.weight_count(1, 2, 5) == 46
    assert mlp.weight_count(2, 2, 10) == 151
    with pytest.raises(ValueError):
        mlp.weight_count(1, 0, 5)


@pytest.mark.parametrize("kind", mlp.ACTIVATIONS)
def test_activation_derivatives(kind, rng):
    z = rng.uniform(-3, 3, 100)
    a, d1, d2, _ = mlp.activation_derivs(kind, z)

    def f(t, k=0):
        return mlp.activation_derivs(kind, t)[k]

    h1, h2 = 1e-5, 1e-4
    fd1 = (f(z + h1) - f(z - h1)) / (2 * h1)
    fd2 = (f(z + h2, 1) - f(z - h2, 1)) / (2 * h2)
    assert rel_err(d1, fd1) <= 1e-6
    assert rel_err(d2, fd2) <= 1e-6


def test_sigmoid_no_overflow():
    a = mlp.activation_derivs("sigmoid", np.array([-800.0, 800.0]))[0]
    assert np.all(np.isfinite(a)) and a[0] == 0.0 and a[1] == 1.0


@pytest.mark.parametrize("act,p,mask", CASES)
@pytest.mark.parametrize("seed", range(20))
def test_input_derivatives_match_finite_differences(act, p, mask, seed):
    net = random_net(act, p, mask, seed)
    X = np.random.default_rng(seed).uniform(0.1, 0.9, (6, p))
    u, grad, second = mlp.forward_with_input_derivs(net, X)
    h = 1e-5
    for i in range(p):
        e = np.zeros(p)
        e[i] = h
        fd_grad = (mlp.forward(net, X + e) - mlp.forward(net, X - e)) / (2 * h)
        assert rel_err(grad[:, i], fd_grad) <= 1e-6
        H = 1e-4 * e / h
        fd_sec = (mlp.forward_with_input_derivs(net, X + H)[1][:, i]
                  - mlp.forward_with_input_derivs(net, X - H)[1][:, i]) / 2e-4
        assert rel_err(second[:, i], fd_sec) <= 1e-6
    assert np.allclose(u, mlp.forward(net, X), rtol=0, atol=1e-15)


@pytest.mark.parametrize("act,p,mask", CASES)
@pytest.mark.parametrize("seed", range(20))
def test_weight_sensitivities_match_finite_differences(act, p, mask, seed):
    net = random_net(act, p, mask, seed, q=4)
    X = np.random.default_rng(100 + seed).uniform(0.05, 0.95, (4, p))
    Su, Sg, Ss = mlp.weight_sensitivities(net, X)
    h = 1e-6
    fd_u = np.empty_like(Su)
    fd_g = np.empty_like(Sg)
    fd_s = np.empty_like(Ss)
    for k in range(net.size):
        wp, wm = net.weights.copy(), net.weights.copy()
        wp[k] += h
        wm[k] -= h
        up, gp, sp = mlp.forward_with_input_derivs(net.with_weights(wp), X)
        um, gm, sm = mlp.forward_with_input_derivs(net.with_weights(wm), X)
        fd_u[:, k] = (up - um) / (2 * h)
        fd_g[:, :, k] = (gp - gm) / (2 * h)
        fd_s[:, :, k] = (sp - sm) / (2 * h)
    assert rel_err(Su, fd_u) <= 1e-5
    assert rel_err(Sg, fd_g) <= 1e-5
    assert rel_err(Ss, fd_s) <= 1e-5


def test_single_point_shapes():
    net = random_net("tanh", 2, "none", 0)
    u, g, s = mlp.forward_with_input_derivs(net, np.array([0.3, 0.4]))
    assert isinstance(u, float) and g.shape == (2,) and s.shape == (2,)
    su, sg, ss = mlp.weight_sensitivities(net, np.array([0.3, 0.4]))
    assert su.shape == (net.size,) and sg.shape == (2, net.size)


def test_chunking_consistent():
    net = random_net("gaussian", 2, "sin_pi_x_sin_pi_y", 3)
    X = np.random.default_rng(0).uniform(0, 1, (700, 2))
    full = mlp.evaluate_all(net, X)
    part = mlp.evaluate_all(net, X[:10])
    for a, b in zip(full, part):
        assert np.allclose(a[:10], b, atol=1e-14)


@pytest.mark.parametrize("p,mask", [(1, "sin_pi_x"), (2, "sin_pi_x_sin_pi_y")])
def test_mask_vanishes_on_boundary(p, mask):
    net = random_net("gaussian", p, mask, 1)
    edge = [0.0, 1.0]
    if p == 1:
        X = np.array(edge)[:, None]
    else:
        t = np.linspace(0, 1, 11)
        X = np.array([pt for pt in itertools.product(t, t) if pt[0] in edge or pt[1] in edge])
    assert np.all(mlp.forward(net, X) == 0.0)


def test_invalid_construction():
    with pytest.raises(ValueError):
        mlp.Mlp(1, 2, 5, "relu", "none", np.zeros(46))
    with pytest.raises(ValueError):
        mlp.Mlp(2, 2, 5, "tanh", "sin_pi_x", np.zeros(mlp.weight_count(2, 2, 5)))
    with pytest.raises(ValueError):
        mlp.Mlp(1, 2, 5, "tanh", "none", np.zeros(45))
    with pytest.raises(ValueError):
        mlp.init_random(1, 2, 5, range=0.0)


def test_seeded_init_reproducible():
    a = mlp.init_random(1, 2, 5, seed=7)
    b = mlp.init_random(1, 2, 5, seed=7)
    assert np.array_equal(a.weights, b.weights)
    assert np.all(np.abs(a.weights[:-1]) <= 0.01)


def test_weights_immutable():
    net = random_net("tanh", 1, "none", 0)
    with pytest.raises(ValueError):
        net.weights[0] = 1.0


def test_json_roundtrip_exact(tmp_path):
    net = random_net("sigmoid", 2, "none", 4)
    path = tmp_path / "net.weights.json"
    net.save(path)
    back = mlp.Mlp.load(path)
    assert np.array_equal(back.weights, net.weights)
    assert (back.p, back.l, back.q, back.activation, back.mask) == \
        (net.p, net.l, net.q, net.activation, net.mask)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.01, 0.99))
def test_output_scaling_is_linear_in_last_layer(seed, x):
    net = random_net("tanh", 1, "sin_pi_x", seed)
    w = net.weights.copy()
    W, b, oW, ob = net.layers()[-1]
    w[oW:oW + W.size] *= -2.5
    w[ob:ob + b.size] *= -2.5
    assert mlp.forward(net.with_weights(w), x) == pytest.approx(-2.5 * mlp.forward(net, x),
                                                               rel=1e-12, abs=1e-15)
