import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from trustbeta.diffnet import (
    Adam,
    Net,
    NetSpec,
    PolicyNet,
    RewardNet,
    gaussian_logpdf,
    gaussian_logpdf_grad,
    init_params,
    numerical_gradient,
    policy_spec,
    relative_error,
    reward_spec,
    unflatten,
)
from trustbeta.errors import DomainError

SPECS = {
    "policy": policy_spec((8, 6)),
    "reward": reward_spec((8, 6)),
    "softplus": NetSpec((4, 5), (("v", 2, "softplus"), ("w", 1, "linear"))),
}


def test_spec_counts_parameters():
    spec = policy_spec((64, 64))
    assert spec.n_params == (5 * 64 + 64) + (64 * 64 + 64) + (64 * 3 + 3) + (64 + 1)
    assert NetSpec.from_dict(spec.to_dict()) == spec


@pytest.mark.parametrize("kw", [
    {"layer_sizes": (5,), "heads": (("r", 1, "tanh"),)},
    {"layer_sizes": (5, 0), "heads": (("r", 1, "tanh"),)},
    {"layer_sizes": (5, 4), "heads": ()},
    {"layer_sizes": (5, 4), "heads": (("r", 1, "relu"),)},
    {"layer_sizes": (5, 4), "heads": (("r", 1, "tanh"),), "hidden_activation": "relu"},
])
def test_spec_validation(kw):
    with pytest.raises(DomainError):
        NetSpec(**kw)


def test_init_is_fan_in_scaled_with_zero_biases():
    spec = reward_spec((16, 4))
    views = unflatten(spec, init_params(spec, np.random.default_rng(0)))
    for w, b in zip(views[0::2], views[1::2]):
        assert np.all(np.abs(w) <= 1 / math.sqrt(w.shape[0]))
        assert np.all(b == 0)


def test_zero_network_outputs_zero():
    spec = reward_spec((4, 4))
    net = RewardNet(spec, np.zeros(spec.n_params))
    assert np.all(net.forward(np.ones((3, 8)))["r"] == 0)


def test_tanh_head_range(rng):
    net = Net.create(reward_spec((16, 16)), rng)
    net.params *= 20
    r = net.forward(rng.normal(scale=10, size=(10_000, 8)))["r"]
    assert np.all(np.abs(r) <= 1)


def test_hand_computed_single_unit():
    # inputs 2 -> one tanh unit -> tanh head
    spec = NetSpec((2, 1), (("r", 1, "tanh"),))
    w1, b1, w2, b2 = np.array([0.5, -1.0]), 0.1, 2.0, -0.3
    net = Net(spec, np.array([*w1, b1, w2, b2]))
    x = np.array([0.4, 0.2])
    h = math.tanh(0.5 * 0.4 - 1.0 * 0.2 + 0.1)
    assert net.forward(x)["r"][0] == pytest.approx(math.tanh(2.0 * h - 0.3), abs=1e-15)


def test_forward_rejects_wrong_width(rng):
    with pytest.raises(DomainError):
        Net.create(policy_spec((4,)), rng).forward(np.zeros((2, 4)))


def test_params_length_checked():
    with pytest.raises(DomainError):
        Net(policy_spec((4,)), np.zeros(3))


@pytest.mark.parametrize("name", sorted(SPECS))
@pytest.mark.parametrize("seed", range(20))
def test_backward_matches_finite_differences(name, seed):
    spec = SPECS[name]
    rng = np.random.default_rng(seed)
    net = Net.create(spec, rng)
    x = rng.normal(size=(5, spec.n_inputs))
    up = {h: rng.normal(size=(5, s)) for h, s, _ in spec.heads}

    def f(p):
        out = Net(spec, p).forward(x)
        return sum(float(np.sum(up[h] * out[h])) for h in up)

    _, cache = net.forward(x, return_cache=True)
    grad, gx = net.backward(cache, up)
    assert relative_error(grad, numerical_gradient(f, net.params)) < 1e-4

    def fx(flat):
        out = net.forward(flat.reshape(x.shape))
        return sum(float(np.sum(up[h] * out[h])) for h in up)

    assert relative_error(gx, numerical_gradient(fx, x.ravel()).reshape(x.shape)) < 1e-4


def test_zero_upstream_gives_zero_gradient(rng):
    net = Net.create(SPECS["policy"], rng)
    _, cache = net.forward(rng.normal(size=(4, 5)), return_cache=True)
    grad, gx = net.backward(cache, {"mu": np.zeros((4, 3)), "logvar": np.zeros((4, 1))})
    assert not grad.any() and not gx.any()


def test_tanh_head_slope_one_at_zero():
    spec = NetSpec((1, 1), (("r", 1, "tanh"),))
    net = Net(spec, np.array([0.0, 0.0, 1.0, 0.0]))
    _, cache = net.forward(np.zeros((1, 1)), return_cache=True)
    grad, _ = net.backward(cache, {"r": np.ones((1, 1))})
    # d r / d b2 = tanh'(0) = 1
    assert grad[3] == pytest.approx(1.0)


def test_policy_mean_var_shapes(rng):
    pol = PolicyNet(policy_spec((4,)), init_params(policy_spec((4,)), rng))
    mu, var = pol.mean_var(rng.normal(size=(6, 5)))
    assert mu.shape == (6, 3) and var.shape == (6,) and np.all(var > 0)


def test_net_dict_round_trip(rng):
    net = RewardNet.create(reward_spec((3,)), rng)
    back = RewardNet.from_dict(net.to_dict())
    assert np.array_equal(back.params, net.params) and back.spec == net.spec
    assert type(net.copy()) is RewardNet


# Gaussian log-density


def test_logpdf_at_mean_unit_variance():
    v = gaussian_logpdf(np.zeros((1, 3)), np.zeros((1, 3)), np.ones(1))[0]
    assert v == pytest.approx(-1.5 * math.log(2 * math.pi))
    assert v == pytest.approx(-2.756815, abs=1e-6)


def test_logpdf_matches_scipy(rng):
    from scipy.stats import multivariate_normal

    a, mu = rng.normal(size=3), rng.normal(size=3)
    var = 0.7
    expect = multivariate_normal(mu, var * np.eye(3)).logpdf(a)
    assert gaussian_logpdf(a[None], mu[None], np.array([var]))[0] == pytest.approx(expect, rel=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=3, max_size=3), st.floats(-3, 3), st.floats(0.05, 5))
def test_logpdf_translation_invariant(a, shift, var):
    a = np.array([a])
    mu = np.zeros((1, 3)) + 0.3
    v = np.array([var])
    assert gaussian_logpdf(a + shift, mu + shift, v)[0] == pytest.approx(gaussian_logpdf(a, mu, v)[0], abs=1e-9)


def test_logpdf_decreases_with_distance():
    d = np.linspace(0, 4, 20)
    a = np.column_stack([d, np.zeros(20), np.zeros(20)])
    lp = gaussian_logpdf(a, np.zeros((20, 3)), np.full(20, 0.5))
    assert np.all(np.diff(lp) < 0)


def test_logpdf_rejects_nonpositive_variance():
    with pytest.raises(DomainError):
        gaussian_logpdf(np.zeros((1, 3)), np.zeros((1, 3)), np.zeros(1))


def test_logpdf_grad_matches_finite_differences(rng):
    a, mu, var = rng.normal(size=3), rng.normal(size=3), 0.8
    ga, gmu, gvar = gaussian_logpdf_grad(a[None], mu[None], np.array([var]))
    f_a = lambda x: gaussian_logpdf(x[None], mu[None], np.array([var]))[0]
    f_mu = lambda x: gaussian_logpdf(a[None], x[None], np.array([var]))[0]
    f_v = lambda x: gaussian_logpdf(a[None], mu[None], x)[0]
    assert relative_error(ga[0], numerical_gradient(f_a, a)) < 1e-6
    assert relative_error(gmu[0], numerical_gradient(f_mu, mu)) < 1e-6
    assert relative_error(gvar, numerical_gradient(f_v, np.array([var]))) < 1e-6


# Optimizer and helpers


def test_adam_minimises_quadratic():
    x = np.array([3.0, -2.0])
    opt = Adam(2, lr=0.1)
    for _ in range(500):
        opt.step(x, 2 * x)
    assert np.all(np.abs(x) < 1e-2)


def test_numerical_gradient_of_known_function():
    g = numerical_gradient(lambda x: float(np.sum(x ** 3)), np.array([1.0, -2.0]))
    assert np.allclose(g, [3.0, 12.0], rtol=1e-8)


def test_relative_error_floor():
    assert relative_error(np.array([0.0]), np.array([1e-9])) == pytest.approx(1e-3)
    assert relative_error(np.array([2.0]), np.array([1.0])) == pytest.approx(0.5)
