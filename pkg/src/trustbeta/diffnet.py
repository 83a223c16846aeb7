"""Small multilayer perceptrons with hand-written reverse-mode gradients.

A network is a :class:`NetSpec` (layer sizes, named output heads) plus a flat
float64 parameter vector. Forward passes are batched over rows; ``backward``
returns gradients for the flat vector and for the inputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError

ACTIVATIONS = ("linear", "tanh", "softplus")
LOG_2PI = math.log(2.0 * math.pi)


def _act(name, z):
    if name == "linear":
        return z
    if name == "tanh":
        return np.tanh(z)
    if name == "softplus":
        return np.logaddexp(0.0, z)
    raise DomainError(f"unknown activation {name!r}")


def _act_grad(name, z, y):
    if name == "linear":
        return np.ones_like(z)
    if name == "tanh":
        return 1.0 - y * y
    if name == "softplus":
        return 0.5 * (1.0 + np.tanh(0.5 * z))  # sigmoid, overflow-free
    raise DomainError(f"unknown activation {name!r}")


@dataclass(frozen=True)
class NetSpec:
    """``layer_sizes`` = [inputs, hidden_1, ..., hidden_k]; each head is a
    linear map from the last hidden layer followed by its activation."""

    layer_sizes: tuple
    heads: tuple  # ((name, size, activation), ...)
    hidden_activation: str = "tanh"

    def __post_init__(self):
        object.__setattr__(self, "layer_sizes", tuple(int(s) for s in self.layer_sizes))
        object.__setattr__(self, "heads", tuple((str(n), int(s), str(a)) for n, s, a in self.heads))
        if len(self.layer_sizes) < 2:
            raise DomainError("need an input size and at least one hidden layer")
        if any(s < 1 for s in self.layer_sizes):
            raise DomainError("layer sizes must be >= 1")
        if self.hidden_activation != "tanh":
            raise DomainError("hidden activation must be tanh")
        if not self.heads:
            raise DomainError("need at least one output head")
        for name, size, act in self.heads:
            if size < 1 or act not in ACTIVATIONS:
                raise DomainError(f"bad head {name!r}: size={size}, activation={act!r}")

    @property
    def n_inputs(self) -> int:
        return self.layer_sizes[0]

    def shapes(self) -> list:
        """(rows, cols) of each weight matrix followed by its bias, in flat order."""
        out = []
        for a, b in zip(self.layer_sizes[:-1], self.layer_sizes[1:]):
            out += [(a, b), (b,)]
        last = self.layer_sizes[-1]
        for _, size, _ in self.heads:
            out += [(last, size), (size,)]
        return out

    @property
    def n_params(self) -> int:
        return sum(int(np.prod(s)) for s in self.shapes())

    def to_dict(self):
        return {
            "layer_sizes": list(self.layer_sizes),
            "heads": [{"name": n, "size": s, "activation": a} for n, s, a in self.heads],
            "hidden_activation": self.hidden_activation,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            d["layer_sizes"],
            tuple((h["name"], h["size"], h["activation"]) for h in d["heads"]),
            d.get("hidden_activation", "tanh"),
        )


def policy_spec(hidden=(64, 64)) -> NetSpec:
    """State (5) -> action mean (3, linear) and shared log-variance (1, linear)."""
    return NetSpec((5, *hidden), (("mu", 3, "linear"), ("logvar", 1, "linear")))


def reward_spec(hidden=(64, 64)) -> NetSpec:
    """State-action (8) -> reward in (-1, 1)."""
    return NetSpec((8, *hidden), (("r", 1, "tanh"),))


def unflatten(spec: NetSpec, flat: np.ndarray) -> list:
    """Views into ``flat`` shaped like ``spec.shapes()``."""
    out, i = [], 0
    for shp in spec.shapes():
        n = int(np.prod(shp))
        out.append(flat[i:i + n].reshape(shp))
        i += n
    return out


def init_params(spec: NetSpec, rng: np.random.Generator) -> np.ndarray:
    """Uniform fan-in init: weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), zero biases."""
    flat = np.zeros(spec.n_params)
    views = unflatten(spec, flat)
    for w in views[0::2]:
        bound = 1.0 / math.sqrt(w.shape[0])
        w[...] = rng.uniform(-bound, bound, size=w.shape)
    return flat


class Net:
    """A spec bound to a parameter vector. The vector is owned by the caller;
    optimizers update it in place."""

    def __init__(self, spec: NetSpec, params: np.ndarray):
        params = np.asarray(params, dtype=np.float64)
        if params.shape != (spec.n_params,):
            raise DomainError(f"expected {spec.n_params} parameters, got {params.shape}")
        self.spec = spec
        self.params = params

    @classmethod
    def create(cls, spec: NetSpec, rng: np.random.Generator) -> "Net":
        return cls(spec, init_params(spec, rng))

    def copy(self) -> "Net":
        return type(self)(self.spec, self.params.copy())

    def forward(self, x, return_cache=False):
        """Head outputs for a batch ``x`` of shape (B, n_inputs) (or one row)."""
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        if single:
            x = x[None, :]
        if x.ndim != 2 or x.shape[1] != self.spec.n_inputs:
            raise DomainError(f"input must have {self.spec.n_inputs} columns, got shape {x.shape}")
        views = unflatten(self.spec, self.params)
        n_hidden = len(self.spec.layer_sizes) - 1
        acts = [x]
        h = x
        for i in range(n_hidden):
            h = np.tanh(h @ views[2 * i] + views[2 * i + 1])
            acts.append(h)
        outs, pre = {}, {}
        for j, (name, _, act) in enumerate(self.spec.heads):
            w, b = views[2 * n_hidden + 2 * j], views[2 * n_hidden + 2 * j + 1]
            z = h @ w + b
            pre[name] = z
            outs[name] = _act(act, z)
        if single:
            res = {k: v[0] for k, v in outs.items()}
        else:
            res = outs
        if return_cache:
            return res, (acts, pre, outs)
        return res

    def backward(self, cache, upstream: dict):
        """Gradient of sum(upstream[h] * out[h]) w.r.t. the flat params and the
        inputs. Heads missing from ``upstream`` contribute nothing."""
        acts, pre, outs = cache
        views = unflatten(self.spec, self.params)
        grad = np.zeros_like(self.params)
        gviews = unflatten(self.spec, grad)
        n_hidden = len(self.spec.layer_sizes) - 1
        h = acts[-1]
        dh = np.zeros_like(h)
        for j, (name, _, act) in enumerate(self.spec.heads):
            if name not in upstream:
                continue
            g = np.asarray(upstream[name], dtype=np.float64).reshape(outs[name].shape)
            dz = g * _act_grad(act, pre[name], outs[name])
            k = 2 * n_hidden + 2 * j
            gviews[k][...] = h.T @ dz
            gviews[k + 1][...] = dz.sum(axis=0)
            dh += dz @ views[k].T
        for i in reversed(range(n_hidden)):
            dz = dh * (1.0 - acts[i + 1] ** 2)
            gviews[2 * i][...] = acts[i].T @ dz
            gviews[2 * i + 1][...] = dz.sum(axis=0)
            dh = dz @ views[2 * i].T
        return grad, dh

    def to_dict(self) -> dict:
        return {"spec": self.spec.to_dict(), "params": [float(v) for v in self.params]}

    @classmethod
    def from_dict(cls, d) -> "Net":
        return cls(NetSpec.from_dict(d["spec"]), np.array(d["params"], dtype=np.float64))


class PolicyNet(Net):
    """Gaussian policy: mean from the ``mu`` head, variance exp(logvar)."""

    def mean_var(self, states):
        out = self.forward(np.atleast_2d(states))
        return out["mu"], np.exp(out["logvar"][:, 0])


class RewardNet(Net):
    def reward(self, states, actions) -> np.ndarray:
        """Per-step rewards r(s, a) in (-1, 1) for (B, 5) states and (B, 3) actions."""
        x = np.concatenate([np.atleast_2d(states), np.atleast_2d(actions)], axis=1)
        return self.forward(x)["r"][:, 0]


def gaussian_logpdf(a, mu, var):
    """Log density of an isotropic Gaussian N(mu, var I), batched over rows."""
    a = np.asarray(a, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64)
    var = np.asarray(var, dtype=np.float64)
    if np.any(~(var > 0)):
        raise DomainError("variance must be positive")
    d = a.shape[-1]
    sq = np.sum((a - mu) ** 2, axis=-1)
    return -0.5 * (d * (LOG_2PI + np.log(var)) + sq / var)


def gaussian_logpdf_grad(a, mu, var):
    """Partial derivatives of :func:`gaussian_logpdf` w.r.t. (a, mu, var)."""
    a = np.asarray(a, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64)
    var = np.asarray(var, dtype=np.float64)
    diff = a - mu
    d = a.shape[-1]
    g_mu = diff / var[..., None]
    g_var = -0.5 * d / var + 0.5 * np.sum(diff ** 2, axis=-1) / var ** 2
    return -g_mu, g_mu, g_var


class Adam:
    """Per-parameter adaptive step sizes from decaying first/second moments."""

    def __init__(self, n, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = np.zeros(n)
        self.v = np.zeros(n)
        self.t = 0

    def step(self, params: np.ndarray, grad: np.ndarray) -> None:
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        mhat = self.m / (1 - self.beta1 ** self.t)
        vhat = self.v / (1 - self.beta2 ** self.t)
        params -= self.lr * mhat / (np.sqrt(vhat) + self.eps)


def numerical_gradient(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central differences of scalar ``f`` at ``x``."""
    x = np.array(x, dtype=np.float64)
    g = np.empty_like(x)
    for i in range(x.size):
        old = x.flat[i]
        x.flat[i] = old + h
        fp = f(x)
        x.flat[i] = old - h
        fm = f(x)
        x.flat[i] = old
        g.flat[i] = (fp - fm) / (2 * h)
    return g


def relative_error(analytic, numeric, floor=1e-6) -> float:
    """max_i |a_i - n_i| / max(|a_i|, |n_i|, floor)."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom))
