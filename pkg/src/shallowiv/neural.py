"""Shallow feedforward volatility network with exact input and parameter derivatives.

The network maps (tau, kappa) to total implied volatility through L hidden
layers sharing one activation and a Softplus output. ``forward_jet`` carries
first derivatives in tau and kappa and the second derivative in kappa through
the layers; ``backward`` differentiates any linear combination of the four jet
outputs with respect to every weight and bias.

Checkpoint layout (little-endian, version 1)::

    8 bytes   magic b"SHIVNET\\0"
    uint32    format version (1)
    uint32    length n of the activation name, then n ASCII bytes
    uint32    depth L, then L x uint32 hidden widths
    for l = 1 .. L + 1:
        float64[n_l * n_(l-1)]  W_l, row-major (n_l rows)
        float64[n_l]            b_l

Input width is 2 and output width is 1; the output activation is always
Softplus and is not stored.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit

from shallowiv.errors import NumericAbort

ACTIVATIONS = ("relu", "relu2", "relu3", "elu", "tanh", "softplus")
HIDDEN_ACTIVATIONS = ("relu", "relu2", "relu3", "elu", "tanh")
WIDTHS = (32, 64, 128)
DEPTHS = (1, 2, 3)

CHECKPOINT_MAGIC = b"SHIVNET\0"
CHECKPOINT_VERSION = 1


def activation(kind, x):
    """Return (A, A', A'', A''') of the named activation at x.

    Conventions at the kink x = 0: ReLU'(0) = 0, ReLU2''(0) = 0, ReLU3'''(0) = 0,
    and ELU takes its left branch (ELU''(0) = ELU'''(0) = 1).
    """
    x = np.asarray(x, float)
    if kind == "softplus":
        s = expit(x)
        d2 = s * (1.0 - s)
        return np.logaddexp(0.0, x), s, d2, d2 * (1.0 - 2.0 * s)
    if kind == "tanh":
        t = np.tanh(x)
        sech2 = 1.0 - t * t
        return t, sech2, -2.0 * t * sech2, -2.0 * sech2 * (sech2 - 2.0 * t * t)
    pos = x > 0
    xp = np.where(pos, x, 0.0)
    step = pos.astype(float)
    zero = np.zeros_like(x)
    if kind == "relu":
        return xp, step, zero, zero
    if kind == "relu2":
        return 0.5 * xp * xp, xp, step, zero
    if kind == "relu3":
        return xp**3 / 6.0, 0.5 * xp * xp, xp, step
    if kind == "elu":
        e = np.exp(np.minimum(x, 0.0))
        return np.where(pos, x, e - 1.0), np.where(pos, 1.0, e), np.where(pos, 0.0, e), np.where(pos, 0.0, e)
    raise ValueError(f"unknown activation {kind!r}")


@dataclass(frozen=True)
class NetConfig:
    activation: str
    width: int
    depth: int

    def __post_init__(self):
        if self.activation not in HIDDEN_ACTIVATIONS:
            raise ValueError(f"hidden activation must be one of {HIDDEN_ACTIVATIONS}")
        if self.width < 1 or self.depth < 1:
            raise ValueError("width and depth must be positive")

    @property
    def name(self):
        return f"{self.activation}-{self.width}x{self.depth}"

    @property
    def widths(self):
        return (2,) + (self.width,) * self.depth + (1,)

    @classmethod
    def parse(cls, name):
        act, _, shape = name.partition("-")
        width, _, depth = shape.partition("x")
        return cls(act, int(width), int(depth))


def model_grid(activations=HIDDEN_ACTIVATIONS, widths=WIDTHS, depths=DEPTHS):
    return [NetConfig(a, w, d) for a in activations for w in widths for d in depths]


@dataclass
class VolNetwork:
    activation: str
    weights: list
    biases: list

    @property
    def depth(self):
        return len(self.weights) - 1

    @property
    def hidden_widths(self):
        return tuple(w.shape[0] for w in self.weights[:-1])

    @property
    def config(self):
        widths = set(self.hidden_widths)
        if len(widths) != 1:
            raise ValueError("network has unequal hidden widths")
        return NetConfig(self.activation, widths.pop(), self.depth)

    def params(self):
        """Flat list [W_1, b_1, ..., W_{L+1}, b_{L+1}] of the live arrays."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def copy(self):
        return VolNetwork(self.activation, [w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def layer_activation(self, layer):
        return "softplus" if layer == len(self.weights) - 1 else self.activation


def he_uniform_init(config: NetConfig, seed) -> VolNetwork:
    """Weights and biases of layer l drawn from U(-n_{l-1}^{-1/2}, n_{l-1}^{-1/2})."""
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    widths = config.widths
    for n_in, n_out in zip(widths[:-1], widths[1:]):
        bound = n_in**-0.5
        weights.append(rng.uniform(-bound, bound, size=(n_out, n_in)))
        biases.append(rng.uniform(-bound, bound, size=n_out))
    return VolNetwork(config.activation, weights, biases)


def zeros_like_network(net: VolNetwork) -> VolNetwork:
    return VolNetwork(net.activation, [np.zeros_like(w) for w in net.weights], [np.zeros_like(b) for b in net.biases])


def _inputs(tau, kappa):
    tau = np.atleast_1d(np.asarray(tau, float))
    kappa = np.atleast_1d(np.asarray(kappa, float))
    tau, kappa = np.broadcast_arrays(tau, kappa)
    return np.column_stack([tau.ravel(), kappa.ravel()])


def _check_finite(arr, layer):
    if not np.all(np.isfinite(arr)):
        raise NumericAbort(f"non-finite activation at layer {layer}", layer=layer)


# overflow shows up as a non-finite pre-activation and aborts there
@np.errstate(over="ignore", invalid="ignore")
def forward(net: VolNetwork, tau, kappa):
    x = _inputs(tau, kappa)
    for l, (w, b) in enumerate(zip(net.weights, net.biases)):
        y = x @ w.T + b
        _check_finite(y, l + 1)
        x = activation(net.layer_activation(l), y)[0]
    return x[:, 0]


@dataclass
class LayerCache:
    x_in: np.ndarray
    t_tau_in: np.ndarray
    t_kappa_in: np.ndarray
    s_in: np.ndarray
    d1: np.ndarray  # A'(y)
    d2: np.ndarray  # A''(y)
    d3: np.ndarray  # A'''(y)
    u_tau: np.ndarray  # W t_tau_in
    u_kappa: np.ndarray
    u_s: np.ndarray


@dataclass
class NetworkJet:
    omega: np.ndarray
    d_tau: np.ndarray
    d_kappa: np.ndarray
    d_kappa2: np.ndarray
    cache: list = field(default_factory=list, repr=False)


@np.errstate(over="ignore", invalid="ignore")
def forward_jet(net: VolNetwork, tau, kappa) -> NetworkJet:
    """Value, d/dtau, d/dkappa and d2/dkappa2 of the network output."""
    x = _inputs(tau, kappa)
    n = x.shape[0]
    t_tau = np.zeros((n, 2))
    t_tau[:, 0] = 1.0
    t_kap = np.zeros((n, 2))
    t_kap[:, 1] = 1.0
    s = np.zeros((n, 2))
    cache = []
    for l, (w, b) in enumerate(zip(net.weights, net.biases)):
        y = x @ w.T + b
        _check_finite(y, l + 1)
        u_tau = t_tau @ w.T
        u_kap = t_kap @ w.T
        u_s = s @ w.T
        a0, a1, a2, a3 = activation(net.layer_activation(l), y)
        cache.append(LayerCache(x, t_tau, t_kap, s, a1, a2, a3, u_tau, u_kap, u_s))
        x = a0
        t_tau = a1 * u_tau
        t_kap = a1 * u_kap
        s = a2 * u_kap * u_kap + a1 * u_s
    return NetworkJet(x[:, 0], t_tau[:, 0], t_kap[:, 0], s[:, 0], cache)


def backward(net: VolNetwork, jet: NetworkJet, adjoints):
    """Parameter gradients of sum_i (g_w w + g_t w_tau + g_k w_kappa + g_kk w_kappakappa)_i.

    ``adjoints`` is a 4-tuple of per-point weights (or scalars) on omega,
    d_tau omega, d_kappa omega and d_kappa2 omega. Returns (dW list, db list).
    """
    n = jet.omega.shape[0]
    if len(jet.cache) != len(net.weights):
        raise ValueError("jet cache does not match the network depth")
    g = [np.broadcast_to(np.asarray(a, float), (n,)).reshape(n, 1) for a in adjoints]
    bar_x, bar_t, bar_k, bar_s = g
    d_w = [None] * len(net.weights)
    d_b = [None] * len(net.weights)
    for l in range(len(net.weights) - 1, -1, -1):
        c = jet.cache[l]
        w = net.weights[l]
        if bar_x.shape[1] != c.d1.shape[1]:
            raise ValueError("adjoint shape does not match layer width")
        bar_y = (
            bar_x * c.d1
            + bar_t * c.d2 * c.u_tau
            + bar_k * c.d2 * c.u_kappa
            + bar_s * (c.d3 * c.u_kappa * c.u_kappa + c.d2 * c.u_s)
        )
        bar_ut = bar_t * c.d1
        bar_uk = bar_k * c.d1 + 2.0 * bar_s * c.d2 * c.u_kappa
        bar_us = bar_s * c.d1
        d_w[l] = bar_y.T @ c.x_in + bar_ut.T @ c.t_tau_in + bar_uk.T @ c.t_kappa_in + bar_us.T @ c.s_in
        d_b[l] = bar_y.sum(axis=0)
        if l:
            bar_x = bar_y @ w
            bar_t = bar_ut @ w
            bar_k = bar_uk @ w
            bar_s = bar_us @ w
    return d_w, d_b


# --------------------------------------------------------------- checkpoints


def save_checkpoint(net: VolNetwork, path):
    name = net.activation.encode("ascii")
    hidden = net.hidden_widths
    parts = [
        CHECKPOINT_MAGIC,
        struct.pack("<II", CHECKPOINT_VERSION, len(name)),
        name,
        struct.pack(f"<I{len(hidden)}I", len(hidden), *hidden),
    ]
    for w, b in zip(net.weights, net.biases):
        parts.append(np.ascontiguousarray(w, dtype="<f8").tobytes())
        parts.append(np.ascontiguousarray(b, dtype="<f8").tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_checkpoint(path) -> VolNetwork:
    data = Path(path).read_bytes()
    if data[:8] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a network checkpoint")
    version, name_len = struct.unpack_from("<II", data, 8)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    off = 16
    act = data[off : off + name_len].decode("ascii")
    off += name_len
    (depth,) = struct.unpack_from("<I", data, off)
    off += 4
    hidden = struct.unpack_from(f"<{depth}I", data, off)
    off += 4 * depth
    widths = (2,) + tuple(hidden) + (1,)
    weights, biases = [], []
    for n_in, n_out in zip(widths[:-1], widths[1:]):
        w = np.frombuffer(data, dtype="<f8", count=n_in * n_out, offset=off).reshape(n_out, n_in)
        off += 8 * n_in * n_out
        b = np.frombuffer(data, dtype="<f8", count=n_out, offset=off)
        off += 8 * n_out
        weights.append(w.astype(float))
        biases.append(b.astype(float))
    if off != len(data):
        raise ValueError(f"{path}: trailing bytes in checkpoint")
    return VolNetwork(act, weights, biases)
