"""Small numpy neural-network kernel: dense layers, LSTM cells, dropout,
SGD/RMSProp with L2 and clipping, and a finite-difference gradient oracle.

Every model in the package (autoencoders, seq2seq detectors, the policy
network) is built from these pieces. All arithmetic is float64.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

ACTIVATIONS = ("tanh", "linear", "softmax")
LOG_FLOOR = 1e-12


class ShapeError(ValueError):
    """Raised when an input does not have the size a layer expects."""

    def __init__(self, what: str, expected, actual):
        super().__init__(f"{what}: expected {expected}, got {actual}")
        self.expected = expected
        self.actual = actual


class NonFiniteLossError(FloatingPointError):
    pass


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(int(seed)))


def glorot_uniform(rng: np.random.Generator, fan_out: int, fan_in: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_out, fan_in))


def sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def softmax(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


# --------------------------------------------------------------------- dense


@dataclass
class Dense:
    weights: np.ndarray  # (out, in)
    biases: np.ndarray  # (out,)
    activation: str = "linear"

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.biases = np.asarray(self.biases, dtype=np.float64)
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.weights.ndim != 2 or self.biases.shape != (self.weights.shape[0],):
            raise ShapeError("bias length", self.weights.shape[0], self.biases.shape)

    @classmethod
    def init(cls, n_in: int, n_out: int, activation: str, rng: np.random.Generator) -> "Dense":
        if n_in <= 0 or n_out <= 0:
            raise ValueError("dense layer sizes must be positive")
        return cls(glorot_uniform(rng, n_out, n_in), np.zeros(n_out), activation)

    @property
    def n_in(self) -> int:
        return self.weights.shape[1]

    @property
    def n_out(self) -> int:
        return self.weights.shape[0]

    def params(self) -> list[np.ndarray]:
        return [self.weights, self.biases]

    def kernel_mask(self) -> list[bool]:
        return [True, False]

    def forward(self, x: np.ndarray, training: bool = False, rng=None):
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.n_in:
            raise ShapeError("dense input length", self.n_in, x.shape[-1])
        z = x @ self.weights.T + self.biases
        if self.activation == "tanh":
            y = np.tanh(z)
        elif self.activation == "softmax":
            y = softmax(z)
        else:
            y = z
        return y, (x, y)

    def backward(self, cache, dy: np.ndarray):
        """Backprop through the layer. For softmax layers `dy` is taken to be
        the gradient w.r.t. the logits (losses fuse the softmax Jacobian)."""
        x, y = cache
        if self.activation == "tanh":
            dz = dy * (1.0 - y * y)
        else:
            dz = dy
        x2 = x.reshape(-1, x.shape[-1])
        dz2 = dz.reshape(-1, dz.shape[-1])
        grads = [dz2.T @ x2, dz2.sum(axis=0)]
        dx = dz @ self.weights
        return dx, grads


def dense_forward(layer: Dense, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ShapeError("dense input rank", 1, x.ndim)
    return layer.forward(x)[0]


@dataclass
class Dropout:
    rate: float

    def __post_init__(self):
        if not 0.0 <= self.rate < 1.0:
            raise ValueError("dropout rate must be in [0, 1)")

    def params(self) -> list[np.ndarray]:
        return []

    def kernel_mask(self) -> list[bool]:
        return []

    def forward(self, x, training: bool = False, rng: np.random.Generator | None = None):
        if not training or self.rate == 0.0:
            return x, None
        keep = 1.0 - self.rate
        mask = (rng.random(x.shape) < keep) / keep
        return x * mask, mask

    def backward(self, cache, dy):
        if cache is None:
            return dy, []
        return dy * cache, []


# ---------------------------------------------------------------------- lstm


@dataclass
class LSTMCell:
    """LSTM with gates stacked in (input, forget, candidate, output) order.

    `bias_convention="double"` keeps a second bias vector on the recurrent
    path, as CuDNN-style kernels do.
    """

    input_weights: np.ndarray  # (4u, in)
    recurrent_weights: np.ndarray  # (4u, u)
    bias: np.ndarray  # (4u,)
    recurrent_bias: np.ndarray | None = None  # (4u,) for the double convention

    def __post_init__(self):
        self.input_weights = np.asarray(self.input_weights, dtype=np.float64)
        self.recurrent_weights = np.asarray(self.recurrent_weights, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        u4 = self.input_weights.shape[0]
        if u4 % 4 or self.recurrent_weights.shape != (u4, u4 // 4) or self.bias.shape != (u4,):
            raise ShapeError("lstm parameter shapes", (u4, u4 // 4), self.recurrent_weights.shape)
        if self.recurrent_bias is not None:
            self.recurrent_bias = np.asarray(self.recurrent_bias, dtype=np.float64)
            if self.recurrent_bias.shape != (u4,):
                raise ShapeError("recurrent bias", (u4,), self.recurrent_bias.shape)

    @classmethod
    def init(cls, input_dim: int, units: int, rng: np.random.Generator,
             bias_convention: str = "single") -> "LSTMCell":
        if input_dim <= 0 or units <= 0:
            raise ValueError(f"lstm needs positive sizes, got input_dim={input_dim}, units={units}")
        if bias_convention not in ("single", "double"):
            raise ValueError(f"unknown bias convention {bias_convention!r}")
        wx = glorot_uniform(rng, 4 * units, input_dim)
        wh = glorot_uniform(rng, 4 * units, units)
        b = np.zeros(4 * units)
        b[units:2 * units] = 1.0  # forget-gate bias starts open
        rb = np.zeros(4 * units) if bias_convention == "double" else None
        return cls(wx, wh, b, rb)

    @property
    def units(self) -> int:
        return self.recurrent_weights.shape[1]

    @property
    def input_dim(self) -> int:
        return self.input_weights.shape[1]

    @property
    def bias_convention(self) -> str:
        return "single" if self.recurrent_bias is None else "double"

    def params(self) -> list[np.ndarray]:
        ps = [self.input_weights, self.recurrent_weights, self.bias]
        if self.recurrent_bias is not None:
            ps.append(self.recurrent_bias)
        return ps

    def kernel_mask(self) -> list[bool]:
        return [True, True, False] + ([False] if self.recurrent_bias is not None else [])

    def total_bias(self) -> np.ndarray:
        if self.recurrent_bias is None:
            return self.bias
        return self.bias + self.recurrent_bias

    def step(self, x, h, c):
        u = self.units
        z = x @ self.input_weights.T + h @ self.recurrent_weights.T + self.total_bias()
        i = sigmoid(z[..., :u])
        f = sigmoid(z[..., u:2 * u])
        g = np.tanh(z[..., 2 * u:3 * u])
        o = sigmoid(z[..., 3 * u:])
        c_new = f * c + i * g
        tc = np.tanh(c_new)
        h_new = o * tc
        return h_new, c_new, (x, h, c, i, f, g, o, tc)

    def step_backward(self, cache, dh, dc, grads):
        """Backprop one step; accumulates into `grads` and returns (dx, dh_prev, dc_prev)."""
        x, h, c, i, f, g, o, tc = cache
        do = dh * tc
        dc = dc + dh * o * (1.0 - tc * tc)
        di = dc * g
        df = dc * c
        dg = dc * i
        dc_prev = dc * f
        dz = np.concatenate([
            di * i * (1.0 - i),
            df * f * (1.0 - f),
            dg * (1.0 - g * g),
            do * o * (1.0 - o),
        ], axis=-1)
        grads[0] += dz.T @ x
        grads[1] += dz.T @ h
        db = dz.sum(axis=0)
        grads[2] += db
        if self.recurrent_bias is not None:
            grads[3] += db
        return dz @ self.input_weights, dz @ self.recurrent_weights, dc_prev

    def zero_grads(self) -> list[np.ndarray]:
        return [np.zeros_like(p) for p in self.params()]


def lstm_step(cell: LSTMCell, x_t, h, c):
    x_t = np.asarray(x_t, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    c = np.asarray(c, dtype=np.float64)
    if x_t.shape[-1] != cell.input_dim:
        raise ShapeError("lstm input length", cell.input_dim, x_t.shape[-1])
    if h.shape[-1] != cell.units or c.shape[-1] != cell.units:
        raise ShapeError("lstm state length", cell.units, (h.shape[-1], c.shape[-1]))
    h2, c2, _ = cell.step(x_t, h, c)
    return h2, c2


def count_parameters_lstm(cell: LSTMCell | None = None, *, input_dim: int | None = None,
                          units: int | None = None, bias_convention: str | None = None) -> int:
    if cell is not None:
        input_dim, units, bias_convention = cell.input_dim, cell.units, cell.bias_convention
    if not input_dim or not units or input_dim <= 0 or units <= 0:
        raise ValueError("lstm parameter count needs positive input_dim and units")
    n_bias = {"single": 1, "double": 2}[bias_convention]
    return 4 * (units * (input_dim + units) + n_bias * units)


def count_parameters(layers) -> int:
    return int(sum(p.size for layer in layers for p in layer.params()))


# ---------------------------------------------------------------- optimizers


@dataclass
class OptimizerConfig:
    kind: str = "sgd"
    learning_rate: float = 0.01
    rmsprop_decay: float = 0.9
    rmsprop_epsilon: float = 1e-8
    l2_gamma: float = 0.0
    l2_on_bias: bool = False
    clip: float | None = None

    def __post_init__(self):
        if self.kind not in ("sgd", "rmsprop"):
            raise ValueError(f"unknown optimizer {self.kind!r}")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if self.l2_gamma < 0:
            raise ValueError("l2_gamma must be >= 0")


@dataclass
class Optimizer:
    config: OptimizerConfig
    _sq: dict = field(default_factory=dict)

    def regularize(self, params, grads, kernel_mask):
        """Add the L2 term and clip, in place on `grads`."""
        cfg = self.config
        for p, g, is_kernel in zip(params, grads, kernel_mask):
            if cfg.l2_gamma and (is_kernel or cfg.l2_on_bias):
                g += cfg.l2_gamma * p
            if cfg.clip is not None:
                np.clip(g, -cfg.clip, cfg.clip, out=g)

    def apply(self, params, grads):
        cfg = self.config
        for idx, (p, g) in enumerate(zip(params, grads)):
            if cfg.kind == "sgd":
                p -= cfg.learning_rate * g
            else:
                sq = self._sq.get(idx)
                if sq is None:
                    sq = self._sq[idx] = np.zeros_like(p)
                sq *= cfg.rmsprop_decay
                sq += (1.0 - cfg.rmsprop_decay) * g * g
                p -= cfg.learning_rate * g / (np.sqrt(sq) + cfg.rmsprop_epsilon)


# ------------------------------------------------------------------ training


def forward(network: Sequence, x, training=False, rng=None):
    caches = []
    for layer in network:
        x, cache = layer.forward(x, training=training, rng=rng)
        caches.append(cache)
    return x, caches


def backward(network: Sequence, caches, dy):
    grads_rev = []
    for layer, cache in zip(reversed(network), reversed(caches)):
        dy, grads = layer.backward(cache, dy)
        grads_rev.append(grads)
    flat = [g for grads in reversed(grads_rev) for g in grads]
    return dy, flat


def loss_and_grad(kind: str, output: np.ndarray, targets: np.ndarray):
    """Loss value and its gradient w.r.t. the network output.

    For ``reinforce`` the output must be softmax probabilities and `targets`
    holds advantage-weighted one-hot actions; the gradient returned is
    w.r.t. the logits.
    """
    n = output.shape[0]
    diff = output - targets
    if kind == "mse":
        return float(np.mean(diff ** 2)), 2.0 * diff / diff.size
    if kind == "mae":
        return float(np.mean(np.abs(diff))), np.sign(diff) / diff.size
    if kind == "reinforce":
        logp = np.log(np.maximum(output, LOG_FLOOR))
        loss = -float(np.sum(targets * logp)) / n
        weight = targets.sum(axis=-1, keepdims=True)
        return loss, -(targets - weight * output) / n
    raise ValueError(f"unknown loss {kind!r}")


def all_params(network) -> list[np.ndarray]:
    return [p for layer in network for p in layer.params()]


def all_kernel_mask(network) -> list[bool]:
    return [m for layer in network for m in layer.kernel_mask()]


def train_step(network, batch, targets, loss: str, opt: Optimizer, rng: np.random.Generator,
               dropout_rate: float | None = None):
    """One gradient step on a feed-forward stack. Returns (network, loss).

    Parameters are updated in place. Dropout comes from any `Dropout`
    layers already in the stack; passing `dropout_rate` overrides their rate.
    """
    if dropout_rate is not None:
        if not 0.0 <= dropout_rate < 1.0:
            raise ValueError("dropout rate must be in [0, 1)")
        for layer in network:
            if isinstance(layer, Dropout):
                layer.rate = dropout_rate
    batch = np.atleast_2d(np.asarray(batch, dtype=np.float64))
    targets = np.atleast_2d(np.asarray(targets, dtype=np.float64))
    out, caches = forward(network, batch, training=True, rng=rng)
    if out.shape != targets.shape:
        raise ShapeError("targets", out.shape, targets.shape)
    value, dy = loss_and_grad(loss, out, targets)
    if not np.isfinite(value):
        raise NonFiniteLossError(f"{loss} loss became {value}")
    _, grads = backward(network, caches, dy)
    params = all_params(network)
    opt.regularize(params, grads, all_kernel_mask(network))
    opt.apply(params, grads)
    return network, value


def finite_diff_gradient(f: Callable[[np.ndarray], float], params, eps: float = 1e-5) -> np.ndarray:
    if eps <= 0:
        raise ValueError("eps must be positive")
    theta = np.array(params, dtype=np.float64).ravel()
    grad = np.zeros_like(theta)
    for i in range(theta.size):
        old = theta[i]
        theta[i] = old + eps
        up = f(theta.copy())
        theta[i] = old - eps
        down = f(theta.copy())
        theta[i] = old
        grad[i] = (up - down) / (2.0 * eps)
    return grad


def flatten(arrays) -> np.ndarray:
    if not arrays:
        return np.zeros(0)
    return np.concatenate([np.ravel(a) for a in arrays])


def unflatten_into(arrays, flat) -> None:
    """Copy a flat vector back into a list of arrays, in place."""
    flat = np.asarray(flat, dtype=np.float64)
    total = sum(a.size for a in arrays)
    if total != flat.size:
        raise ShapeError("flat parameter vector", total, flat.size)
    pos = 0
    for a in arrays:
        a[...] = flat[pos:pos + a.size].reshape(a.shape)
        pos += a.size
