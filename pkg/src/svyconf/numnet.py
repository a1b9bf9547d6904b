"""Small deterministic feed-forward ReLU networks trained with survey weights.

Everything is plain numpy in float64. A network is a stack of affine layers
with ReLU on every hidden layer and the identity on the output layer, so
``forward`` returns logits for classifiers and raw predictions for
regression / quantile heads.

Survey weights enter every loss as per-row multipliers. Losses are sums,
not means: the minimiser of a weighted sum is invariant to rescaling the
weights, and keeping the sum makes weight homogeneity exact.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import InvalidInputError, TrainingDivergedError

logger = logging.getLogger(__name__)

LOSS_KINDS = ("cross_entropy", "pinball", "mse")


def _frozen(a):
    a = np.array(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class NetworkParams:
    """Weights ``(out, in)`` and biases ``(out,)`` for each layer, input to output."""

    weights: tuple
    biases: tuple

    def __post_init__(self):
        ws = tuple(_frozen(w) for w in self.weights)
        bs = tuple(_frozen(b) for b in self.biases)
        if not ws or len(ws) != len(bs):
            raise InvalidInputError("need one bias vector per weight matrix")
        for i, (w, b) in enumerate(zip(ws, bs)):
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise InvalidInputError(f"layer {i}: bad shapes {w.shape}, {b.shape}")
            if i and w.shape[1] != ws[i - 1].shape[0]:
                raise InvalidInputError(
                    f"layer {i} expects {w.shape[1]} inputs, previous layer gives {ws[i - 1].shape[0]}"
                )
        object.__setattr__(self, "weights", ws)
        object.__setattr__(self, "biases", bs)

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def output_dim(self) -> int:
        return self.weights[-1].shape[0]

    @property
    def depth(self) -> int:
        return len(self.weights)

    @property
    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def flat(self) -> np.ndarray:
        """Parameters as one vector: layer by layer, weight matrix (row-major) then bias."""
        parts = []
        for w, b in zip(self.weights, self.biases):
            parts.append(w.ravel())
            parts.append(b)
        return np.concatenate(parts)

    def with_flat(self, theta) -> "NetworkParams":
        theta = np.asarray(theta, dtype=np.float64)
        if theta.shape != (self.n_params,):
            raise InvalidInputError(f"expected {self.n_params} parameters, got {theta.shape}")
        ws, bs, pos = [], [], 0
        for w, b in zip(self.weights, self.biases):
            ws.append(theta[pos:pos + w.size].reshape(w.shape))
            pos += w.size
            bs.append(theta[pos:pos + b.size])
            pos += b.size
        return NetworkParams(tuple(ws), tuple(bs))

    def all_finite(self) -> bool:
        return all(np.isfinite(w).all() and np.isfinite(b).all()
                   for w, b in zip(self.weights, self.biases))

    def to_dict(self) -> dict:
        return {
            "weights": [w.tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }

    @classmethod
    def from_dict(cls, d) -> "NetworkParams":
        return cls(tuple(np.array(w, dtype=np.float64) for w in d["weights"]),
                   tuple(np.array(b, dtype=np.float64) for b in d["biases"]))

    def __eq__(self, other):
        if not isinstance(other, NetworkParams) or self.depth != other.depth:
            return NotImplemented
        return all(np.array_equal(a, b) for a, b in zip(self.weights, other.weights)) and \
            all(np.array_equal(a, b) for a, b in zip(self.biases, other.biases))

    __hash__ = None


@dataclass(frozen=True)
class TrainConfig:
    hidden_widths: tuple = (16,)
    loss_kind: str = "cross_entropy"
    quantile_alpha: float | None = None
    n_classes: int = 2
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    epochs: int = 100
    batch_size: int | str = "full"
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden_widths", tuple(int(h) for h in self.hidden_widths))
        if any(h <= 0 for h in self.hidden_widths):
            raise InvalidInputError("hidden widths must be positive")
        if self.loss_kind not in LOSS_KINDS:
            raise InvalidInputError(f"loss_kind must be one of {LOSS_KINDS}, got {self.loss_kind!r}")
        if self.loss_kind == "pinball":
            if self.quantile_alpha is None or not 0 < self.quantile_alpha < 1:
                raise InvalidInputError("pinball loss needs 0 < quantile_alpha < 1")
        if self.loss_kind == "cross_entropy" and self.n_classes < 2:
            raise InvalidInputError("cross-entropy needs at least two classes")
        if not self.learning_rate > 0:
            raise InvalidInputError("learning_rate must be positive")
        if not (0 < self.adam_beta1 < 1 and 0 < self.adam_beta2 < 1):
            raise InvalidInputError("Adam betas must lie in (0, 1)")
        if not self.adam_epsilon > 0:
            raise InvalidInputError("adam_epsilon must be positive")
        if int(self.epochs) <= 0:
            raise InvalidInputError("epochs must be positive")
        if self.batch_size != "full" and int(self.batch_size) <= 0:
            raise InvalidInputError("batch_size must be positive or 'full'")
        if not 0 <= int(self.seed) < 2**64:
            raise InvalidInputError("seed must be a 64-bit unsigned integer")

    @property
    def output_dim(self) -> int:
        return self.n_classes if self.loss_kind == "cross_entropy" else 1

    def replace(self, **changes) -> "TrainConfig":
        from dataclasses import replace
        return replace(self, **changes)


@dataclass(frozen=True)
class LossValue:
    value: float
    gradient: np.ndarray = field(repr=False)


# ---------------------------------------------------------------------------
# elementwise pieces


def relu(z):
    return np.maximum(np.asarray(z, dtype=np.float64), 0.0)


def softmax(z):
    """Row-wise softmax, max-shifted so large logits cannot overflow."""
    z = np.asarray(z, dtype=np.float64)
    if z.shape[-1] < 2:
        raise InvalidInputError("softmax needs at least two entries")
    if not np.isfinite(z).all():
        raise InvalidInputError("softmax input must be finite")
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(z):
    z = np.asarray(z, dtype=np.float64)
    shifted = z - z.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def pinball_loss(t, alpha):
    """Quantile (check) loss ``(1-alpha)*max(-t, 0) + alpha*max(t, 0)``."""
    if not 0 < alpha < 1:
        raise InvalidInputError(f"alpha must lie in (0, 1), got {alpha}")
    t = np.asarray(t, dtype=np.float64)
    out = (1 - alpha) * np.maximum(-t, 0.0) + alpha * np.maximum(t, 0.0)
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# forward / backward


def init_params(layer_sizes: Sequence[int], rng) -> NetworkParams:
    """He-normal hidden layers, LeCun-normal output layer, zero biases."""
    ws, bs = [], []
    n_layers = len(layer_sizes) - 1
    for i, (fan_in, fan_out) in enumerate(zip(layer_sizes[:-1], layer_sizes[1:])):
        scale = np.sqrt((1.0 if i == n_layers - 1 else 2.0) / fan_in)
        ws.append(rng.standard_normal((fan_out, fan_in)) * scale)
        bs.append(np.zeros(fan_out))
    return NetworkParams(tuple(ws), tuple(bs))


def _check_input(params, X):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim not in (1, 2) or X.shape[-1] != params.input_dim:
        raise InvalidInputError(
            f"input has shape {X.shape}, network expects {params.input_dim} features"
        )
    return X


def forward(params: NetworkParams, x) -> np.ndarray:
    """Output-layer values for one input ``(p,)`` or a batch ``(n, p)``."""
    h = _check_input(params, x)
    last = params.depth - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = h @ w.T + b
        if i < last:
            h = np.maximum(h, 0.0)
    return h


def predict_proba(params: NetworkParams, X) -> np.ndarray:
    return softmax(forward(params, X))


def _unflatten(theta, shapes):
    """Views into ``theta`` shaped like the layers described by ``shapes``."""
    ws, bs, pos = [], [], 0
    for out_dim, in_dim in shapes:
        ws.append(theta[pos:pos + out_dim * in_dim].reshape(out_dim, in_dim))
        pos += out_dim * in_dim
        bs.append(theta[pos:pos + out_dim])
        pos += out_dim
    return ws, bs


def _forward_cached(ws, bs, X):
    acts = [X]
    last = len(ws) - 1
    h = X
    for i, (w, b) in enumerate(zip(ws, bs)):
        z = h @ w.T + b
        h = np.maximum(z, 0.0) if i < last else z
        acts.append(h)
    return acts


def _backward(ws, acts, dout):
    """Flat gradient given d(loss)/d(output) for every row."""
    grads = [None] * (2 * len(ws))
    delta = dout
    for i in range(len(ws) - 1, -1, -1):
        grads[2 * i] = (delta.T @ acts[i]).ravel()
        grads[2 * i + 1] = delta.sum(axis=0)
        if i:
            delta = (delta @ ws[i]) * (acts[i] > 0)
    return np.concatenate(grads)


def _as_batch(params, X, y, w):
    X = _check_input(params, X)
    if X.ndim == 1:
        X = X[None, :]
    y = np.asarray(y)
    w = np.asarray(w, dtype=np.float64)
    if y.shape[0] != X.shape[0] or w.shape != (X.shape[0],):
        raise InvalidInputError("X, y and weights must have the same number of rows")
    if not (np.isfinite(w).all() and (w > 0).all()):
        raise InvalidInputError("survey weights must be finite and strictly positive")
    return X, y, w


def _check_labels(y, K):
    labels = np.asarray(y).astype(np.int64)
    if not np.array_equal(labels, y) or labels.min() < 0 or labels.max() >= K:
        raise InvalidInputError(f"labels must be integers in 0..{K - 1}")
    return labels


def _loss_grad(ws, bs, X, y, w, kind, alpha=None):
    acts = _forward_cached(ws, bs, X)
    out = acts[-1]
    if kind == "cross_entropy":
        labels = y
        logp = log_softmax(out)
        rows = np.arange(len(labels))
        value = -float(np.dot(w, logp[rows, labels]))
        dout = np.exp(logp)
        dout[rows, labels] -= 1.0
        dout *= w[:, None]
    elif kind == "mse":
        r = out[:, 0] - y
        value = float(np.dot(w, r * r))
        dout = (2.0 * w * r)[:, None]
    else:
        t = y - out[:, 0]
        value = float(np.dot(w, pinball_loss(t, alpha)))
        # d rho/dt is alpha above the kink and alpha - 1 below; dt/dq = -1
        dout = (-w * np.where(t > 0, alpha, alpha - 1.0))[:, None]
    return value, _backward(ws, acts, dout)


def _prepared(params, X, y, w, kind):
    X, y, w = _as_batch(params, X, y, w)
    if kind == "cross_entropy":
        y = _check_labels(y, params.output_dim)
    else:
        y = y.astype(np.float64)
    return X, y, w


def weighted_cross_entropy(params, X, y, w) -> LossValue:
    """``-sum_i w_i log f_{y_i}(x_i)`` with class labels ``0..K-1``."""
    X, y, w = _prepared(params, X, y, w, "cross_entropy")
    return LossValue(*_loss_grad(params.weights, params.biases, X, y, w, "cross_entropy"))


def weighted_mse(params, X, y, w) -> LossValue:
    """``sum_i w_i (y_i - yhat_i)^2`` for a single-output network."""
    X, y, w = _prepared(params, X, y, w, "mse")
    return LossValue(*_loss_grad(params.weights, params.biases, X, y, w, "mse"))


def weighted_pinball(params, X, y, w, alpha) -> LossValue:
    """``sum_i w_i rho_alpha(y_i - q(x_i))``; at a kink the slope below it is used."""
    if not 0 < alpha < 1:
        raise InvalidInputError(f"alpha must lie in (0, 1), got {alpha}")
    X, y, w = _prepared(params, X, y, w, "pinball")
    return LossValue(*_loss_grad(params.weights, params.biases, X, y, w, "pinball", alpha))


def loss(params, X, y, w, config: TrainConfig) -> LossValue:
    if config.loss_kind == "cross_entropy":
        return weighted_cross_entropy(params, X, y, w)
    if config.loss_kind == "mse":
        return weighted_mse(params, X, y, w)
    return weighted_pinball(params, X, y, w, config.quantile_alpha)


def _loss_only(ws, bs, X, y, w, kind, alpha=None):
    h = X
    last = len(ws) - 1
    for i, (wt, b) in enumerate(zip(ws, bs)):
        h = h @ wt.T + b
        if i < last:
            h = np.maximum(h, 0.0)
    if kind == "cross_entropy":
        return -float(np.dot(w, log_softmax(h)[np.arange(len(y)), y]))
    r = y - h[:, 0]
    if kind == "mse":
        return float(np.dot(w, r * r))
    return float(np.dot(w, pinball_loss(r, alpha)))


def loss_value(params, X, y, w, config: TrainConfig) -> float:
    """Loss without the backward pass."""
    X, y, w = _prepared(params, X, y, w, config.loss_kind)
    return _loss_only(params.weights, params.biases, X, y, w, config.loss_kind, config.quantile_alpha)


# ---------------------------------------------------------------------------
# training


def train_with_trace(X, y, w, config: TrainConfig):
    """Adam on the configured weighted loss.

    Returns ``(params, trace)`` where ``trace[e]`` is the full-data loss after
    epoch ``e``. Minibatch gradients are rescaled by total weight over batch
    weight so every batch estimates the full weighted objective.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise InvalidInputError("training data must be a non-empty 2-D array")
    rng = np.random.default_rng(int(config.seed))
    sizes = [X.shape[1], *config.hidden_widths, config.output_dim]
    params = init_params(sizes, rng)
    X, y, w = _prepared(params, X, y, w, config.loss_kind)
    n = X.shape[0]
    kind, alpha = config.loss_kind, config.quantile_alpha

    shapes = [wt.shape for wt in params.weights]
    theta = params.flat().copy()
    m = np.zeros_like(theta)
    v = np.zeros_like(theta)
    b1, b2, lr, eps = config.adam_beta1, config.adam_beta2, config.learning_rate, config.adam_epsilon

    full = config.batch_size == "full" or int(config.batch_size) >= n
    batch = n if full else int(config.batch_size)
    total_w = w.sum()
    step = 0
    trace = []
    for epoch in range(int(config.epochs)):
        order = None if full else rng.permutation(n)
        for start in range(0, n, batch):
            ws, bs = _unflatten(theta, shapes)
            if full:
                g = _loss_grad(ws, bs, X, y, w, kind, alpha)[1]
            else:
                idx = order[start:start + batch]
                wb = w[idx]
                g = _loss_grad(ws, bs, X[idx], y[idx], wb, kind, alpha)[1] * (total_w / wb.sum())
            step += 1
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * g * g
            mhat = m / (1 - b1 ** step)
            vhat = v / (1 - b2 ** step)
            theta = theta - lr * mhat / (np.sqrt(vhat) + eps)
        if not np.isfinite(theta).all():
            raise TrainingDivergedError(epoch)
        ws, bs = _unflatten(theta, shapes)
        value = _loss_only(ws, bs, X, y, w, kind, alpha)
        if not np.isfinite(value):
            raise TrainingDivergedError(epoch)
        trace.append(value)
    return params.with_flat(theta), trace


def train(X, y, w, config: TrainConfig) -> NetworkParams:
    return train_with_trace(X, y, w, config)[0]


def numerical_gradient(fn, theta, step=1e-6):
    """Central finite differences of scalar ``fn`` at ``theta``."""
    theta = np.asarray(theta, dtype=np.float64)
    g = np.empty_like(theta)
    for i in range(theta.size):
        e = np.zeros_like(theta)
        e[i] = step
        g[i] = (fn(theta + e) - fn(theta - e)) / (2 * step)
    return g
