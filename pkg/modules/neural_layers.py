"""
Differentiable building blocks in float64 numpy.

Every layer is stateless between calls: forward returns (output, cache) and
backward takes the cache back, accumulating into Parameter.grad. That keeps a
trained model safe to share across inference threads.
"""

from typing import Dict, Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from modules.text_processor import PAD_INDEX


class Parameter:
    def __init__(self, value: np.ndarray, frozen: bool = False):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)
        self.frozen = frozen

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self):
        self.grad.fill(0.0)


def glorot(rng, fan_in, fan_out, shape=None):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape or (fan_in, fan_out))


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def softmax(logits, axis=-1):
    shifted = logits - logits.max(axis=axis, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=axis, keepdims=True)


class Layer:
    def parameters(self) -> Dict[str, Parameter]:
        return {}


class Embedding(Layer):
    def __init__(self, matrix: np.ndarray, frozen: bool = True):
        self.weight = Parameter(np.array(matrix, dtype=np.float64), frozen=frozen)
        self.weight.value[PAD_INDEX] = 0.0

    def parameters(self):
        return {"weight": self.weight}

    def forward(self, indices):
        return self.weight.value[indices], indices

    def backward(self, dout, cache):
        if self.weight.frozen:
            return
        np.add.at(self.weight.grad, cache, dout)
        self.weight.grad[PAD_INDEX] = 0.0


class ConvMaxPool(Layer):
    """1-D convolutions of several widths, each followed by masked max-over-time pooling"""

    def __init__(self, input_dim: int, widths: Sequence[int], n_maps: int, rng,
                 activation: str = "relu"):
        self.widths = tuple(widths)
        self.n_maps = n_maps
        self.activation = activation
        self.kernels = {}
        self.biases = {}
        for width in self.widths:
            fan_in = width * input_dim
            self.kernels[width] = Parameter(glorot(rng, fan_in, n_maps, (n_maps, width, input_dim)))
            self.biases[width] = Parameter(np.zeros(n_maps))

    @property
    def output_dim(self):
        return self.n_maps * len(self.widths)

    def parameters(self):
        params = {}
        for width in self.widths:
            params[f"kernel_{width}"] = self.kernels[width]
            params[f"bias_{width}"] = self.biases[width]
        return params

    def _activate(self, z):
        if self.activation == "tanh":
            return np.tanh(z)
        return np.maximum(z, 0.0)

    def _activation_grad(self, z, a):
        if self.activation == "tanh":
            return 1.0 - a * a
        return (z > 0).astype(np.float64)

    def forward(self, x, mask):
        batch, length, dim = x.shape
        lengths = mask.sum(axis=1)
        padded_length = max(length, max(self.widths))
        xp = np.zeros((batch, padded_length, dim))
        xp[:, :length] = x

        pooled, caches = [], []
        for width in self.widths:
            windows = sliding_window_view(xp, width, axis=1).transpose(0, 1, 3, 2)   # B x n x w x d
            n_windows = windows.shape[1]
            z = np.einsum("bnwd,fwd->bnf", windows, self.kernels[width].value) + self.biases[width].value
            a = self._activate(z)
            # window i is valid when it lies inside the tokens; short docs keep window 0
            valid = np.arange(n_windows)[None, :] < np.maximum(1, lengths - width + 1)[:, None]
            masked = np.where(valid[:, :, None], a, -np.inf)
            argmax = masked.argmax(axis=1)                                           # B x f
            pooled.append(np.take_along_axis(a, argmax[:, None, :], axis=1)[:, 0, :])
            caches.append((windows, z, a, argmax))
        return np.concatenate(pooled, axis=1), (xp.shape, length, caches)

    def backward(self, dout, cache):
        xp_shape, length, caches = cache
        dxp = np.zeros(xp_shape)
        for index, (width, (windows, z, a, argmax)) in enumerate(zip(self.widths, caches)):
            dpool = dout[:, index * self.n_maps:(index + 1) * self.n_maps]
            da = np.zeros_like(a)
            np.put_along_axis(da, argmax[:, None, :], dpool[:, None, :], axis=1)
            dz = da * self._activation_grad(z, a)
            self.kernels[width].grad += np.einsum("bnf,bnwd->fwd", dz, windows)
            self.biases[width].grad += dz.sum(axis=(0, 1))
            dwindows = np.einsum("bnf,fwd->bnwd", dz, self.kernels[width].value)
            n_windows = windows.shape[1]
            for offset in range(width):
                dxp[:, offset:offset + n_windows] += dwindows[:, :, offset, :]
        return dxp[:, :length]


class Dropout(Layer):
    def __init__(self, rate: float):
        self.rate = rate

    def forward(self, x, train: bool = False, rng=None):
        if not train or self.rate == 0.0:
            return x, None
        keep = (rng.random(x.shape) >= self.rate) / (1.0 - self.rate)
        return x * keep, keep

    def backward(self, dout, cache):
        return dout if cache is None else dout * cache


class Linear(Layer):
    def __init__(self, input_dim: int, output_dim: int, rng, zero: bool = False):
        weight = np.zeros((input_dim, output_dim)) if zero else glorot(rng, input_dim, output_dim)
        self.weight = Parameter(weight)
        self.bias = Parameter(np.zeros(output_dim))

    def parameters(self):
        return {"weight": self.weight, "bias": self.bias}

    def forward(self, x):
        return x @ self.weight.value + self.bias.value, x

    def backward(self, dout, cache):
        self.weight.grad += cache.T @ dout
        self.bias.grad += dout.sum(axis=0)
        return dout @ self.weight.value.T


class LSTM(Layer):
    """
    Single-direction LSTM over a masked batch.

    Gate columns are ordered [input, forget, output, candidate]. At masked
    steps the previous state is carried over unchanged, so trailing padding
    never alters the final state and a reversed pass starts fresh at the last
    real token.
    """

    def __init__(self, input_dim: int, hidden: int, rng, reverse: bool = False):
        self.hidden = hidden
        self.reverse = reverse
        self.W = Parameter(glorot(rng, input_dim, 4 * hidden))
        self.U = Parameter(glorot(rng, hidden, 4 * hidden))
        bias = np.zeros(4 * hidden)
        bias[hidden:2 * hidden] = 1.0
        self.b = Parameter(bias)

    def parameters(self):
        return {"W": self.W, "U": self.U, "b": self.b}

    def _steps(self, length):
        return range(length - 1, -1, -1) if self.reverse else range(length)

    def forward(self, x, mask):
        batch, length, _ = x.shape
        u = self.hidden
        h = np.zeros((batch, u))
        c = np.zeros((batch, u))
        outputs = np.zeros((batch, length, u))
        steps = []
        for t in self._steps(length):
            m = mask[:, t, None].astype(np.float64)
            z = x[:, t] @ self.W.value + h @ self.U.value + self.b.value
            i = sigmoid(z[:, :u])
            f = sigmoid(z[:, u:2 * u])
            o = sigmoid(z[:, 2 * u:3 * u])
            g = np.tanh(z[:, 3 * u:])
            c_new = f * c + i * g
            tanh_c = np.tanh(c_new)
            h_new = o * tanh_c
            steps.append((t, m, h, c, i, f, o, g, tanh_c))
            c = m * c_new + (1.0 - m) * c
            h = m * h_new + (1.0 - m) * h
            outputs[:, t] = h
        return outputs, h, (x, steps)

    def backward(self, doutputs, dfinal, cache):
        x, steps = cache
        u = self.hidden
        dx = np.zeros_like(x)
        dh_next = dfinal.copy()
        dc_next = np.zeros_like(dfinal)
        for t, m, h_prev, c_prev, i, f, o, g, tanh_c in reversed(steps):
            dh = doutputs[:, t] + dh_next
            dh_new = m * dh
            dc_new = m * dc_next + dh_new * o * (1.0 - tanh_c * tanh_c)

            dz = np.empty((x.shape[0], 4 * u))
            dz[:, :u] = dc_new * g * i * (1.0 - i)
            dz[:, u:2 * u] = dc_new * c_prev * f * (1.0 - f)
            dz[:, 2 * u:3 * u] = dh_new * tanh_c * o * (1.0 - o)
            dz[:, 3 * u:] = dc_new * i * (1.0 - g * g)

            self.W.grad += x[:, t].T @ dz
            self.U.grad += h_prev.T @ dz
            self.b.grad += dz.sum(axis=0)
            dx[:, t] = dz @ self.W.value.T

            dh_next = (1.0 - m) * dh + dz @ self.U.value.T
            dc_next = (1.0 - m) * dc_next + dc_new * f
        return dx


class BiLSTM(Layer):
    def __init__(self, input_dim: int, hidden: int, rng):
        self.forward_cell = LSTM(input_dim, hidden, rng)
        self.backward_cell = LSTM(input_dim, hidden, rng, reverse=True)
        self.hidden = hidden

    @property
    def output_dim(self):
        return 2 * self.hidden

    def parameters(self):
        params = {}
        for prefix, cell in (("fwd", self.forward_cell), ("bwd", self.backward_cell)):
            for name, param in cell.parameters().items():
                params[f"{prefix}_{name}"] = param
        return params

    def forward(self, x, mask):
        out_f, final_f, cache_f = self.forward_cell.forward(x, mask)
        out_b, final_b, cache_b = self.backward_cell.forward(x, mask)
        outputs = np.concatenate([out_f, out_b], axis=2)
        final = np.concatenate([final_f, final_b], axis=1)
        return outputs, final, (cache_f, cache_b)

    def backward(self, doutputs, dfinal, cache):
        u = self.hidden
        cache_f, cache_b = cache
        if doutputs is None:
            doutputs = np.zeros(cache_f[0].shape[:2] + (2 * u,))
        if dfinal is None:
            dfinal = np.zeros((doutputs.shape[0], 2 * u))
        dx = self.forward_cell.backward(doutputs[:, :, :u], dfinal[:, :u], cache_f)
        dx += self.backward_cell.backward(doutputs[:, :, u:], dfinal[:, u:], cache_b)
        return dx


class StructuredAttention(Layer):
    """A = softmax(W2 tanh(W1 H^T)) over time, M = A H"""

    def __init__(self, input_dim: int, attention_hidden: int, rows: int, rng):
        self.W1 = Parameter(glorot(rng, input_dim, attention_hidden, (attention_hidden, input_dim)))
        self.W2 = Parameter(glorot(rng, attention_hidden, rows, (rows, attention_hidden)))
        self.rows = rows

    def parameters(self):
        return {"W1": self.W1, "W2": self.W2}

    def forward(self, H, mask):
        S = np.tanh(H @ self.W1.value.T)                        # B x T x d_a
        scores = (S @ self.W2.value.T).transpose(0, 2, 1)       # B x r x T
        scores = np.where(mask[:, None, :], scores, -np.inf)
        A = softmax(scores, axis=2)
        M = A @ H                                               # B x r x 2u
        return M, A, (H, S, A)

    def backward(self, dM, dA_extra, cache):
        H, S, A = cache
        dA = dM @ H.transpose(0, 2, 1)
        if dA_extra is not None:
            dA = dA + dA_extra
        dH = A.transpose(0, 2, 1) @ dM
        dscores = A * (dA - (dA * A).sum(axis=2, keepdims=True))
        dscores_t = dscores.transpose(0, 2, 1)                  # B x T x r
        self.W2.grad += np.einsum("btr,bta->ra", dscores_t, S)
        dpre = (dscores_t @ self.W2.value) * (1.0 - S * S)
        self.W1.grad += np.einsum("bta,bth->ah", dpre, H)
        dH += dpre @ self.W1.value
        return dH


def attention_penalty(A):
    """Mean over the batch of ||A A^T - I||_F^2 and its gradient w.r.t. A"""
    rows = A.shape[1]
    G = A @ A.transpose(0, 2, 1) - np.eye(rows)[None]
    value = float((G * G).sum(axis=(1, 2)).mean())
    grad = 4.0 * (G @ A) / A.shape[0]
    return value, grad


def cross_entropy(probs, targets):
    """Mean cross-entropy and its gradient w.r.t. the logits; targets are class ids or distributions"""
    batch = probs.shape[0]
    if targets.ndim == 1:
        target_dist = np.zeros_like(probs)
        target_dist[np.arange(batch), targets.astype(np.int64)] = 1.0
    else:
        target_dist = targets
    with np.errstate(divide="ignore"):
        log_probs = np.log(probs)
    loss = -float(np.where(target_dist > 0, target_dist * log_probs, 0.0).sum() / batch)
    return loss, (probs - target_dist) / batch


def mean_squared_error(scores, targets):
    diff = scores - targets
    return float(np.mean(diff * diff)), 2.0 * diff / scores.shape[0]


def gather_parameters(prefix: str, layer: Optional[Layer]) -> Dict[str, Parameter]:
    if layer is None:
        return {}
    return {f"{prefix}.{name}": param for name, param in layer.parameters().items()}
