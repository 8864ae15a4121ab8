"""
    Differentiable layers built on the autodiff engine.

    Linear maps, 1-D convolution, batch normalization, LSTM / BiLSTM,
    pointwise activations, softmax and cross-entropy. The heavy layers
    (convolution, batch norm, LSTM) are single Functions with hand-written
    backward passes so that a recurrent step does not cost a dozen graph
    nodes.

    ##########################################################################
    This code is part of the eeg_cdfusion package.

    This program is free software: you can redistribute it and/or modify
    it under the terms of the GNU Affero General Public License as published
    by the Free Software Foundation, either version 3 of the License, or
    (at your option) any later version.

    This program is distributed in the hope that it will be useful,
    but WITHOUT ANY WARRANTY; without even the implied warranty of
    MERCHANTABILITY or FITNESS FOR A PARTICULAR PURPOSE.  See the
    GNU Affero General Public License for more details.

    You should have received a copy of the GNU Affero General Public License
    along with this program.  If not, see <https://www.gnu.org/licenses/>.
    ##########################################################################
"""

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy import special

from eeg_cdfusion.autodiff import Function, Tensor, TensorLike, as_tensor, concat
from eeg_cdfusion.exceptions import ShapeError

# slope of the attention-logit LeakyReLU
LEAKY_SLOPE = 0.2
BN_EPSILON = 1e-5
BN_MOMENTUM = 0.1
TRAIN = "train"
EVAL = "eval"


def uniform_init(
    rng: np.random.Generator, shape: Tuple[int, ...], fan_in: int, dtype=np.float64
) -> np.ndarray:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights."""
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def linear(x: TensorLike, weight: TensorLike, bias: Optional[TensorLike] = None) -> Tensor:
    """y = x W + b over the last axis of x.

    Args:
        x (TensorLike): [..., n_in] input; a 1-D vector is allowed.
        weight (TensorLike): [n_in, n_out].
        bias (TensorLike, optional): [n_out].

    Returns:
        y (Tensor): [..., n_out].
    """
    x, weight = as_tensor(x), as_tensor(weight)
    if x.shape[-1] != weight.shape[0]:
        raise ShapeError(f"linear: input width {x.shape[-1]} != weight rows {weight.shape[0]}.")
    if x.ndim == 1:
        out = (x.reshape(1, -1) @ weight).reshape(-1)
    else:
        out = x @ weight
    return out if bias is None else out + bias


class ReLU(Function):
    def forward(self, x):
        self.mask = x > 0
        return np.where(self.mask, x, 0.0).astype(x.dtype)

    def backward(self, grad):
        return (grad * self.mask,)


class LeakyReLU(Function):
    def forward(self, x, slope=LEAKY_SLOPE):
        self.scale = np.where(x > 0, 1.0, slope).astype(x.dtype)
        return x * self.scale

    def backward(self, grad):
        return (grad * self.scale,)


class Sigmoid(Function):
    def forward(self, x):
        self.out = special.expit(x)
        return self.out

    def backward(self, grad):
        return (grad * self.out * (1.0 - self.out),)


class Tanh(Function):
    def forward(self, x):
        self.out = np.tanh(x)
        return self.out

    def backward(self, grad):
        return (grad * (1.0 - self.out * self.out),)


def relu(x: TensorLike) -> Tensor:
    return ReLU.apply(x)


def leaky_relu(x: TensorLike, slope: float = LEAKY_SLOPE) -> Tensor:
    return LeakyReLU.apply(x, slope=slope)


def sigmoid(x: TensorLike) -> Tensor:
    return Sigmoid.apply(x)


def tanh(x: TensorLike) -> Tensor:
    return Tanh.apply(x)


class Softmax(Function):
    def forward(self, x, axis=-1, mask=None):
        self.axis = axis
        if mask is not None:
            x = np.where(mask, x, -np.inf)
        self.out = special.softmax(x, axis=axis)
        return self.out

    def backward(self, grad):
        inner = np.sum(grad * self.out, axis=self.axis, keepdims=True)
        return (self.out * (grad - inner),)


def softmax(x: TensorLike, axis: int = -1) -> Tensor:
    """Softmax along axis, stabilized by subtracting the max."""
    return Softmax.apply(x, axis=axis)


def masked_softmax(x: TensorLike, mask: np.ndarray, axis: int = -1) -> Tensor:
    """Softmax over the entries where mask is True; the rest get exactly 0.

    Every slice along axis needs at least one True entry.
    """
    return Softmax.apply(x, axis=axis, mask=np.asarray(mask, dtype=bool))


class CrossEntropy(Function):
    def forward(self, logits, labels=None):
        labels = np.asarray(labels, dtype=np.int64)
        if logits.ndim != 2 or labels.shape != (logits.shape[0],):
            raise ShapeError(f"cross_entropy: logits {logits.shape} vs labels {labels.shape}.")
        log_probs = special.log_softmax(logits, axis=1)
        self.probs = np.exp(log_probs)
        self.labels = labels
        rows = np.arange(labels.size)
        return np.asarray(-np.mean(log_probs[rows, labels]), dtype=logits.dtype)

    def backward(self, grad):
        delta = self.probs.copy()
        delta[np.arange(self.labels.size), self.labels] -= 1.0
        return (delta * (grad / self.labels.size),)


def cross_entropy(logits: TensorLike, labels: np.ndarray) -> Tensor:
    """Mean over the batch of -log softmax(logits)[label]."""
    return CrossEntropy.apply(logits, labels=labels)


class Conv1d(Function):
    """Cross-correlation over time that mixes every input channel."""

    def forward(self, x, kernels, bias, stride=1):
        self.unbatched = x.ndim == 2
        if self.unbatched:
            x = x[None]
        n, c_in, length = x.shape
        c_out, k_in, width = kernels.shape
        if k_in != c_in:
            raise ShapeError(f"conv1d: kernels expect {k_in} channels, input has {c_in}.")
        if length < width:
            raise ShapeError(f"conv1d: input length {length} shorter than kernel {width}.")
        cols = np.lib.stride_tricks.sliding_window_view(x, width, axis=2)[:, :, ::stride, :]
        out_len = cols.shape[2]
        # [n, L', c_in * K]
        self.flat = cols.transpose(0, 2, 1, 3).reshape(n, out_len, c_in * width)
        self.kernels, self.stride, self.in_shape = kernels, stride, x.shape
        out = (self.flat @ kernels.reshape(c_out, -1).T + bias).transpose(0, 2, 1)
        return out[0] if self.unbatched else out

    def backward(self, grad):
        if self.unbatched:
            grad = grad[None]
        n, c_in, length = self.in_shape
        c_out, _, width = self.kernels.shape
        out_len = grad.shape[2]
        grad_t = grad.transpose(0, 2, 1)
        grad_kernels = (
            grad_t.reshape(-1, c_out).T @ self.flat.reshape(-1, c_in * width)
        ).reshape(self.kernels.shape)
        grad_bias = grad_t.sum(axis=(0, 1))
        grad_cols = (grad_t @ self.kernels.reshape(c_out, -1)).reshape(n, out_len, c_in, width)
        grad_x = np.zeros(self.in_shape, dtype=grad.dtype)
        span = self.stride * (out_len - 1) + 1
        for k in range(width):
            grad_x[:, :, k : k + span : self.stride] += grad_cols[:, :, :, k].transpose(0, 2, 1)
        return (grad_x[0] if self.unbatched else grad_x), grad_kernels, grad_bias


def conv1d(
    x: TensorLike,
    kernels: TensorLike,
    bias: Optional[TensorLike] = None,
    stride: int = 1,
) -> Tensor:
    """1-D convolution layer.

    Args:
        x (TensorLike): [C_in, L] or [N, C_in, L].
        kernels (TensorLike): [C_out, C_in, K].
        bias (TensorLike, optional): [C_out].
        stride (int): Step between output positions.

    Returns:
        y (Tensor): [(N,) C_out, floor((L - K) / stride) + 1].
    """
    kernels = as_tensor(kernels)
    if bias is None:
        bias = np.zeros(kernels.shape[0], dtype=kernels.dtype)
    return Conv1d.apply(x, kernels, bias, stride=stride)


@dataclass
class BatchNormState:
    """Running statistics of one batch-norm layer."""

    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = BN_MOMENTUM
    eps: float = BN_EPSILON

    @classmethod
    def fresh(cls, channels: int, dtype=np.float64) -> "BatchNormState":
        return cls(np.zeros(channels, dtype=dtype), np.ones(channels, dtype=dtype))


class BatchNorm(Function):
    def forward(self, x, gamma, beta, state=None, mode=TRAIN):
        if x.ndim != 3:
            raise ShapeError(f"batch_norm expects [N, C, L], got {x.shape}.")
        self.training = mode == TRAIN
        axes = (0, 2)
        if self.training:
            count = x.shape[0] * x.shape[2]
            if count <= 1:
                raise ShapeError("batch_norm in train mode needs more than one value per channel.")
            mean = x.mean(axis=axes)
            var = x.var(axis=axes)
            state.running_mean[...] = (1 - state.momentum) * state.running_mean + state.momentum * mean
            state.running_var[...] = (1 - state.momentum) * state.running_var + (
                state.momentum * var * count / (count - 1)
            )
            self.count = count
        else:
            mean, var = state.running_mean, state.running_var
        self.inv_std = (1.0 / np.sqrt(var + state.eps)).astype(x.dtype)[None, :, None]
        self.x_hat = (x - mean[None, :, None].astype(x.dtype)) * self.inv_std
        self.gamma = gamma
        return gamma[None, :, None] * self.x_hat + beta[None, :, None]

    def backward(self, grad):
        axes = (0, 2)
        grad_gamma = np.sum(grad * self.x_hat, axis=axes)
        grad_beta = np.sum(grad, axis=axes)
        grad_x_hat = grad * self.gamma[None, :, None]
        if self.training:
            grad_x = (self.inv_std / self.count) * (
                self.count * grad_x_hat
                - grad_x_hat.sum(axis=axes, keepdims=True)
                - self.x_hat * np.sum(grad_x_hat * self.x_hat, axis=axes, keepdims=True)
            )
        else:
            grad_x = grad_x_hat * self.inv_std
        return grad_x, grad_gamma, grad_beta


def batch_norm(
    x: TensorLike,
    gamma: TensorLike,
    beta: TensorLike,
    state: BatchNormState,
    mode: str = TRAIN,
) -> Tensor:
    """Per-channel normalization of [N, C, L] over (N, L).

    In train mode batch statistics are used and the running statistics in
    state are updated with momentum 0.1; in eval mode the running statistics
    are used.
    """
    if mode not in (TRAIN, EVAL):
        raise ValueError(f"mode {mode} not one of {(TRAIN, EVAL)}.")
    return BatchNorm.apply(x, gamma, beta, state=state, mode=mode)


class LSTM(Function):
    """Full-sequence LSTM with backpropagation through time.

    Gate layout along the 4 * d_h axis: input, forget, candidate, output.
    """

    def forward(self, x, w_x, w_h, bias, h0=None, c0=None, reverse=False):
        self.unbatched = x.ndim == 2
        if self.unbatched:
            x = x[None]
        n, steps, d_in = x.shape
        hidden = w_h.shape[0]
        if w_x.shape != (d_in, 4 * hidden) or w_h.shape != (hidden, 4 * hidden) or bias.shape != (4 * hidden,):
            raise ShapeError(
                f"lstm: weights {w_x.shape}, {w_h.shape}, {bias.shape} do not fit input width {d_in}."
            )
        h = np.zeros((n, hidden), dtype=x.dtype) if h0 is None else np.broadcast_to(h0, (n, hidden)).astype(x.dtype)
        c = np.zeros((n, hidden), dtype=x.dtype) if c0 is None else np.broadcast_to(c0, (n, hidden)).astype(x.dtype)

        out = np.empty((n, steps, hidden), dtype=x.dtype)
        self.cache = []
        for t in (range(steps - 1, -1, -1) if reverse else range(steps)):
            gates = x[:, t] @ w_x + h @ w_h + bias
            i = special.expit(gates[:, :hidden])
            f = special.expit(gates[:, hidden : 2 * hidden])
            g = np.tanh(gates[:, 2 * hidden : 3 * hidden])
            o = special.expit(gates[:, 3 * hidden :])
            c_new = f * c + i * g
            tanh_c = np.tanh(c_new)
            self.cache.append((t, h, c, i, f, g, o, tanh_c))
            h, c = o * tanh_c, c_new
            out[:, t] = h
        self.x, self.w_x, self.w_h = x, w_x, w_h
        return out[0] if self.unbatched else out

    def backward(self, grad):
        if self.unbatched:
            grad = grad[None]
        n, _, _ = self.x.shape
        hidden = self.w_h.shape[0]
        grad_x = np.zeros_like(self.x)
        grad_w_x = np.zeros_like(self.w_x)
        grad_w_h = np.zeros_like(self.w_h)
        grad_bias = np.zeros(4 * hidden, dtype=self.w_x.dtype)
        dh_next = np.zeros((n, hidden), dtype=grad.dtype)
        dc_next = np.zeros((n, hidden), dtype=grad.dtype)
        for t, h_prev, c_prev, i, f, g, o, tanh_c in reversed(self.cache):
            dh = grad[:, t] + dh_next
            dc = dh * o * (1.0 - tanh_c * tanh_c) + dc_next
            d_gates = np.concatenate(
                [
                    dc * g * i * (1.0 - i),
                    dc * c_prev * f * (1.0 - f),
                    dc * i * (1.0 - g * g),
                    dh * tanh_c * o * (1.0 - o),
                ],
                axis=1,
            )
            dc_next = dc * f
            grad_w_x += self.x[:, t].T @ d_gates
            grad_w_h += h_prev.T @ d_gates
            grad_bias += d_gates.sum(axis=0)
            grad_x[:, t] = d_gates @ self.w_x.T
            dh_next = d_gates @ self.w_h.T
        return (grad_x[0] if self.unbatched else grad_x), grad_w_x, grad_w_h, grad_bias


@dataclass
class LstmWeights:
    """Weights of one LSTM direction: w_x [d_in, 4h], w_h [h, 4h], bias [4h]."""

    w_x: Tensor
    w_h: Tensor
    bias: Tensor


def init_lstm_weights(rng: np.random.Generator, d_in: int, hidden: int, dtype=np.float64) -> Tuple[np.ndarray, ...]:
    """Uniform weights with the forget-gate bias set to +1."""
    w_x = uniform_init(rng, (d_in, 4 * hidden), d_in, dtype)
    w_h = uniform_init(rng, (hidden, 4 * hidden), hidden, dtype)
    bias = uniform_init(rng, (4 * hidden,), hidden, dtype)
    bias[hidden : 2 * hidden] = 1.0
    return w_x, w_h, bias


def lstm(
    x: TensorLike,
    weights: LstmWeights,
    h0: Optional[np.ndarray] = None,
    c0: Optional[np.ndarray] = None,
    reverse: bool = False,
) -> Tensor:
    """Run an LSTM over [T, d_in] or [N, T, d_in]; returns every hidden state.

    With reverse=True the sequence is consumed from the last step and the
    outputs are written back in the original time order.
    """
    return LSTM.apply(x, weights.w_x, weights.w_h, weights.bias, h0=h0, c0=c0, reverse=reverse)


def bilstm(x: TensorLike, forward_weights: LstmWeights, backward_weights: LstmWeights) -> Tensor:
    """Concatenation of a forward and a reversed LSTM pass: [..., T, 2 d_h]."""
    return concat(
        [lstm(x, forward_weights), lstm(x, backward_weights, reverse=True)], axis=-1
    )
