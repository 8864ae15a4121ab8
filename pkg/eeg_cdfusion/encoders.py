"""
    Time-frequency (TDEE) and spatial (SDEE) encoder blocks.

    TDEE: three 1-D convolutions over the raw window (ReLU after the first
    two, batch norm after the last), then a BiLSTM followed by an LSTM. It
    returns one 64-wide feature per retained time step, X_beta.

    SDEE: a linear node embedding of the per-channel DE vectors, a KNN graph
    over the same vectors, then a stack of GCN or GAT layers. It returns one
    64-wide feature per channel, X_alpha.

    Every node gets a self-loop before graph encoding, so N_i always
    contains i.

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
from typing import Dict, Mapping, Optional, Tuple, Union

import numpy as np

from eeg_cdfusion import nn_core
from eeg_cdfusion.autodiff import Tensor, TensorLike, as_tensor
from eeg_cdfusion.exceptions import ConfigurationError, ShapeError
from eeg_cdfusion.graph_builder import ChannelGraph, batch_adjacency

GCN = "gcn"
GAT = "gat"
VALID_ENCODER_KINDS = (GCN, GAT)

DEAP_CHANNELS = 32
N_BANDS = 5

Adjacency = Union[ChannelGraph, np.ndarray]


@dataclass(frozen=True)
class TdeeConfig:
    """Layer sizes of the TDEE block.

    Attributes:
        in_channels (int): EEG channels of the raw window.
        conv_channels (Tuple[int, ...]): Output channels of each convolution.
        kernel_sizes (Tuple[int, ...]): Kernel width of each convolution.
        strides (Tuple[int, ...]): Stride of each convolution.
        bilstm_hidden (int): Hidden size per direction of the BiLSTM.
        lstm_hidden (int): Hidden size of the final LSTM, the block's output width.
    """

    in_channels: int = DEAP_CHANNELS
    conv_channels: Tuple[int, ...] = (64, 64, 64)
    kernel_sizes: Tuple[int, ...] = (7, 5, 3)
    strides: Tuple[int, ...] = (2, 2, 2)
    bilstm_hidden: int = 32
    lstm_hidden: int = 64

    def __post_init__(self):
        if not len(self.conv_channels) == len(self.kernel_sizes) == len(self.strides) >= 1:
            raise ConfigurationError("conv_channels, kernel_sizes and strides need equal, non-zero lengths.")
        if min(self.kernel_sizes) < 1 or min(self.strides) < 1:
            raise ConfigurationError("Kernel sizes and strides must be >= 1.")

    @property
    def d_model(self) -> int:
        return self.lstm_hidden

    def output_length(self, width: int) -> int:
        """T' after the convolution stack: L' = floor((L - K) / s) + 1 per layer."""
        length = width
        for kernel, stride in zip(self.kernel_sizes, self.strides):
            if length < kernel:
                raise ShapeError(f"Window of {width} samples is too short for the convolution stack.")
            length = (length - kernel) // stride + 1
        return length


@dataclass(frozen=True)
class SdeeConfig:
    """Sizes of the SDEE block.

    Attributes:
        in_features (int): DE bands per channel.
        embed_dim (int): Node embedding width, also the block's output width.
        encoder_kind (str): "gcn" or "gat".
        n_layers (int): Graph encoder layers.
        gat_heads (int): Attention heads per GAT layer. Only 1 is supported.
    """

    in_features: int = N_BANDS
    embed_dim: int = 64
    encoder_kind: str = GCN
    n_layers: int = 2
    gat_heads: int = 1

    def __post_init__(self):
        validate_encoder_kind(self.encoder_kind)
        if self.n_layers < 1:
            raise ConfigurationError(f"n_layers must be >= 1, got {self.n_layers}.")
        if self.gat_heads != 1:
            raise ConfigurationError(f"Only single-head GAT is supported, got {self.gat_heads} heads.")


@dataclass
class DomainFeatures:
    """Outputs of the two encoder blocks.

    Attributes:
        x_alpha (Tensor): [..., C, d_model] spatial features, one row per channel.
        x_beta (Tensor): [..., T', d_model] time-frequency features, one row per step.
    """

    x_alpha: Optional[Tensor]
    x_beta: Optional[Tensor]


def validate_encoder_kind(encoder_kind: str) -> str:
    sanitized = encoder_kind.lower().strip()
    if sanitized not in VALID_ENCODER_KINDS:
        raise ConfigurationError(f"Encoder kind {encoder_kind} not one of {VALID_ENCODER_KINDS}.")
    return sanitized


def init_tdee_params(
    cfg: TdeeConfig, rng: np.random.Generator, dtype=np.float64
) -> Tuple[Dict[str, np.ndarray], Dict[str, np.ndarray]]:
    """Initial TDEE weights and batch-norm buffers, keyed by parameter name."""
    weights = {}
    c_in = cfg.in_channels
    for layer, (c_out, kernel) in enumerate(zip(cfg.conv_channels, cfg.kernel_sizes), start=1):
        fan_in = c_in * kernel
        weights[f"tdee.conv{layer}.weight"] = nn_core.uniform_init(rng, (c_out, c_in, kernel), fan_in, dtype)
        weights[f"tdee.conv{layer}.bias"] = nn_core.uniform_init(rng, (c_out,), fan_in, dtype)
        c_in = c_out
    weights["tdee.bn.gamma"] = np.ones(c_in, dtype=dtype)
    weights["tdee.bn.beta"] = np.zeros(c_in, dtype=dtype)

    lstm_layers = (
        ("tdee.bilstm_fwd", c_in, cfg.bilstm_hidden),
        ("tdee.bilstm_bwd", c_in, cfg.bilstm_hidden),
        ("tdee.lstm", 2 * cfg.bilstm_hidden, cfg.lstm_hidden),
    )
    for prefix, d_in, hidden in lstm_layers:
        w_x, w_h, bias = nn_core.init_lstm_weights(rng, d_in, hidden, dtype)
        weights[f"{prefix}.w_x"], weights[f"{prefix}.w_h"], weights[f"{prefix}.bias"] = w_x, w_h, bias

    buffers = {
        "tdee.bn.running_mean": np.zeros(c_in, dtype=dtype),
        "tdee.bn.running_var": np.ones(c_in, dtype=dtype),
    }
    return weights, buffers


def _lstm_weights(params: Mapping[str, Tensor], prefix: str) -> nn_core.LstmWeights:
    return nn_core.LstmWeights(params[f"{prefix}.w_x"], params[f"{prefix}.w_h"], params[f"{prefix}.bias"])


def tdee_forward(
    raw_window: TensorLike,
    params: Mapping[str, Tensor],
    buffers: Mapping[str, np.ndarray],
    cfg: TdeeConfig,
    mode: str = nn_core.TRAIN,
) -> Tensor:
    """TDEE block: conv -> ReLU -> conv -> ReLU -> conv -> BN -> BiLSTM -> LSTM.

    Args:
        raw_window (TensorLike): [C, W] or [N, C, W] standardized raw samples.
        params (Mapping[str, Tensor]): Weights named as in init_tdee_params.
        buffers (Mapping[str, np.ndarray]): Batch-norm running statistics,
            updated in place in train mode.
        cfg (TdeeConfig): Block configuration.
        mode (str): "train" or "eval".

    Returns:
        x_beta (Tensor): [(N,) T', lstm_hidden] full hidden sequence. With the
            defaults and W = 256, T' = 30.
    """
    x = as_tensor(raw_window)
    unbatched = x.ndim == 2
    if unbatched:
        x = x.reshape(1, *x.shape)
    if x.shape[1] != cfg.in_channels:
        raise ShapeError(f"TDEE expects {cfg.in_channels} channels, got {x.shape[1]}.")

    n_conv = len(cfg.conv_channels)
    for layer, stride in enumerate(cfg.strides, start=1):
        x = nn_core.conv1d(x, params[f"tdee.conv{layer}.weight"], params[f"tdee.conv{layer}.bias"], stride=stride)
        if layer < n_conv:
            x = nn_core.relu(x)
    state = nn_core.BatchNormState(buffers["tdee.bn.running_mean"], buffers["tdee.bn.running_var"])
    x = nn_core.batch_norm(x, params["tdee.bn.gamma"], params["tdee.bn.beta"], state, mode)

    # time-major for the recurrent layers: [N, T', channels]
    x = x.transpose(0, 2, 1)
    x = nn_core.bilstm(x, _lstm_weights(params, "tdee.bilstm_fwd"), _lstm_weights(params, "tdee.bilstm_bwd"))
    x = nn_core.lstm(x, _lstm_weights(params, "tdee.lstm"))
    return x.reshape(*x.shape[1:]) if unbatched else x


def _adjacency_array(graph: Adjacency) -> np.ndarray:
    if isinstance(graph, ChannelGraph):
        return graph.adjacency
    return np.asarray(graph)


def self_loop_adjacency(graph: Adjacency) -> np.ndarray:
    """A + I for one [C, C] or a stack [N, C, C] of adjacency matrices."""
    adjacency = _adjacency_array(graph)
    return adjacency + np.eye(adjacency.shape[-1], dtype=adjacency.dtype)


def gcn_coefficients(graph: Adjacency, dtype=np.float64) -> np.ndarray:
    """Edge weights 1 / sqrt(d_i d_j) on A + I, zero off the edges.

    Degrees are counted with the self-loop, so every node has d >= 1.
    """
    a_tilde = self_loop_adjacency(graph).astype(dtype)
    inv_sqrt = 1.0 / np.sqrt(a_tilde.sum(axis=-1))
    return a_tilde * inv_sqrt[..., :, None] * inv_sqrt[..., None, :]


def gcn_layer(graph: Adjacency, h: TensorLike, weight: TensorLike) -> Tensor:
    """h'_i = ReLU(sum over j in N_i + {i} of h_j W / sqrt(d_i d_j)).

    Args:
        graph (Adjacency): ChannelGraph, [C, C] or [N, C, C] adjacency without self-loops.
        h (TensorLike): [(N,) C, F] node features.
        weight (TensorLike): [F, F'].

    Returns:
        h_next (Tensor): [(N,) C, F'].
    """
    h = as_tensor(h)
    coefficients = gcn_coefficients(graph, h.dtype)
    return nn_core.relu(Tensor(coefficients) @ (h @ weight))


def gat_attention(graph: Adjacency, h: TensorLike, weight: TensorLike, attention: TensorLike) -> Tuple[Tensor, Tensor]:
    """Attention weights alpha_ij and projected features z of a GAT layer.

    z_i = h_i W, e_ij = LeakyReLU(a^T [z_i || z_j]), alpha_ij is the softmax of
    e_ij over j in N_i + {i}; non-neighbours get exactly zero weight.

    Returns:
        alpha (Tensor): [(N,) C, C], rows sum to 1.
        z (Tensor): [(N,) C, F'].
    """
    h, attention = as_tensor(h), as_tensor(attention)
    z = h @ weight
    width = z.shape[-1]
    if attention.shape != (2 * width,):
        raise ShapeError(f"GAT attention vector must have {2 * width} entries, got {attention.shape}.")
    score_self = z @ attention[:width].reshape(width, 1)
    score_neighbour = z @ attention[width:].reshape(width, 1)
    logits = nn_core.leaky_relu(score_self + score_neighbour.swapaxes(-1, -2))
    alpha = nn_core.masked_softmax(logits, self_loop_adjacency(graph) > 0, axis=-1)
    return alpha, z


def gat_layer(graph: Adjacency, h: TensorLike, weight: TensorLike, attention: TensorLike) -> Tensor:
    """h'_i = ReLU(sum over j of alpha_ij z_j); see gat_attention."""
    alpha, z = gat_attention(graph, h, weight, attention)
    return nn_core.relu(alpha @ z)


def init_sdee_params(cfg: SdeeConfig, rng: np.random.Generator, dtype=np.float64) -> Dict[str, np.ndarray]:
    weights = {
        "sdee.embed.weight": nn_core.uniform_init(rng, (cfg.in_features, cfg.embed_dim), cfg.in_features, dtype),
        "sdee.embed.bias": nn_core.uniform_init(rng, (cfg.embed_dim,), cfg.in_features, dtype),
    }
    for layer in range(1, cfg.n_layers + 1):
        weights[f"sdee.layer{layer}.weight"] = nn_core.uniform_init(
            rng, (cfg.embed_dim, cfg.embed_dim), cfg.embed_dim, dtype
        )
        if cfg.encoder_kind == GAT:
            weights[f"sdee.layer{layer}.attention"] = nn_core.uniform_init(
                rng, (2 * cfg.embed_dim,), 2 * cfg.embed_dim, dtype
            )
    return weights


def sdee_forward(
    de_features: TensorLike,
    params: Mapping[str, Tensor],
    cfg: SdeeConfig,
    k: int,
    adjacency: Optional[np.ndarray] = None,
) -> Tensor:
    """SDEE block: node embedding, KNN graph, graph encoder stack.

    Args:
        de_features (TensorLike): [C, B] or [N, C, B] DE per channel and band.
        params (Mapping[str, Tensor]): Weights named as in init_sdee_params.
        cfg (SdeeConfig): Block configuration.
        k (int): KNN neighbours.
        adjacency (np.ndarray, optional): Precomputed KNN adjacency. Built
            from de_features when omitted.

    Returns:
        x_alpha (Tensor): [(N,) C, embed_dim].
    """
    de = as_tensor(de_features)
    if de.shape[-2] < 2:
        raise ShapeError(f"SDEE needs at least 2 channels, got {de.shape[-2]}.")
    if adjacency is None:
        stacked = de.values if de.ndim == 3 else de.values[None]
        adjacency = batch_adjacency(stacked, k)
        if de.ndim == 2:
            adjacency = adjacency[0]

    h = nn_core.linear(de, params["sdee.embed.weight"], params["sdee.embed.bias"])
    for layer in range(1, cfg.n_layers + 1):
        weight = params[f"sdee.layer{layer}.weight"]
        if cfg.encoder_kind == GAT:
            h = gat_layer(adjacency, h, weight, params[f"sdee.layer{layer}.attention"])
        else:
            h = gcn_layer(adjacency, h, weight)
    return h
