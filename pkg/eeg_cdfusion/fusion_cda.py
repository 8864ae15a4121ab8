"""
    Cross-domain attention, feature fusion and the classifier head.

    The spatial features X_alpha query the time-frequency features X_beta
    through multi-head attention; the result X_CM is the first fusion step.
    The second step concatenates the pooled X_alpha, X_beta and X_CM before
    the dense classifier. One-step fusion feeds the pooled X_CM alone.

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
from typing import Dict, Mapping, Optional, Tuple

import numpy as np

from eeg_cdfusion import nn_core
from eeg_cdfusion.autodiff import Tensor, TensorLike, as_tensor, concat
from eeg_cdfusion.exceptions import ConfigurationError, ShapeError

N_CLASSES = 2

# which domain provides the attention queries
QUERY_SPATIAL = "spatial"
QUERY_TEMPORAL = "temporal"
VALID_QUERY_DOMAINS = (QUERY_SPATIAL, QUERY_TEMPORAL)


@dataclass(frozen=True)
class CdaConfig:
    """Multi-head cross-domain attention sizes.

    Attributes:
        n_heads (int): H, number of attention heads. Defaults to 8.
        d_model (int): Feature width of both domains. Defaults to 64.
        query_domain (str): "spatial" (X_alpha queries X_beta) or "temporal".
    """

    n_heads: int = 8
    d_model: int = 64
    query_domain: str = QUERY_SPATIAL

    def __post_init__(self):
        if self.n_heads < 1:
            raise ConfigurationError(f"n_heads must be >= 1, got {self.n_heads}.")
        if self.d_model % self.n_heads:
            raise ConfigurationError(f"d_model {self.d_model} is not divisible by {self.n_heads} heads.")
        if self.query_domain not in VALID_QUERY_DOMAINS:
            raise ConfigurationError(f"query_domain {self.query_domain} not one of {VALID_QUERY_DOMAINS}.")

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads


@dataclass
class FusedFeatures:
    """Fusion outputs.

    Attributes:
        x_cm (Tensor): [..., rows, d_model] cross-domain attention output.
        x_fc (Tensor): [..., 3 * d_model] pooled concat (X_alpha, X_beta, X_CM).
    """

    x_cm: Optional[Tensor]
    x_fc: Tensor


def init_cda_params(cfg: CdaConfig, rng: np.random.Generator, dtype=np.float64) -> Dict[str, np.ndarray]:
    shape = (cfg.d_model, cfg.d_model)
    return {
        f"cda.{name}": nn_core.uniform_init(rng, shape, cfg.d_model, dtype)
        for name in ("w_q", "w_k", "w_v", "w_o")
    }


def _split_heads(x: Tensor, n_heads: int) -> Tensor:
    # [..., L, D] -> [..., H, L, D / H]
    lead, length, width = x.shape[:-2], x.shape[-2], x.shape[-1]
    return x.reshape(*lead, length, n_heads, width // n_heads).swapaxes(-2, -3)


def _merge_heads(x: Tensor) -> Tensor:
    # [..., H, L, d] -> [..., L, H * d]
    merged = x.swapaxes(-2, -3)
    return merged.reshape(*merged.shape[:-2], merged.shape[-2] * merged.shape[-1])


def attention_weights(
    x_query: TensorLike, x_key: TensorLike, params: Mapping[str, Tensor], cfg: CdaConfig
) -> Tuple[Tensor, Tensor]:
    """Per-head attention weights softmax(Q K^T / sqrt(d)) and the values V.

    Returns:
        weights (Tensor): [..., H, L_query, L_key], rows sum to 1.
        values (Tensor): [..., H, L_key, d].
    """
    x_query, x_key = as_tensor(x_query), as_tensor(x_key)
    if x_query.shape[-1] != cfg.d_model or x_key.shape[-1] != cfg.d_model:
        raise ShapeError(
            f"Attention inputs must be {cfg.d_model} wide, got {x_query.shape[-1]} and {x_key.shape[-1]}."
        )
    queries = _split_heads(x_query @ params["cda.w_q"], cfg.n_heads)
    keys = _split_heads(x_key @ params["cda.w_k"], cfg.n_heads)
    values = _split_heads(x_key @ params["cda.w_v"], cfg.n_heads)
    scores = (queries @ keys.swapaxes(-1, -2)) * float(1.0 / np.sqrt(cfg.head_dim))
    return nn_core.softmax(scores, axis=-1), values


def cross_domain_attention(
    x_alpha: TensorLike, x_beta: TensorLike, params: Mapping[str, Tensor], cfg: CdaConfig
) -> Tensor:
    """MultiHead(X_alpha, X_beta) = Concat(head_1..head_H) W_O.

    head_i = softmax(X_alpha W_Q^i (X_beta W_K^i)^T / sqrt(d)) X_beta W_V^i,
    with queries from the first argument and keys/values from the second.

    Args:
        x_alpha (TensorLike): [..., C, d_model] query-domain features.
        x_beta (TensorLike): [..., T', d_model] key/value-domain features.
        params (Mapping[str, Tensor]): cda.w_q, cda.w_k, cda.w_v, cda.w_o.
        cfg (CdaConfig): Heads and width.

    Returns:
        x_cm (Tensor): [..., C, d_model].
    """
    weights, values = attention_weights(x_alpha, x_beta, params, cfg)
    return _merge_heads(weights @ values) @ params["cda.w_o"]


def one_step_fuse(x_cm: TensorLike) -> Tensor:
    """Mean of X_CM over its rows."""
    return as_tensor(x_cm).mean(axis=-2)


def two_step_fuse(x_alpha: TensorLike, x_beta: TensorLike, x_cm: TensorLike) -> Tensor:
    """X_FC = Concat(mean X_alpha, mean X_beta, mean X_CM), in that order."""
    return concat(
        [as_tensor(x_alpha).mean(axis=-2), as_tensor(x_beta).mean(axis=-2), one_step_fuse(x_cm)],
        axis=-1,
    )


def init_classifier_params(
    in_width: int, hidden: int, rng: np.random.Generator, dtype=np.float64
) -> Dict[str, np.ndarray]:
    return {
        "head.dense1.weight": nn_core.uniform_init(rng, (in_width, hidden), in_width, dtype),
        "head.dense1.bias": nn_core.uniform_init(rng, (hidden,), in_width, dtype),
        "head.dense2.weight": nn_core.uniform_init(rng, (hidden, N_CLASSES), hidden, dtype),
        "head.dense2.bias": nn_core.uniform_init(rng, (N_CLASSES,), hidden, dtype),
    }


def classify(x_fc: TensorLike, params: Mapping[str, Tensor]) -> Tensor:
    """Two dense layers, ReLU between them; returns unnormalized [..., 2] logits."""
    hidden = nn_core.relu(nn_core.linear(x_fc, params["head.dense1.weight"], params["head.dense1.bias"]))
    return nn_core.linear(hidden, params["head.dense2.weight"], params["head.dense2.bias"])
