"""
    The full emotion classifier: encoders, fusion and head, per fusion mode.

    Fusion modes (the rows of the block ablation):
        sdee_only  pooled X_alpha                     -> head
        tdee_only  pooled X_beta                      -> head
        concat     pooled X_alpha, X_beta             -> head
        one_step   pooled X_CM                        -> head
        two_step   pooled X_alpha, X_beta, X_CM       -> head

    Only the blocks a mode uses are created, so only they receive gradients.
    Parameters are a flat name -> Tensor mapping; batch-norm running
    statistics live next to them as buffers.

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

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Optional, Tuple, Union

import numpy as np

from eeg_cdfusion import config, encoders, fusion_cda, nn_core
from eeg_cdfusion.autodiff import Tensor, concat, parameter
from eeg_cdfusion.exceptions import ConfigurationError, FormatError
from eeg_cdfusion.tensor_container import load_tensor, save_tensor

LOGGER = logging.getLogger(__name__)

PathLike = Union[str, Path]

SDEE_ONLY = "sdee_only"
TDEE_ONLY = "tdee_only"
CONCAT = "concat"
ONE_STEP = "one_step"
TWO_STEP = "two_step"
FUSION_MODES = (SDEE_ONLY, TDEE_ONLY, CONCAT, ONE_STEP, TWO_STEP)

# blocks each fusion mode runs
FUSION_BLOCKS = {
    SDEE_ONLY: ("sdee",),
    TDEE_ONLY: ("tdee",),
    CONCAT: ("sdee", "tdee"),
    ONE_STEP: ("sdee", "tdee", "cda"),
    TWO_STEP: ("sdee", "tdee", "cda"),
}

# classifier input width in units of d_model
FUSION_WIDTH = {SDEE_ONLY: 1, TDEE_ONLY: 1, CONCAT: 2, ONE_STEP: 1, TWO_STEP: 3}

VALID_DTYPES = ("float32", "float64")

MANIFEST_FILE = "manifest.txt"
CONFIG_FILE = "config.txt"
PARAM_SUFFIX = ".nft"


def validate_fusion_mode(fusion_mode: str) -> str:
    sanitized = fusion_mode.lower().strip()
    if sanitized not in FUSION_MODES:
        raise ConfigurationError(f"Fusion mode {fusion_mode} not one of {FUSION_MODES}.")
    return sanitized


@dataclass(frozen=True)
class ModelConfig:
    """Architecture of one classifier instance."""

    n_channels: int = encoders.DEAP_CHANNELS
    n_bands: int = encoders.N_BANDS
    d_model: int = 64
    n_heads: int = 8
    encoder_kind: str = encoders.GCN
    gcn_layers: int = 2
    k_nn: int = 5
    fusion_mode: str = TWO_STEP
    cda_query: str = fusion_cda.QUERY_SPATIAL
    dtype: str = "float64"

    def __post_init__(self):
        validate_fusion_mode(self.fusion_mode)
        if self.dtype not in VALID_DTYPES:
            raise ConfigurationError(f"dtype {self.dtype} not one of {VALID_DTYPES}.")
        if self.d_model % 2:
            raise ConfigurationError(f"d_model must be even for the BiLSTM, got {self.d_model}.")
        if not 1 <= self.k_nn <= self.n_channels - 1:
            raise ConfigurationError(f"k_nn = {self.k_nn} must lie in [1, {self.n_channels - 1}].")
        # the sub-configs validate themselves on construction
        self.tdee_config()
        self.sdee_config()
        self.cda_config()

    @property
    def blocks(self) -> Tuple[str, ...]:
        return FUSION_BLOCKS[self.fusion_mode]

    def tdee_config(self) -> encoders.TdeeConfig:
        return encoders.TdeeConfig(
            in_channels=self.n_channels,
            conv_channels=(self.d_model,) * 3,
            bilstm_hidden=self.d_model // 2,
            lstm_hidden=self.d_model,
        )

    def sdee_config(self) -> encoders.SdeeConfig:
        return encoders.SdeeConfig(
            in_features=self.n_bands,
            embed_dim=self.d_model,
            encoder_kind=encoders.validate_encoder_kind(self.encoder_kind),
            n_layers=self.gcn_layers,
        )

    def cda_config(self) -> fusion_cda.CdaConfig:
        return fusion_cda.CdaConfig(n_heads=self.n_heads, d_model=self.d_model, query_domain=self.cda_query)


@dataclass
class ModelParams:
    """All trainable weights of a classifier plus its batch-norm buffers.

    Attributes:
        config (ModelConfig): Architecture the weights belong to.
        weights (Dict[str, Tensor]): Trainable tensors keyed by dotted name.
        buffers (Dict[str, np.ndarray]): Non-trainable running statistics.
    """

    config: ModelConfig
    weights: Dict[str, Tensor]
    buffers: Dict[str, np.ndarray]

    def arrays(self) -> Dict[str, np.ndarray]:
        """name -> weight array, shared with the tensors (updates are in place)."""
        return {name: tensor.values for name, tensor in self.weights.items()}

    def grads(self) -> Dict[str, Optional[np.ndarray]]:
        return {name: tensor.grad for name, tensor in self.weights.items()}

    def zero_grad(self) -> None:
        for tensor in self.weights.values():
            tensor.zero_grad()

    @property
    def n_parameters(self) -> int:
        return int(sum(tensor.values.size for tensor in self.weights.values()))


def init_params(model_config: ModelConfig, seed: int) -> ModelParams:
    """Seeded initial parameters for the blocks the fusion mode uses."""
    rng = np.random.default_rng(seed)
    dtype = np.dtype(model_config.dtype)
    weights: Dict[str, np.ndarray] = {}
    buffers: Dict[str, np.ndarray] = {}
    if "tdee" in model_config.blocks:
        tdee_weights, buffers = encoders.init_tdee_params(model_config.tdee_config(), rng, dtype)
        weights.update(tdee_weights)
    if "sdee" in model_config.blocks:
        weights.update(encoders.init_sdee_params(model_config.sdee_config(), rng, dtype))
    if "cda" in model_config.blocks:
        weights.update(fusion_cda.init_cda_params(model_config.cda_config(), rng, dtype))
    weights.update(
        fusion_cda.init_classifier_params(
            FUSION_WIDTH[model_config.fusion_mode] * model_config.d_model, model_config.d_model, rng, dtype
        )
    )
    LOGGER.debug(
        "Initialized %s model: %d parameters",
        model_config.fusion_mode, sum(array.size for array in weights.values()),
    )
    return ModelParams(
        config=model_config,
        weights={name: parameter(array) for name, array in weights.items()},
        buffers=buffers,
    )


def encode(
    params: ModelParams,
    raw: np.ndarray,
    de: np.ndarray,
    mode: str = nn_core.TRAIN,
    adjacency: Optional[np.ndarray] = None,
) -> encoders.DomainFeatures:
    """Run the encoder blocks the fusion mode needs; unused outputs are None."""
    cfg = params.config
    dtype = np.dtype(cfg.dtype)
    x_alpha = x_beta = None
    if "sdee" in cfg.blocks:
        x_alpha = encoders.sdee_forward(
            Tensor(np.asarray(de, dtype=dtype)), params.weights, cfg.sdee_config(), cfg.k_nn, adjacency
        )
    if "tdee" in cfg.blocks:
        x_beta = encoders.tdee_forward(
            Tensor(np.asarray(raw, dtype=dtype)), params.weights, params.buffers, cfg.tdee_config(), mode
        )
    return encoders.DomainFeatures(x_alpha=x_alpha, x_beta=x_beta)


def fuse(params: ModelParams, features: encoders.DomainFeatures) -> fusion_cda.FusedFeatures:
    """Classifier input for the configured fusion mode."""
    cfg = params.config
    x_alpha, x_beta = features.x_alpha, features.x_beta
    x_cm = None
    if "cda" in cfg.blocks:
        cda_cfg = cfg.cda_config()
        if cda_cfg.query_domain == fusion_cda.QUERY_SPATIAL:
            x_cm = fusion_cda.cross_domain_attention(x_alpha, x_beta, params.weights, cda_cfg)
        else:
            x_cm = fusion_cda.cross_domain_attention(x_beta, x_alpha, params.weights, cda_cfg)

    if cfg.fusion_mode == TWO_STEP:
        x_fc = fusion_cda.two_step_fuse(x_alpha, x_beta, x_cm)
    elif cfg.fusion_mode == ONE_STEP:
        x_fc = fusion_cda.one_step_fuse(x_cm)
    elif cfg.fusion_mode == CONCAT:
        x_fc = concat([x_alpha.mean(axis=-2), x_beta.mean(axis=-2)], axis=-1)
    elif cfg.fusion_mode == SDEE_ONLY:
        x_fc = x_alpha.mean(axis=-2)
    else:
        x_fc = x_beta.mean(axis=-2)
    return fusion_cda.FusedFeatures(x_cm=x_cm, x_fc=x_fc)


def forward(
    params: ModelParams,
    raw: np.ndarray,
    de: np.ndarray,
    mode: str = nn_core.TRAIN,
    adjacency: Optional[np.ndarray] = None,
) -> Tensor:
    """Logits [N, 2] for a batch of raw windows [N, C, W] and DE features [N, C, B]."""
    features = encode(params, raw, de, mode, adjacency)
    return fusion_cda.classify(fuse(params, features).x_fc, params.weights)


def save_checkpoint(params: ModelParams, path: PathLike) -> None:
    """Write one container per weight and buffer, a manifest and the config.

    manifest.txt holds ``name<TAB>kind<TAB>shape`` lines, kind being
    "weight" or "buffer"; config.txt holds the ModelConfig as key = value.
    """
    directory = Path(path)
    directory.mkdir(parents=True, exist_ok=True)
    lines = []
    entries = [(name, "weight", tensor.values) for name, tensor in params.weights.items()]
    entries += [(name, "buffer", array) for name, array in params.buffers.items()]
    for name, kind, array in entries:
        save_tensor(array, directory / f"{name}{PARAM_SUFFIX}")
        lines.append(f"{name}\t{kind}\t{','.join(str(dim) for dim in array.shape)}")
    (directory / MANIFEST_FILE).write_text("\n".join(lines) + "\n", encoding="utf-8")
    (directory / CONFIG_FILE).write_text(
        config.format_key_values(config.dataclass_to_values(params.config)), encoding="utf-8"
    )
    LOGGER.info("Checkpoint with %d tensors written to %s", len(entries), directory)


def load_checkpoint(path: PathLike) -> ModelParams:
    """Read a checkpoint written by save_checkpoint."""
    directory = Path(path)
    model_config = config.build_dataclass(ModelConfig, config.read_key_values(directory / CONFIG_FILE))
    weights, buffers = {}, {}
    for line in (directory / MANIFEST_FILE).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        try:
            name, kind, shape_text = line.split("\t")
        except ValueError as exc:
            raise FormatError(f"{directory / MANIFEST_FILE}: malformed line {line!r}.") from exc
        array = load_tensor(directory / f"{name}{PARAM_SUFFIX}")
        shape = tuple(int(dim) for dim in shape_text.split(",") if dim)
        if array.shape != shape:
            raise FormatError(f"Checkpoint tensor {name} has shape {array.shape}, manifest says {shape}.")
        if kind == "weight":
            weights[name] = parameter(array)
        elif kind == "buffer":
            buffers[name] = array
        else:
            raise FormatError(f"Unknown tensor kind {kind} for {name}.")

    expected = init_params(model_config, seed=0)
    if set(expected.weights) != set(weights) or set(expected.buffers) != set(buffers):
        raise FormatError(f"{directory} does not hold the tensors of a {model_config.fusion_mode} model.")
    return ModelParams(config=model_config, weights=weights, buffers=buffers)
