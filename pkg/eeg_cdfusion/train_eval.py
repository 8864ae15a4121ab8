"""
    Training, evaluation and the leave-one-subject-out protocol.

    Every fold trains a fresh model on all windows of the other subjects and
    tests on every window of the held-out one. Folds run in subject-id order
    and everything random is drawn from generators seeded by TrainConfig.seed,
    so identical inputs give identical reports.

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

import dataclasses
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from sklearn.metrics import accuracy_score
from sklearn.model_selection import LeaveOneGroupOut

from eeg_cdfusion import config, encoders, fusion_cda, model, nn_core
from eeg_cdfusion.autodiff import no_grad
from eeg_cdfusion.bands import BandSet
from eeg_cdfusion.dataset_io import EegRecording
from eeg_cdfusion.exceptions import ConfigurationError, ValidationError
from eeg_cdfusion.optimizer import DEFAULT_LR, AdamState, adam_step
from eeg_cdfusion.signal_pipeline import (
    FeatureSample,
    WindowConfig,
    featurize,
    stack_samples,
    validate_label_dim,
)

LOGGER = logging.getLogger(__name__)

PathLike = Union[str, Path]

PREDICT_BATCH = 256

# row name, fusion mode, and which blocks the row switches on (SDEE, TDEE, CDA, two-step fusion)
ABLATION_ROWS = (
    ("SDEE-only", model.SDEE_ONLY, (True, False, False, False)),
    ("TDEE-only", model.TDEE_ONLY, (False, True, False, False)),
    ("Concat", model.CONCAT, (True, True, False, False)),
    ("One-step", model.ONE_STEP, (True, True, True, False)),
    ("Two-step", model.TWO_STEP, (True, True, True, True)),
)

ENCODER_ROWS = (
    ("Ours (with GAT)", encoders.GAT),
    ("Ours (with GCN)", encoders.GCN),
)


@dataclass(frozen=True)
class TrainConfig:
    """Everything one training run needs; mirrors the key = value config file."""

    lr: float = DEFAULT_LR
    batch_size: int = 64
    max_epochs: int = 50
    seed: int = 0
    label_dim: str = "valence"
    encoder_kind: str = encoders.GCN
    fusion_mode: str = model.TWO_STEP
    k_nn: int = 5
    n_heads: int = 8
    d_model: int = 64
    gcn_layers: int = 2
    window_s: float = 2.0
    hop_s: float = 0.125
    dtype: str = "float32"
    cda_query: str = fusion_cda.QUERY_SPATIAL

    def __post_init__(self):
        if self.lr < 0:
            raise ConfigurationError(f"lr must be >= 0, got {self.lr}.")
        if self.batch_size < 1:
            raise ConfigurationError(f"batch_size must be >= 1, got {self.batch_size}.")
        if self.max_epochs < 0:
            raise ConfigurationError(f"max_epochs must be >= 0, got {self.max_epochs}.")
        if not 0 <= self.seed < 2**64:
            raise ConfigurationError(f"seed must be an unsigned 64-bit integer, got {self.seed}.")
        validate_label_dim(self.label_dim)
        encoders.validate_encoder_kind(self.encoder_kind)
        model.validate_fusion_mode(self.fusion_mode)
        if self.dtype not in model.VALID_DTYPES:
            raise ConfigurationError(f"dtype {self.dtype} not one of {model.VALID_DTYPES}.")

    def window_config(self, sample_rate_hz: float = 128.0) -> WindowConfig:
        return WindowConfig(window_s=self.window_s, hop_s=self.hop_s, sample_rate_hz=sample_rate_hz)

    def model_config(self, n_channels: int, n_bands: int = encoders.N_BANDS) -> model.ModelConfig:
        return model.ModelConfig(
            n_channels=n_channels,
            n_bands=n_bands,
            d_model=self.d_model,
            n_heads=self.n_heads,
            encoder_kind=encoders.validate_encoder_kind(self.encoder_kind),
            gcn_layers=self.gcn_layers,
            k_nn=self.k_nn,
            fusion_mode=model.validate_fusion_mode(self.fusion_mode),
            cda_query=self.cda_query,
            dtype=self.dtype,
        )

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)


def load_train_config(path: PathLike) -> TrainConfig:
    return config.build_dataclass(TrainConfig, config.read_key_values(path))


@dataclass
class FoldReport:
    """Result of one LOSO fold.

    Attributes:
        fold_subject (int): Held-out subject.
        n_test (int): Test windows of that subject.
        accuracy (float): Correct / n_test.
        loss_curve (List[float]): Mean training loss per epoch.
        train_subjects (Tuple[int, ...]): Subjects the fold trained on.
    """

    fold_subject: int
    n_test: int
    accuracy: float
    loss_curve: List[float] = field(default_factory=list)
    train_subjects: Tuple[int, ...] = ()


@dataclass
class AblationRow:
    """One row of the block ablation table; accuracies keyed by label dim."""

    name: str
    fusion_mode: str
    blocks: Tuple[bool, bool, bool, bool]
    accuracies: Dict[str, float]


@dataclass
class EncoderRow:
    """One row of the encoder comparison table; accuracies keyed by label dim."""

    method: str
    encoder_kind: str
    accuracies: Dict[str, float]


def train(samples: Sequence[FeatureSample], cfg: TrainConfig) -> Tuple[model.ModelParams, List[float]]:
    """Fit a fresh model with Adam on the cross-entropy loss.

    Each epoch visits the samples in an order drawn from a generator seeded
    with cfg.seed; the last batch of an epoch may be short.

    Args:
        samples (Sequence[FeatureSample]): Training windows.
        cfg (TrainConfig): Hyperparameters and architecture.

    Raises:
        ValidationError: If samples is empty or holds a single class.

    Returns:
        params (model.ModelParams): Trained parameters.
        loss_curve (List[float]): Mean loss over the samples, per epoch.
    """
    if not samples:
        raise ValidationError("Cannot train on zero samples.")
    raw, de, labels = stack_samples(samples)
    if np.unique(labels).size < 2:
        raise ValidationError(f"Training data holds only class {labels[0]}; need both classes.")

    params = model.init_params(cfg.model_config(raw.shape[1], de.shape[2]), cfg.seed)
    weights = params.arrays()
    state = AdamState(lr=cfg.lr)
    rng = np.random.default_rng([cfg.seed, len(samples)])
    n_samples = len(samples)

    loss_curve = []
    for epoch in range(cfg.max_epochs):
        order = rng.permutation(n_samples)
        total = 0.0
        for start in range(0, n_samples, cfg.batch_size):
            batch = order[start : start + cfg.batch_size]
            params.zero_grad()
            logits = model.forward(params, raw[batch], de[batch], mode=nn_core.TRAIN)
            loss = nn_core.cross_entropy(logits, labels[batch])
            loss.backward()
            adam_step(weights, params.grads(), state)
            total += float(loss.values) * batch.size
        loss_curve.append(total / n_samples)
        LOGGER.debug("Epoch %d/%d: mean loss %.6f", epoch + 1, cfg.max_epochs, loss_curve[-1])
    return params, loss_curve


def predict(params: model.ModelParams, samples: Sequence[FeatureSample]) -> np.ndarray:
    """Argmax class of every sample, in eval mode and without recording a graph."""
    if not samples:
        return np.zeros(0, dtype=np.int64)
    raw, de, _ = stack_samples(samples)
    predictions = []
    with no_grad():
        for start in range(0, len(samples), PREDICT_BATCH):
            batch = slice(start, start + PREDICT_BATCH)
            logits = model.forward(params, raw[batch], de[batch], mode=nn_core.EVAL)
            predictions.append(np.argmax(logits.values, axis=-1))
    return np.concatenate(predictions).astype(np.int64)


def evaluate(params: model.ModelParams, samples: Sequence[FeatureSample]) -> float:
    """Fraction of samples whose argmax prediction equals the label."""
    if not samples:
        raise ValidationError("Cannot evaluate on zero samples.")
    labels = np.array([sample.label for sample in samples], dtype=np.int64)
    return float(accuracy_score(labels, predict(params, samples)))


def featurize_recordings(
    recordings: Sequence[EegRecording], cfg: TrainConfig, band_set: BandSet = BandSet()
) -> List[FeatureSample]:
    """Windows of every recording, in subject-id order."""
    samples = []
    for rec in sorted(recordings, key=lambda rec: rec.subject_id):
        samples.extend(featurize(rec, cfg.window_config(rec.sample_rate_hz), band_set, cfg.label_dim))
    return samples


def loso_samples(samples: Sequence[FeatureSample], cfg: TrainConfig) -> Tuple[List[FoldReport], float]:
    """LOSO over already featurized windows; see loso."""
    groups = np.array([sample.subject_id for sample in samples], dtype=np.int64)
    subjects = np.unique(groups)
    if subjects.size < 2:
        raise ValidationError(f"LOSO needs at least 2 subjects, got {subjects.size}.")

    reports = []
    # LeaveOneGroupOut yields folds in sorted group order
    splitter = LeaveOneGroupOut()
    for train_idx, test_idx in splitter.split(np.zeros(len(samples)), groups=groups):
        test_subject = int(groups[test_idx[0]])
        train_set = [samples[i] for i in train_idx]
        test_set = [samples[i] for i in test_idx]
        train_subjects = tuple(int(subject) for subject in np.unique(groups[train_idx]))
        LOGGER.info("Fold %d: training on %d windows of %d subjects", test_subject, len(train_set), len(train_subjects))
        if np.unique(groups[test_idx]).size != 1 or test_subject in train_subjects:
            raise ValidationError(f"Fold {test_subject} mixes subjects between train and test.")
        if len({sample.label for sample in test_set}) < 2:
            LOGGER.warning("Fold %d: the held-out subject has a single class", test_subject)

        params, loss_curve = train(train_set, cfg)
        accuracy = evaluate(params, test_set)
        LOGGER.info("Fold %d: accuracy %.4f on %d windows", test_subject, accuracy, len(test_set))
        reports.append(
            FoldReport(
                fold_subject=test_subject,
                n_test=len(test_set),
                accuracy=accuracy,
                loss_curve=loss_curve,
                train_subjects=train_subjects,
            )
        )
    return reports, mean_accuracy(reports)


def loso(recordings: Sequence[EegRecording], cfg: TrainConfig) -> Tuple[List[FoldReport], float]:
    """Leave-one-subject-out cross-validation.

    Args:
        recordings (Sequence[EegRecording]): One recording per subject.
        cfg (TrainConfig): Configuration shared by every fold.

    Raises:
        ValidationError: With fewer than 2 subjects or duplicated subject ids.

    Returns:
        reports (List[FoldReport]): One per subject, in subject-id order.
        mean_accuracy (float): Unweighted mean of the fold accuracies.
    """
    subject_ids = [rec.subject_id for rec in recordings]
    if len(set(subject_ids)) != len(subject_ids):
        raise ValidationError(f"Duplicate subject ids in {sorted(subject_ids)}.")
    if len(subject_ids) < 2:
        raise ValidationError(f"LOSO needs at least 2 subjects, got {len(subject_ids)}.")
    return loso_samples(featurize_recordings(recordings, cfg), cfg)


def mean_accuracy(reports: Sequence[FoldReport]) -> float:
    return float(np.mean([report.accuracy for report in reports]))


def _label_dims(base_cfg: TrainConfig, label_dims: Optional[Sequence[str]]) -> List[str]:
    dims = [validate_label_dim(dim) for dim in (label_dims or [base_cfg.label_dim])]
    if len(set(dims)) != len(dims):
        raise ConfigurationError(f"Label dims repeat: {dims}.")
    return dims


def ablate(
    recordings: Sequence[EegRecording],
    base_cfg: TrainConfig,
    label_dims: Optional[Sequence[str]] = None,
) -> List[AblationRow]:
    """LOSO mean accuracy of each fusion mode, one column per label dim.

    All rows share the seed, the windows and every setting other than the
    fusion mode.

    Returns:
        rows (List[AblationRow]): SDEE-only, TDEE-only, Concat, One-step,
            Two-step, in that order.
    """
    dims = _label_dims(base_cfg, label_dims)
    rows = [AblationRow(name, mode, blocks, {}) for name, mode, blocks in ABLATION_ROWS]
    for dim in dims:
        samples = featurize_recordings(recordings, base_cfg.replace(label_dim=dim))
        for row in rows:
            _, accuracy = loso_samples(samples, base_cfg.replace(label_dim=dim, fusion_mode=row.fusion_mode))
            row.accuracies[dim] = accuracy
            LOGGER.info("Ablation %s / %s: mean accuracy %.4f", row.name, dim, accuracy)
    return rows


def compare_encoders(
    recordings: Sequence[EegRecording],
    base_cfg: TrainConfig,
    label_dims: Optional[Sequence[str]] = None,
) -> List[EncoderRow]:
    """LOSO mean accuracy of the two-step model with a GAT and with a GCN graph encoder."""
    dims = _label_dims(base_cfg, label_dims)
    rows = [EncoderRow(method, kind, {}) for method, kind in ENCODER_ROWS]
    for dim in dims:
        samples = featurize_recordings(recordings, base_cfg.replace(label_dim=dim))
        for row in rows:
            cfg = base_cfg.replace(label_dim=dim, encoder_kind=row.encoder_kind, fusion_mode=model.TWO_STEP)
            _, accuracy = loso_samples(samples, cfg)
            row.accuracies[dim] = accuracy
            LOGGER.info("%s / %s: mean accuracy %.4f", row.method, dim, accuracy)
    return rows
