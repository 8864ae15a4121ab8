"""
    Recording bundles and synthetic EEG.

    A recording bundle is a directory holding one subject's data converted to
    the package's tensor container:

        signals.nft   [n_trials, n_channels, n_samples]  (DEAP: [40, 32, 7680])
        ratings.nft   [n_trials, >= 2]  valence, arousal (DEAP: [40, 4])
        meta.txt      subject_id = ..., sample_rate_hz = ...

    Channels are expected in DEAP order and the signal in the 128 Hz
    preprocessed layout. DEAP's own archives are not read here.

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
from typing import List, Optional, Sequence, Union

import numpy as np
from scipy import signal

from eeg_cdfusion import bands, config
from eeg_cdfusion.exceptions import ConfigurationError, FormatError, ValidationError
from eeg_cdfusion.tensor_container import load_tensor, save_tensor

LOGGER = logging.getLogger(__name__)

PathLike = Union[str, Path]

SIGNALS_FILE = "signals.nft"
RATINGS_FILE = "ratings.nft"
META_FILE = "meta.txt"

# self-assessment scale
RATING_MIN = 1.0
RATING_MAX = 9.0
# ratings written for synthetic trials, they binarize to 1 and 0
POSITIVE_RATING = 8.0
NEGATIVE_RATING = 2.0

# synthetic background noise is low-passed to the DEAP bandwidth
LOWPASS_HZ = 45.0
LOWPASS_ORDER = 4
# per-channel background std drawn uniformly from this range (microvolts)
CHANNEL_STD_RANGE_UV = (5.0, 15.0)


@dataclass
class EegRecording:
    """One subject's trials and self-assessment ratings.

    Attributes:
        subject_id (int): Subject number (1-based for DEAP).
        trials (np.ndarray): [n_trials, n_channels, n_samples] microvolt signal.
        sample_rate_hz (float): Sampling rate of trials.
        ratings (np.ndarray): [n_trials, 2] valence and arousal in [1, 9].
    """

    subject_id: int
    trials: np.ndarray
    sample_rate_hz: float
    ratings: np.ndarray

    def __post_init__(self):
        if self.trials.ndim != 3:
            raise ValidationError(
                f"trials must be [n_trials, n_channels, n_samples], got shape {self.trials.shape}."
            )
        if self.trials.shape[1] < 2:
            raise ValidationError(f"Need at least 2 channels, got {self.trials.shape[1]}.")
        if self.sample_rate_hz <= 0:
            raise ValidationError(f"sample_rate_hz must be positive, got {self.sample_rate_hz}.")
        if self.ratings.shape != (self.trials.shape[0], 2):
            raise ValidationError(
                f"ratings shape {self.ratings.shape} does not match {self.trials.shape[0]} trials."
            )
        if not np.all(np.isfinite(self.trials)):
            raise ValidationError(f"Subject {self.subject_id}: signal contains NaN or Inf.")
        if not np.all((self.ratings >= RATING_MIN) & (self.ratings <= RATING_MAX)):
            raise ValidationError(
                f"Subject {self.subject_id}: ratings must lie in [{RATING_MIN}, {RATING_MAX}]."
            )

    @property
    def n_trials(self) -> int:
        return self.trials.shape[0]

    @property
    def n_channels(self) -> int:
        return self.trials.shape[1]

    @property
    def n_samples(self) -> int:
        return self.trials.shape[2]


@dataclass(frozen=True)
class SyntheticSpec:
    """Parameters of a labeled synthetic EEG set.

    Positive trials carry a sinusoid at the center of signal_band on a fixed
    per-subject subset of channels. With effect_strength = 0 the labels are
    independent of the signal.
    """

    n_subjects: int = 8
    n_trials: int = 20
    n_channels: int = 32
    duration_s: float = 4.0
    sample_rate_hz: float = 128.0
    seed: int = 0
    signal_band: str = "alpha"
    effect_strength: float = 3.0

    def __post_init__(self):
        if self.n_subjects < 2:
            raise ConfigurationError(f"n_subjects must be >= 2, got {self.n_subjects}.")
        if self.n_trials < 1:
            raise ConfigurationError(f"n_trials must be >= 1, got {self.n_trials}.")
        if self.n_channels < 2:
            raise ConfigurationError(f"n_channels must be >= 2, got {self.n_channels}.")
        if self.duration_s <= 0 or self.sample_rate_hz <= 0:
            raise ConfigurationError("duration_s and sample_rate_hz must be positive.")
        if not 0 <= self.seed < 2**64:
            raise ConfigurationError(f"seed must be an unsigned 64-bit integer, got {self.seed}.")
        if self.effect_strength < 0:
            raise ConfigurationError(
                f"effect_strength must be >= 0, got {self.effect_strength}."
            )
        center = bands.band_center(self.signal_band)
        if center >= self.sample_rate_hz / 2.0:
            raise ConfigurationError(
                f"Band {self.signal_band} center {center} Hz is above Nyquist."
            )


def load_synthetic_spec(path: PathLike) -> SyntheticSpec:
    """Read a SyntheticSpec from a key = value file."""
    return config.build_dataclass(SyntheticSpec, config.read_key_values(path))


def load_recording(path: PathLike) -> EegRecording:
    """Load and validate one recording bundle.

    Args:
        path (PathLike): Bundle directory containing signals.nft, ratings.nft
            and meta.txt.

    Raises:
        FileNotFoundError: If a bundle file is missing.
        FormatError: On corrupt containers or inconsistent dims.
        ValidationError: On NaN/Inf samples or ratings outside [1, 9].

    Returns:
        recording (EegRecording): The validated recording.
    """
    bundle = Path(path)
    meta = config.read_key_values(bundle / META_FILE)
    try:
        subject_id = int(meta["subject_id"])
        sample_rate_hz = float(meta["sample_rate_hz"])
    except (KeyError, ValueError) as exc:
        raise FormatError(f"{bundle / META_FILE}: need subject_id and sample_rate_hz.") from exc

    trials = load_tensor(bundle / SIGNALS_FILE)
    ratings = load_tensor(bundle / RATINGS_FILE)
    if trials.ndim != 3:
        raise FormatError(f"{bundle / SIGNALS_FILE}: expected rank 3, got dims {trials.shape}.")
    if ratings.ndim != 2 or ratings.shape[0] != trials.shape[0] or ratings.shape[1] < 2:
        raise FormatError(
            f"{bundle / RATINGS_FILE}: dims {ratings.shape} do not match {trials.shape[0]} trials."
        )

    recording = EegRecording(
        subject_id=subject_id,
        trials=trials,
        sample_rate_hz=sample_rate_hz,
        # DEAP ships valence, arousal, dominance, liking; only the first two are used
        ratings=np.ascontiguousarray(ratings[:, :2]),
    )
    LOGGER.debug(
        "Loaded subject %d: %d trials x %d channels x %d samples",
        subject_id, recording.n_trials, recording.n_channels, recording.n_samples,
    )
    return recording


def save_recording(recording: EegRecording, path: PathLike) -> None:
    """Write a recording bundle that load_recording reads back unchanged."""
    bundle = Path(path)
    bundle.mkdir(parents=True, exist_ok=True)
    save_tensor(recording.trials, bundle / SIGNALS_FILE)
    save_tensor(recording.ratings, bundle / RATINGS_FILE)
    meta = {"subject_id": recording.subject_id, "sample_rate_hz": repr(float(recording.sample_rate_hz))}
    (bundle / META_FILE).write_text(config.format_key_values(meta), encoding="utf-8")


def load_recordings(path: PathLike) -> List[EegRecording]:
    """Load every bundle found directly below ``path``, sorted by subject id."""
    root = Path(path)
    recordings = [
        load_recording(child)
        for child in sorted(root.iterdir())
        if child.is_dir() and (child / META_FILE).exists()
    ]
    if not recordings:
        raise FormatError(f"No recording bundles found in {root}.")
    return sorted(recordings, key=lambda rec: rec.subject_id)


def save_recordings(recordings: Sequence[EegRecording], path: PathLike) -> List[Path]:
    """Write one bundle per recording into ``path/sNN``."""
    root = Path(path)
    written = []
    for recording in recordings:
        bundle = root / f"s{recording.subject_id:02d}"
        save_recording(recording, bundle)
        written.append(bundle)
    return written


def _lowpass_sos(sample_rate_hz: float) -> Optional[np.ndarray]:
    if sample_rate_hz / 2.0 <= LOWPASS_HZ:
        LOGGER.warning(
            "Sample rate %.1f Hz cannot resolve a %.0f Hz low-pass; background stays white.",
            sample_rate_hz, LOWPASS_HZ,
        )
        return None
    return signal.butter(LOWPASS_ORDER, LOWPASS_HZ, btype="low", fs=sample_rate_hz, output="sos")


def generate_synthetic(spec: SyntheticSpec) -> List[EegRecording]:
    """Generate labeled synthetic recordings, one per subject.

    Every trial draws a label uniformly. The background is Gaussian white
    noise low-passed at 45 Hz and scaled to a per-channel std. Positive trials
    add a sinusoid at the center frequency of spec.signal_band, with amplitude
    effect_strength times the channel std, on a channel subset fixed per
    subject. Ratings are 8.0 for positive and 2.0 for negative trials in both
    dimensions. The output depends only on spec.

    Args:
        spec (SyntheticSpec): Generation parameters.

    Returns:
        recordings (List[EegRecording]): Subjects 1..n_subjects in order.
    """
    fs = spec.sample_rate_hz
    n_samples = int(round(spec.duration_s * fs))
    freq = bands.band_center(spec.signal_band)
    times = np.arange(n_samples) / fs
    sos = _lowpass_sos(fs)

    recordings = []
    for subject_idx in range(spec.n_subjects):
        rng = np.random.default_rng([spec.seed, subject_idx])
        channel_std = rng.uniform(*CHANNEL_STD_RANGE_UV, size=spec.n_channels)
        active = np.sort(
            rng.choice(spec.n_channels, size=max(1, spec.n_channels // 2), replace=False)
        )
        labels = rng.integers(0, 2, size=spec.n_trials)

        noise = rng.standard_normal((spec.n_trials, spec.n_channels, n_samples))
        if sos is not None:
            noise = signal.sosfiltfilt(sos, noise, axis=-1)
        noise_std = noise.std(axis=-1, keepdims=True)
        noise = noise / np.where(noise_std > 0, noise_std, 1.0)
        trials = noise * channel_std[None, :, None]

        phases = rng.uniform(0.0, 2.0 * np.pi, size=(spec.n_trials, active.size))
        amplitude = spec.effect_strength * channel_std[active]
        sinusoid = amplitude[None, :, None] * np.sin(
            2.0 * np.pi * freq * times[None, None, :] + phases[:, :, None]
        )
        positive = labels == 1
        trials[np.ix_(positive, active)] += sinusoid[positive]

        ratings = np.where(positive, POSITIVE_RATING, NEGATIVE_RATING)
        recordings.append(
            EegRecording(
                subject_id=subject_idx + 1,
                trials=trials,
                sample_rate_hz=fs,
                ratings=np.repeat(ratings[:, None], 2, axis=1).astype(np.float64),
            )
        )
        LOGGER.debug(
            "Synthetic subject %d: %d positive of %d trials, active channels %s",
            subject_idx + 1, int(positive.sum()), spec.n_trials, active.tolist(),
        )
    return recordings
