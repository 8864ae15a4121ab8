"""
    Windowing and differential-entropy features.

    Each trial is cut into overlapping windows (2 s wide, 0.125 s hop by
    default). For every window the raw slice is standardized per channel and
    a five-band differential-entropy (DE) vector is computed per channel from
    a Hann-windowed STFT power spectrum.

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
from typing import List, Sequence, Tuple, Union

import numpy as np
from scipy import signal

from eeg_cdfusion.bands import BandSet
from eeg_cdfusion.dataset_io import EegRecording
from eeg_cdfusion.exceptions import ConfigurationError, EmptyInputError, FormatError
from eeg_cdfusion.tensor_container import load_tensor, save_tensor

LOGGER = logging.getLogger(__name__)

PathLike = Union[str, Path]

# STFT sub-window: 1 Hz resolution at 128 Hz, 50% overlap
STFT_SUBWINDOW = 128
STFT_HOP = 64
# lower clamp on band power before the log
DE_EPSILON = 1e-12
# ratings strictly above the scale midpoint are positive
LABEL_THRESHOLD = 5.0
# standardization floor for flat channels
STD_FLOOR = 1e-12

LABEL_COLUMNS = {"valence": 0, "arousal": 1}

RAW_FILE = "raw.nft"
DE_FILE = "de.nft"
LABELS_FILE = "labels.nft"
INDEX_FILE = "index.txt"


@dataclass(frozen=True)
class WindowConfig:
    """Sliding window geometry in seconds."""

    window_s: float = 2.0
    hop_s: float = 0.125
    sample_rate_hz: float = 128.0

    def __post_init__(self):
        if not 0 < self.hop_s <= self.window_s:
            raise ConfigurationError(
                f"Need 0 < hop_s <= window_s, got hop {self.hop_s}, window {self.window_s}."
            )
        width = self.window_s * self.sample_rate_hz
        if width < 1 or not np.isclose(width, round(width)):
            raise ConfigurationError(
                f"window_s * sample_rate_hz = {width} is not a positive integer."
            )
        if int(round(self.hop_s * self.sample_rate_hz)) < 1:
            raise ConfigurationError(f"hop_s {self.hop_s} is shorter than one sample.")

    @property
    def width(self) -> int:
        return int(round(self.window_s * self.sample_rate_hz))

    @property
    def hop(self) -> int:
        return int(round(self.hop_s * self.sample_rate_hz))


@dataclass
class FeatureSample:
    """One windowed example.

    Attributes:
        raw (np.ndarray): [n_channels, window_len] standardized raw window.
        de (np.ndarray): [n_channels, n_bands] differential entropy in nats.
        label (int): 0 or 1.
        subject_id (int): Subject the window came from.
        trial_id (int): Trial index within the subject.
        window_id (int): Window index within the trial.
    """

    raw: np.ndarray
    de: np.ndarray
    label: int
    subject_id: int
    trial_id: int
    window_id: int = 0


def validate_label_dim(label_dim: str) -> str:
    sanitized = label_dim.lower().strip()
    if sanitized not in LABEL_COLUMNS:
        raise ConfigurationError(f"Label dim {label_dim} not one of {tuple(LABEL_COLUMNS)}.")
    return sanitized


def sliding_windows(sig: np.ndarray, cfg: WindowConfig) -> np.ndarray:
    """Cut a [C, N] signal into windows.

    Window k covers samples [k*H, k*H + W). There are floor((N - W) / H) + 1
    windows.

    Args:
        sig (np.ndarray): [C, N] signal.
        cfg (WindowConfig): Window geometry.

    Raises:
        EmptyInputError: If N < W.

    Returns:
        windows (np.ndarray): [n_windows, C, W] copy of the windows.
    """
    width, hop = cfg.width, cfg.hop
    if sig.shape[-1] < width:
        raise EmptyInputError(f"Signal of {sig.shape[-1]} samples is shorter than a {width}-sample window.")
    view = np.lib.stride_tricks.sliding_window_view(sig, width, axis=-1)[..., ::hop, :]
    # view is [C, n_windows, W]
    return np.ascontiguousarray(np.moveaxis(view, -2, 0))


def power_spectrum(window: np.ndarray, fs: float) -> Tuple[np.ndarray, np.ndarray]:
    """STFT power spectral density averaged over Hann sub-windows.

    Returns:
        freqs (np.ndarray): Bin center frequencies.
        psd (np.ndarray): [..., n_freqs] one-sided density.
    """
    if window.shape[-1] < STFT_SUBWINDOW:
        raise EmptyInputError(
            f"Window of {window.shape[-1]} samples is shorter than the {STFT_SUBWINDOW}-sample STFT."
        )
    return signal.welch(
        window,
        fs=fs,
        window="hann",
        nperseg=STFT_SUBWINDOW,
        noverlap=STFT_SUBWINDOW - STFT_HOP,
        detrend=False,
        scaling="density",
        average="mean",
        axis=-1,
    )


def band_power(window: np.ndarray, fs: float, band_set: BandSet = BandSet()) -> np.ndarray:
    """Power per channel and band.

    Sums the PSD bins whose center lies in [f_lo, f_hi), times the bin width,
    so that a band's power is its share of the signal variance. Leading
    dimensions are kept, so a stack of windows [S, C, W] gives [S, C, B].

    Args:
        window (np.ndarray): [..., C, W] samples.
        fs (float): Sampling rate in Hz.
        band_set (BandSet): Bands to integrate.

    Raises:
        ConfigurationError: If a band reaches above fs / 2.

    Returns:
        powers (np.ndarray): [..., C, B], all >= 0.
    """
    if band_set.f_max > fs / 2.0:
        raise ConfigurationError(
            f"Band edge {band_set.f_max} Hz is above Nyquist for fs = {fs} Hz."
        )
    freqs, psd = power_spectrum(window, fs)
    df = freqs[1] - freqs[0]
    masks = np.stack([(freqs >= f_lo) & (freqs < f_hi) for _, f_lo, f_hi in band_set.bands], axis=-1)
    return psd @ masks.astype(psd.dtype) * df


def differential_entropy(power) -> np.ndarray:
    """DE of a Gaussian band signal with variance ``power``: 0.5 * ln(2*pi*e*p).

    Powers below 1e-12 are clamped, so numerically empty bands stay finite.
    """
    clamped = np.maximum(np.asarray(power, dtype=np.float64), DE_EPSILON)
    return 0.5 * np.log(2.0 * np.pi * np.e * clamped)


def standardize(windows: np.ndarray) -> np.ndarray:
    """Zero mean, unit variance per channel within each window."""
    mean = windows.mean(axis=-1, keepdims=True)
    std = windows.std(axis=-1, keepdims=True)
    return (windows - mean) / np.maximum(std, STD_FLOOR)


def binarize_ratings(ratings: np.ndarray, label_dim: str) -> np.ndarray:
    """1 where the chosen rating is strictly above 5.0, else 0."""
    column = LABEL_COLUMNS[validate_label_dim(label_dim)]
    return (ratings[:, column] > LABEL_THRESHOLD).astype(np.int64)


def featurize(
    rec: EegRecording,
    cfg: WindowConfig,
    band_set: BandSet = BandSet(),
    label_dim: str = "valence",
) -> List[FeatureSample]:
    """One FeatureSample per (trial, window) of a recording.

    Args:
        rec (EegRecording): Source recording. Its sample rate overrides
            cfg.sample_rate_hz.
        cfg (WindowConfig): Window geometry.
        band_set (BandSet): DE bands.
        label_dim (str): "valence" or "arousal".

    Returns:
        samples (List[FeatureSample]): Trial-major, window-minor order.
    """
    if cfg.sample_rate_hz != rec.sample_rate_hz:
        cfg = WindowConfig(cfg.window_s, cfg.hop_s, rec.sample_rate_hz)
    labels = binarize_ratings(rec.ratings, label_dim)

    samples = []
    for trial_id in range(rec.n_trials):
        windows = sliding_windows(rec.trials[trial_id], cfg)
        de = differential_entropy(band_power(windows, rec.sample_rate_hz, band_set))
        raw = standardize(windows).astype(np.float32)
        samples.extend(
            FeatureSample(
                raw=raw[k],
                de=de[k],
                label=int(labels[trial_id]),
                subject_id=rec.subject_id,
                trial_id=trial_id,
                window_id=k,
            )
            for k in range(windows.shape[0])
        )
    LOGGER.debug("Subject %d: %d feature samples", rec.subject_id, len(samples))
    return samples


def stack_samples(samples: Sequence[FeatureSample]) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Batched arrays raw [S, C, W], de [S, C, B] and labels [S]."""
    raw = np.stack([sample.raw for sample in samples])
    de = np.stack([sample.de for sample in samples])
    labels = np.array([sample.label for sample in samples], dtype=np.int64)
    return raw, de, labels


def save_features(samples: Sequence[FeatureSample], path: PathLike) -> None:
    """Write a feature cache: raw.nft, de.nft, labels.nft and index.txt."""
    cache = Path(path)
    cache.mkdir(parents=True, exist_ok=True)
    raw, de, labels = stack_samples(samples)
    save_tensor(raw, cache / RAW_FILE)
    save_tensor(de, cache / DE_FILE)
    save_tensor(labels.astype(np.float64), cache / LABELS_FILE)
    lines = [
        f"{i}\t{s.subject_id}\t{s.trial_id}\t{s.window_id}" for i, s in enumerate(samples)
    ]
    (cache / INDEX_FILE).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_features(path: PathLike) -> List[FeatureSample]:
    """Read a feature cache written by save_features."""
    cache = Path(path)
    raw = load_tensor(cache / RAW_FILE)
    de = load_tensor(cache / DE_FILE)
    labels = load_tensor(cache / LABELS_FILE)
    index = [
        line.split("\t")
        for line in (cache / INDEX_FILE).read_text(encoding="utf-8").splitlines()
        if line.strip()
    ]
    if not raw.shape[0] == de.shape[0] == labels.shape[0] == len(index):
        raise FormatError(f"{cache}: sample counts of raw, de, labels and index disagree.")
    samples = []
    for i, fields in enumerate(index):
        if len(fields) != 4:
            raise FormatError(f"{cache / INDEX_FILE}: malformed line {i + 1}.")
        _, subject_id, trial_id, window_id = (int(field) for field in fields)
        samples.append(
            FeatureSample(
                raw=raw[i],
                de=de[i],
                label=int(labels[i]),
                subject_id=subject_id,
                trial_id=trial_id,
                window_id=window_id,
            )
        )
    return samples
