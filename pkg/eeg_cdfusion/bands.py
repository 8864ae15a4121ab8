"""
    EEG frequency bands used for the differential-entropy features.

    Standard clinical bands truncated at 45 Hz, the upper edge of the
    preprocessed DEAP recordings. Delta is close to empty on that data but is
    kept so the feature vector always has five entries.

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
from typing import Tuple

from eeg_cdfusion.exceptions import ConfigurationError

Band = Tuple[str, float, float]

DEFAULT_BANDS: Tuple[Band, ...] = (
    ("delta", 1.0, 4.0),
    ("theta", 4.0, 8.0),
    ("alpha", 8.0, 13.0),
    ("beta", 13.0, 30.0),
    ("gamma", 30.0, 45.0),
)


@dataclass(frozen=True)
class BandSet:
    """Ordered list of (name, f_lo_hz, f_hi_hz) frequency bands."""

    bands: Tuple[Band, ...] = DEFAULT_BANDS

    def __post_init__(self):
        if not self.bands:
            raise ConfigurationError("A BandSet needs at least one band.")
        for name, f_lo, f_hi in self.bands:
            if not 0.0 <= f_lo < f_hi:
                raise ConfigurationError(
                    f"Band {name} has invalid edges [{f_lo}, {f_hi})."
                )
        ordered = sorted(self.bands, key=lambda band: band[1])
        for (name_a, _, hi_a), (name_b, lo_b, _) in zip(ordered, ordered[1:]):
            if lo_b < hi_a:
                raise ConfigurationError(f"Bands {name_a} and {name_b} overlap.")

    @property
    def names(self) -> Tuple[str, ...]:
        return tuple(band[0] for band in self.bands)

    @property
    def f_max(self) -> float:
        return max(band[2] for band in self.bands)

    def __len__(self) -> int:
        return len(self.bands)


def lookup_band(name: str, band_set: BandSet = BandSet()) -> Band:
    """Looks up a band by name.

    Args:
        name (str): Band name, e.g. "alpha". Case and surrounding blanks are ignored.
        band_set (BandSet): Bands to search. Defaults to the five standard bands.

    Raises:
        ConfigurationError: If no band has the given name.

    Returns:
        band (Band): The (name, f_lo_hz, f_hi_hz) entry.
    """
    sanitized = name.lower().strip()
    try:
        return {band[0]: band for band in band_set.bands}[sanitized]
    except KeyError as exc:
        raise ConfigurationError(
            f"Band {name} is not one of {band_set.names}."
        ) from exc


def band_center(name: str, band_set: BandSet = BandSet()) -> float:
    """Center frequency in Hz of the named band."""
    _, f_lo, f_hi = lookup_band(name, band_set)
    return 0.5 * (f_lo + f_hi)
