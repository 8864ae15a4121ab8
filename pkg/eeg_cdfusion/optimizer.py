"""
    Adam optimizer over a flat name -> array parameter mapping.

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

from dataclasses import dataclass, field
from typing import Dict, Mapping, Optional

import numpy as np

from eeg_cdfusion.exceptions import ConfigurationError, ShapeError

DEFAULT_LR = 0.001


@dataclass
class AdamState:
    """Moment estimates and hyperparameters of Adam.

    Attributes:
        lr (float): Learning rate. Defaults to 0.001.
        beta1 (float): First-moment decay. Defaults to 0.9.
        beta2 (float): Second-moment decay. Defaults to 0.999.
        eps (float): Denominator floor. Defaults to 1e-8.
        step (int): Number of updates applied so far.
        m (Dict[str, np.ndarray]): First moments, keyed like the parameters.
        v (Dict[str, np.ndarray]): Second moments, keyed like the parameters.
    """

    lr: float = DEFAULT_LR
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.lr < 0:
            raise ConfigurationError(f"Learning rate must be >= 0, got {self.lr}.")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigurationError("Adam betas must lie in [0, 1).")


def adam_step(
    params: Mapping[str, np.ndarray],
    grads: Mapping[str, Optional[np.ndarray]],
    state: AdamState,
) -> AdamState:
    """Apply one bias-corrected Adam update to params, in place.

    Args:
        params (Mapping[str, np.ndarray]): Parameter arrays, updated in place.
        grads (Mapping[str, Optional[np.ndarray]]): Gradient per parameter
            name. Missing or None gradients count as zero.
        state (AdamState): Optimizer state, updated in place.

    Returns:
        state (AdamState): The same state object, step incremented.
    """
    state.step += 1
    correction1 = 1.0 - state.beta1**state.step
    correction2 = 1.0 - state.beta2**state.step
    for name, value in params.items():
        grad = grads.get(name)
        if grad is None:
            grad = np.zeros_like(value)
        if grad.shape != value.shape:
            raise ShapeError(f"Gradient of {name} has shape {grad.shape}, expected {value.shape}.")
        m = state.m.setdefault(name, np.zeros_like(value))
        v = state.v.setdefault(name, np.zeros_like(value))
        m *= state.beta1
        m += (1.0 - state.beta1) * grad
        v *= state.beta2
        v += (1.0 - state.beta2) * grad * grad
        value -= state.lr * (m / correction1) / (np.sqrt(v / correction2) + state.eps)
    return state
