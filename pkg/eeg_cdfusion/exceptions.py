"""
    Exceptions raised by the eeg_cdfusion package.

    Every error derives from ValueError so that code written against plain
    ValueError keeps working.

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


class EegFusionError(ValueError):
    """Base class for all errors raised by eeg_cdfusion."""


class FormatError(EegFusionError):
    """A file on disk does not follow the expected container or bundle layout."""


class ValidationError(EegFusionError):
    """Data violates an invariant (ratings range, finite samples, class balance)."""


class ConfigurationError(EegFusionError):
    """A parameter or config file value is out of range or unknown."""


class EmptyInputError(EegFusionError):
    """The input signal is too short to produce a single window."""


class ShapeError(EegFusionError):
    """Operands of a differentiable operation have incompatible shapes."""
