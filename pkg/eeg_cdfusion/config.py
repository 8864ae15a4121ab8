"""
    Flat ``key = value`` configuration files.

    The same format is used for training configs, synthetic-data specs and
    the ``meta.txt`` file of a recording bundle. Lines starting with ``#`` and
    blank lines are ignored. Values are coerced to the field types of the
    dataclass they are loaded into.

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
import typing
from pathlib import Path
from typing import Any, Dict, Mapping, Type, TypeVar, Union

from eeg_cdfusion.exceptions import ConfigurationError

T = TypeVar("T")

PathLike = Union[str, Path]


def parse_key_values(text: str) -> Dict[str, str]:
    """Parse ``key = value`` lines into an ordered dict of strings."""
    values = {}
    for line_no, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"Line {line_no}: expected key = value, got {raw_line!r}.")
        key, value = line.split("=", 1)
        key = key.strip()
        if not key:
            raise ConfigurationError(f"Line {line_no}: empty key.")
        values[key] = value.strip()
    return values


def read_key_values(path: PathLike) -> Dict[str, str]:
    """Read a ``key = value`` file from disk."""
    return parse_key_values(Path(path).read_text(encoding="utf-8"))


def format_key_values(values: Mapping[str, Any]) -> str:
    """Inverse of parse_key_values. Tuples are written as comma lists."""
    lines = []
    for key, value in values.items():
        if isinstance(value, (tuple, list)):
            value = ",".join(str(item) for item in value)
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"


def _coerce(raw: str, field_type: Any, key: str) -> Any:
    origin = typing.get_origin(field_type)
    try:
        if origin is tuple:
            (item_type, *_rest) = typing.get_args(field_type)
            return tuple(_coerce(item.strip(), item_type, key) for item in raw.split(",") if item.strip())
        if field_type is bool:
            lowered = raw.lower()
            if lowered not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return lowered in ("true", "1", "yes")
        if field_type in (int, float, str):
            return field_type(raw)
    except ValueError as exc:
        raise ConfigurationError(f"Config key {key}: cannot read {raw!r} as {field_type}.") from exc
    raise ConfigurationError(f"Config key {key}: unsupported field type {field_type}.")


def build_dataclass(cls: Type[T], values: Mapping[str, str]) -> T:
    """Instantiate a config dataclass from string values.

    Args:
        cls (Type[T]): Dataclass to build. Fields not present in values keep
            their defaults.
        values (Mapping[str, str]): Parsed key/value strings.

    Raises:
        ConfigurationError: If a key is not a field of cls or a value cannot be
            coerced to the field type.

    Returns:
        config (T): The populated dataclass.
    """
    hints = typing.get_type_hints(cls)
    field_names = {field.name for field in dataclasses.fields(cls) if field.init}
    unknown = sorted(set(values) - field_names)
    if unknown:
        raise ConfigurationError(f"Unknown config keys {unknown} for {cls.__name__}.")
    kwargs = {key: _coerce(raw, hints[key], key) for key, raw in values.items()}
    return cls(**kwargs)


def dataclass_to_values(config: Any) -> Dict[str, Any]:
    """Field name -> value mapping of a config dataclass, in field order."""
    return {field.name: getattr(config, field.name) for field in dataclasses.fields(config)}
