"""
    Binary tensor container used for every array the package writes to disk.

    Layout (all little-endian):
        8 bytes   magic ``NFTENSR1``
        u8        dtype code (0 = float32, 1 = float64)
        u8        rank
        rank x u64  dims
        payload   row-major values
        u32       CRC32 of the payload

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

import struct
import zlib
from pathlib import Path
from typing import Union

import numpy as np

from eeg_cdfusion.exceptions import FormatError, ValidationError

MAGIC = b"NFTENSR1"

# dtype code -> little-endian numpy dtype
DTYPE_LOOKUP = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
DTYPE_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}

_PREAMBLE = struct.Struct("<8sBB")
_DIM = struct.Struct("<Q")
_CRC = struct.Struct("<I")

PathLike = Union[str, Path]


def encode_tensor(tensor: np.ndarray) -> bytes:
    """Serialize a float32/float64 array into container bytes.

    Args:
        tensor (np.ndarray): Array to encode. Must be float32 or float64 and
            contain only finite values.

    Returns:
        blob (bytes): The encoded container.
    """
    arr = np.asarray(tensor)
    try:
        code = DTYPE_CODES[arr.dtype]
    except KeyError as exc:
        raise FormatError(
            f"dtype {arr.dtype} is not supported, use float32 or float64."
        ) from exc
    if not np.all(np.isfinite(arr)):
        raise ValidationError("Refusing to store a tensor with NaN or Inf values.")
    if arr.ndim > 255:
        raise FormatError(f"Rank {arr.ndim} does not fit in the container header.")

    payload = np.ascontiguousarray(arr, dtype=DTYPE_LOOKUP[code]).tobytes(order="C")
    header = _PREAMBLE.pack(MAGIC, code, arr.ndim) + b"".join(
        _DIM.pack(dim) for dim in arr.shape
    )
    return header + payload + _CRC.pack(zlib.crc32(payload))


def decode_tensor(blob: bytes) -> np.ndarray:
    """Decode container bytes, verifying magic, length and checksum.

    Args:
        blob (bytes): The encoded container.

    Returns:
        tensor (np.ndarray): Decoded array in native byte order.
    """
    if len(blob) < _PREAMBLE.size + _CRC.size:
        raise FormatError(f"Container of {len(blob)} bytes is too short.")
    magic, code, rank = _PREAMBLE.unpack_from(blob, 0)
    if magic != MAGIC:
        raise FormatError(f"Bad magic {magic!r}, expected {MAGIC!r}.")
    if code not in DTYPE_LOOKUP:
        raise FormatError(f"Unknown dtype code {code}.")
    dtype = DTYPE_LOOKUP[code]

    offset = _PREAMBLE.size
    if len(blob) < offset + rank * _DIM.size + _CRC.size:
        raise FormatError("Container truncated inside the dims header.")
    dims = tuple(
        _DIM.unpack_from(blob, offset + i * _DIM.size)[0] for i in range(rank)
    )
    offset += rank * _DIM.size

    n_bytes = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize
    if len(blob) != offset + n_bytes + _CRC.size:
        raise FormatError(
            f"Payload length {len(blob) - offset - _CRC.size} does not match "
            f"dims {dims} ({n_bytes} bytes expected)."
        )
    payload = blob[offset : offset + n_bytes]
    (stored_crc,) = _CRC.unpack_from(blob, offset + n_bytes)
    if zlib.crc32(payload) != stored_crc:
        raise FormatError("Checksum mismatch, the payload is corrupt.")

    tensor = np.frombuffer(payload, dtype=dtype).reshape(dims)
    return tensor.astype(dtype.newbyteorder("="), copy=True)


def save_tensor(tensor: np.ndarray, path: PathLike) -> None:
    """Write an array to ``path`` as a tensor container."""
    Path(path).write_bytes(encode_tensor(tensor))


def load_tensor(path: PathLike) -> np.ndarray:
    """Read a tensor container written by save_tensor."""
    return decode_tensor(Path(path).read_bytes())
