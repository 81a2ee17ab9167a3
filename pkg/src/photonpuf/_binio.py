"""Small helpers for the fixed little-endian binary containers.

Every on-disk artifact in this package starts with a 4 byte magic string and is
parsed through :class:`Reader` so that bad magic, unknown versions and short
reads surface as distinct exceptions.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import BadMagicError, TruncatedError, UnsupportedVersionError


def pack_bits(bits) -> bytes:
    """Pack a 0/1 array into bytes, least significant bit first."""
    arr = np.asarray(bits, dtype=np.uint8).ravel()
    return np.packbits(arr, bitorder="little").tobytes()


def unpack_bits(data: bytes, n: int) -> np.ndarray:
    """Inverse of :func:`pack_bits`; returns exactly ``n`` bits."""
    if len(data) * 8 < n:
        raise TruncatedError(f"need {n} bits, got {len(data) * 8}")
    arr = np.unpackbits(np.frombuffer(data, dtype=np.uint8), bitorder="little")
    return arr[:n].copy()


def packed_size(n_bits: int) -> int:
    return (n_bits + 7) // 8


class Reader:
    """Cursor over immutable bytes with truncation-checked reads."""

    def __init__(self, data: bytes):
        self._data = data
        self._pos = 0

    def take(self, n: int) -> bytes:
        if self._pos + n > len(self._data):
            raise TruncatedError(
                f"need {n} bytes at offset {self._pos}, only {len(self._data) - self._pos} left"
            )
        out = self._data[self._pos : self._pos + n]
        self._pos += n
        return out

    def unpack(self, fmt: str):
        vals = struct.unpack("<" + fmt, self.take(struct.calcsize("<" + fmt)))
        return vals[0] if len(vals) == 1 else vals

    def expect_magic(self, magic: bytes, what: str):
        got = self.take(len(magic))
        if got != magic:
            raise BadMagicError(f"not a {what} container (magic {got!r}, expected {magic!r})")

    def expect_version(self, supported: int, what: str):
        version = self.unpack("H")
        if version != supported:
            raise UnsupportedVersionError(f"{what} container version {version} not supported")
        return version

    def remaining(self) -> int:
        return len(self._data) - self._pos

    def done(self) -> bool:
        return self._pos == len(self._data)


def le(fmt: str, *vals) -> bytes:
    return struct.pack("<" + fmt, *vals)
