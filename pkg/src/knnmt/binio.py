"""Little-endian binary read/write helpers with 8-byte section alignment.

Every writer pads each section to a multiple of 8 bytes, so arrays inside the
files can be memory-mapped with their natural alignment.
"""

from __future__ import annotations

import struct
from typing import BinaryIO

import numpy as np

from .errors import FormatError

ALIGN = 8


def pad_len(n: int) -> int:
    return (-n) % ALIGN


class Writer:
    def __init__(self, fh: BinaryIO):
        self.fh = fh
        self.pos = 0

    def raw(self, data: bytes) -> None:
        self.fh.write(data)
        self.pos += len(data)

    def pack(self, fmt: str, *values) -> None:
        self.raw(struct.pack("<" + fmt, *values))

    def align(self) -> None:
        n = pad_len(self.pos)
        if n:
            self.raw(b"\x00" * n)

    def array(self, arr: np.ndarray, dtype) -> None:
        a = np.ascontiguousarray(arr, dtype=np.dtype(dtype).newbyteorder("<"))
        self.raw(a.tobytes())
        self.align()


class Reader:
    """Sequential reader over an in-memory buffer that reports byte offsets on failure."""

    def __init__(self, buf: bytes | memoryview, path=None, base: int = 0):
        self.buf = memoryview(buf)
        self.pos = 0
        self.path = path
        self.base = base

    def fail(self, message: str, offset: int | None = None):
        off = self.pos if offset is None else offset
        raise FormatError(message, offset=self.base + off, path=self.path)

    def take(self, n: int, what: str) -> memoryview:
        if n < 0 or self.pos + n > len(self.buf):
            self.fail(f"truncated file while reading {what} ({n} bytes needed, "
                      f"{len(self.buf) - self.pos} available)")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str, what: str):
        size = struct.calcsize("<" + fmt)
        return struct.unpack("<" + fmt, self.take(size, what))

    def magic(self, expected: bytes) -> None:
        start = self.pos
        got = bytes(self.take(len(expected), "magic"))
        if got != expected:
            self.fail(f"bad magic {got!r}, expected {expected!r}", offset=start)

    def align(self) -> None:
        n = pad_len(self.pos)
        if n:
            self.take(n, "padding")

    def array(self, dtype, count: int, what: str) -> np.ndarray:
        dt = np.dtype(dtype).newbyteorder("<")
        raw = self.take(dt.itemsize * count, what)
        self.align()
        return np.frombuffer(raw, dtype=dt, count=count).astype(np.dtype(dtype), copy=True)

    def at_end(self) -> bool:
        return self.pos == len(self.buf)
