"""Exception types shared across the package."""

from __future__ import annotations


class KnnError(Exception):
    """Base class for all package errors."""


class InvalidArgument(KnnError, ValueError):
    pass


class InvalidState(KnnError, RuntimeError):
    pass


class FormatError(KnnError):
    """A binary file is corrupt, truncated or of the wrong kind."""

    def __init__(self, message: str, offset: int | None = None, path=None):
        self.offset = offset
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}: "
        if offset is not None:
            where += f"at byte {offset}: "
        super().__init__(where + message)


class StorageError(KnnError, OSError):
    pass
