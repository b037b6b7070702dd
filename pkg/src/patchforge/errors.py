"""Exception hierarchy shared by all pipeline stages.

Exit codes: 1 usage/config error, 2 data error, 3 internal invariant
violation. The CLI maps exceptions to exit codes via ``exit_code``.
"""

from __future__ import annotations


class PatchforgeError(Exception):
    exit_code = 3


class UsageError(PatchforgeError):
    """Bad command line arguments or configuration."""

    exit_code = 1


class DataError(PatchforgeError):
    """Malformed or missing input data."""

    exit_code = 2


class LexError(DataError):
    """Lexical error in C source, with the byte offset of the problem."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (offset {offset})")
        self.offset = offset


class NumericsError(PatchforgeError):
    """Non-finite value encountered inside the model."""

    exit_code = 3


class InternalError(PatchforgeError):
    exit_code = 3
