"""Exception hierarchy shared by the lab modules.

Contract errors derive from ``ValueError`` and numeric failures from
``ArithmeticError`` so the command line can map them onto exit codes 2
and 1 respectively.
"""
from __future__ import annotations

from typing import Optional


class EGFLError(Exception):
    """Base class for every error raised by the lab."""


class InputShapeError(EGFLError, ValueError):
    pass


class ArchitectureMismatchError(EGFLError, ValueError):
    pass


class UndefinedRecallError(EGFLError, ValueError):
    pass


class NonStochasticMatrixError(EGFLError, ValueError):
    pass


class GenerationError(EGFLError, ValueError):
    pass


class BoundDomainError(EGFLError, ValueError):
    pass


class ConfigError(EGFLError, ValueError):
    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


class DataParseError(EGFLError, ValueError):
    def __init__(self, path: str, line: Optional[int], message: str):
        where = f"{path}:{line}" if line is not None else path
        super().__init__(f"{where}: {message}")
        self.path = path
        self.line = line


class NumericOverflowError(EGFLError, ArithmeticError):
    def __init__(self, layer: int, message: str = "non-finite intermediate"):
        super().__init__(f"layer {layer}: {message}")
        self.layer = layer


class OracleDivergenceError(EGFLError, ArithmeticError):
    pass


class ClientTrainingError(EGFLError):
    """A failure inside one (BS, slice) client, tagged with its indices."""

    def __init__(self, k: int, n: int, cause: BaseException):
        super().__init__(f"client (k={k}, n={n}) failed: {type(cause).__name__}: {cause}")
        self.k = k
        self.n = n
        self.cause = cause


class MultiplierOverflowError(EGFLError, ArithmeticError):
    pass
