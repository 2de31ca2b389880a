"""
title: Factorial Inference - shared module (constants, errors, logging)
version: 0.1.0
license: MIT
"""

import logging
import sys


class Config:
    MAX_K = 16
    ENUMERATION_GUARD = 10**7
    RNG_ALGORITHM = "numpy.random.PCG64"

    # Equality of floating quantities is relative, zero checks are absolute
    REL_TOL = 1e-10
    ABS_TOL = 1e-12

    LOG_FORMAT = "%(levelprefix)s %(name)s - %(message)s"


class FactorialError(Exception):
    pass


class DomainError(FactorialError, ValueError):
    pass


class EnumerationGuardError(DomainError):
    def __init__(self, count: int, guard: int):
        self.count = count
        self.guard = guard
        super().__init__(
            f"Refusing to enumerate {count:,} assignments (guard is {guard:,})"
        )


class ConsistencyError(FactorialError):
    pass


class InputFileError(FactorialError):
    def __init__(self, path, message: str, line: int | None = None):
        self.path = str(path)
        self.line = line
        location = f"{self.path}, line {line}" if line is not None else self.path
        super().__init__(f"{location}: {message}")


class UsageError(FactorialError):
    pass


class CheckFailure(FactorialError):
    pass


class PrefixFormatter(logging.Formatter):
    """Renders records as 'DEBUG:    module - message'."""

    def format(self, record: logging.LogRecord) -> str:
        record.levelprefix = f"{record.levelname + ':':<9}"
        return super().format(record)


def get_logger(name: str) -> logging.Logger:
    return logging.getLogger(name)


def configure_logging(debug: bool = False) -> None:
    root = logging.getLogger("factorial_inference")

    handlers = [h for h in root.handlers if getattr(h, "_factorial_handler", False)]
    if handlers:
        handlers[0].stream = sys.stderr
    else:
        handler = logging.StreamHandler(sys.stderr)
        handler.setFormatter(PrefixFormatter(Config.LOG_FORMAT))
        handler._factorial_handler = True
        root.addHandler(handler)
        root.propagate = False

    root.setLevel(logging.DEBUG if debug else logging.INFO)


def validate_k(k: int) -> int:
    if isinstance(k, bool) or int(k) != k:
        raise DomainError(f"Number of factors must be an integer, got {k!r}")
    k = int(k)
    if not 1 <= k <= Config.MAX_K:
        raise DomainError(f"Number of factors must be in 1..{Config.MAX_K}, got {k}")
    return k


def k_from_treatment_count(count: int) -> int:
    """Inverse of 2**K; raises when count is not a power of two >= 2."""
    if count < 2 or count & (count - 1):
        raise DomainError(
            f"Number of treatment combinations must be a power of two >= 2, got {count}"
        )
    return validate_k(count.bit_length() - 1)
