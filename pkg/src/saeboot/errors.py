"""Exception types shared across the package."""

from __future__ import annotations


class SingularDesignError(ValueError):
    """Design matrix is rank deficient."""


class DegenerateQuantileError(ValueError):
    """A bootstrap replicate column collapsed to a single value."""


class ReplicateFailureError(RuntimeError):
    """A bootstrap replicate failed to refit even after one retry."""

    def __init__(self, replicate: int, message: str = "") -> None:
        self.replicate = replicate
        super().__init__(message or f"bootstrap replicate {replicate} failed to refit")


class ConfigFileError(ValueError):
    """A scenario configuration file is malformed or has unknown keys."""

    def __init__(self, message: str, unknown_keys: list[str] | None = None) -> None:
        self.unknown_keys = unknown_keys or []
        super().__init__(message)
