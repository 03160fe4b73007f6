"""Exception types shared across the package."""

from __future__ import annotations


class ConfigurationError(ValueError):
    """Invalid parameters, incompatible grids, or malformed inputs."""


class BlowUpError(RuntimeError):
    """A solver produced a non-finite coefficient; carries step diagnostics."""

    def __init__(self, message: str, step: int, time: float, norms: dict | None = None):
        super().__init__(message)
        self.step = step
        self.time = time
        self.norms = dict(norms or {})

    def record(self) -> dict:
        return {
            "error": "blow-up",
            "message": str(self),
            "step": self.step,
            "time": self.time,
            "norms": self.norms,
        }


class FormatError(ValueError):
    """Corrupt or incompatible on-disk artifact (snapshot, table, config)."""
