"""
Exception hierarchy for the market simulation engine.

The CLI maps these to exit codes:
- ValidationError -> 1
- ConfigError (and subclasses) -> 2
- NumericError, DomainError -> 3
"""

from typing import Iterable, Optional


class MupsimError(Exception):
    """Base class for all errors raised by mupsim."""


class DomainError(MupsimError, ValueError):
    """An input lies outside the domain of a formula (negative degree, Y <= G1, ...)."""


class ConfigError(MupsimError):
    """Inconsistent or unreadable configuration."""


class MissingArtifactError(ConfigError):
    """An upstream artifact is missing; tells the user which stage to run first."""

    def __init__(self, path: str, stage: str):
        self.path = path
        self.stage = stage
        super().__init__(f"Missing artifact {path}: run `mupsim {stage}` first")


class SchemaError(ConfigError):
    """A table does not carry the columns its reader expects."""

    def __init__(self, table: str, missing: Iterable[str], extra: Optional[Iterable[str]] = None):
        self.table = table
        self.missing = sorted(missing)
        self.extra = sorted(extra or [])
        message = f"Schema mismatch in {table}: missing columns {self.missing}"
        if self.extra:
            message += f", unexpected columns {self.extra}"
        super().__init__(message)


class NumericError(MupsimError):
    """Singular systems, non-finite utilities and other numerical failures."""


class ValidationError(MupsimError):
    """One or more invariants failed in `mupsim validate`."""

    def __init__(self, failures: Iterable[str]):
        self.failures = list(failures)
        super().__init__("; ".join(self.failures) or "validation failed")
