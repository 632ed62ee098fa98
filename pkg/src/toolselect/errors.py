"""Exception hierarchy shared by every module.

Validation failures carry a list of :class:`Issue` so callers (notably the
``validate`` command) can report every violation at once instead of stopping
at the first.
"""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class Issue:
    source: str
    line: int | None
    message: str

    def __str__(self) -> str:
        where = self.source if self.line is None else f"{self.source}:{self.line}"
        return f"{where}: {self.message}"


class ToolSelectError(Exception):
    """Base class for all package errors."""


class ValidationError(ToolSelectError):
    """One or more records violate a domain invariant."""

    def __init__(self, issues: list[Issue] | str):
        if isinstance(issues, str):
            issues = [Issue("<input>", None, issues)]
        self.issues = list(issues)
        super().__init__("; ".join(str(i) for i in self.issues))


class CoverageError(ToolSelectError):
    """A split could not place every test-gold API in the training partition."""

    def __init__(self, apis: list[str]):
        self.apis = list(apis)
        super().__init__("cannot cover test-gold APIs in train: " + ", ".join(self.apis))


class ConfigError(ToolSelectError):
    """Bad run configuration or missing environment (e.g. auth variable)."""


class BackendError(ToolSelectError):
    """A single selection call failed after exhausting retries."""


class ReplayMiss(ToolSelectError):
    """Replay fixture has no entry for a requested (instruction, sample) key."""
