"""Exception hierarchy shared by every faultsim module."""

from pathlib import Path
from typing import List, Optional


class FaultsimError(Exception):
    """Base class for all faultsim errors."""


class ScenarioParseError(FaultsimError, ValueError):
    def __init__(self, line_no: int, line: str, message: str) -> None:
        self.line_no = line_no
        self.line = line
        super().__init__(f"line {line_no}: {message}: {line.strip()!r}")


class ScenarioValidationError(FaultsimError, ValueError):
    def __init__(self, violations: List[str]) -> None:
        self.violations = list(violations)
        super().__init__("invalid scenario: " + "; ".join(self.violations))


class ClusterDownError(FaultsimError, RuntimeError):
    """No live worker is left to own tasks."""


class SchedulerError(FaultsimError, RuntimeError):
    """Internal scheduling inconsistency, e.g. killing a worker that is already dead."""


class DetectorError(FaultsimError, ValueError):
    pass


class MetricsFormatError(FaultsimError, ValueError):
    def __init__(self, path: Path, row: Optional[int], message: str) -> None:
        self.path = Path(path)
        self.row = row
        where = f"{self.path}" if row is None else f"{self.path}:{row}"
        super().__init__(f"{where}: {message}")


class ArtifactError(FaultsimError, RuntimeError):
    def __init__(self, path: Path, message: str) -> None:
        self.path = Path(path)
        super().__init__(f"{self.path}: {message}")


class EmptySelectionError(FaultsimError, ValueError):
    """A statistic was requested over no samples."""
