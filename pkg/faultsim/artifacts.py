"""Run directory layout and atomic file writes."""

import logging
import os
import tempfile
from pathlib import Path
from typing import Iterable, List, Sequence, Union

from faultsim.errors import ArtifactError

logger = logging.getLogger("FAULTSIM.artifacts")

SCENARIO_FILE = "scenario.conf"
METRICS_FILE = "metrics.csv"
CPU_FILE = "cpu.csv"
FAILURES_FILE = "failures.csv"
RECOVERY_FILE = "recovery.csv"
CONVERGENCE_FILE = "convergence.csv"
EVENTS_FILE = "events.log"

RUN_FILES = (
    SCENARIO_FILE,
    METRICS_FILE,
    CPU_FILE,
    FAILURES_FILE,
    RECOVERY_FILE,
    CONVERGENCE_FILE,
    EVENTS_FILE,
)


def ensure_dir(path: Union[str, Path]) -> Path:
    target = Path(path)
    try:
        target.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ArtifactError(target, f"cannot create directory ({exc.strerror or exc})") from exc
    return target


def write_text_atomic(path: Union[str, Path], text: str) -> Path:
    """Write ``text`` to a temp file next to ``path`` and rename it into place."""
    target = Path(path)
    ensure_dir(target.parent)
    fd = None
    tmp_name = None
    try:
        fd, tmp_name = tempfile.mkstemp(prefix=f".{target.name}.", suffix=".tmp", dir=target.parent)
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as handle:
            fd = None
            handle.write(text)
        os.replace(tmp_name, target)
        tmp_name = None
    except OSError as exc:
        raise ArtifactError(target, f"write failed ({exc.strerror or exc})") from exc
    finally:
        if fd is not None:
            os.close(fd)
        if tmp_name is not None and os.path.exists(tmp_name):
            os.unlink(tmp_name)
    logger.debug("wrote %s (%d bytes)", target, len(text))
    return target


def render_csv(header: Sequence[str], rows: Iterable[Sequence[str]]) -> str:
    # Fields are pre-formatted; none of them may contain a comma.
    lines: List[str] = [",".join(header)]
    lines.extend(",".join(row) for row in rows)
    return "\n".join(lines) + "\n"


def write_csv_atomic(
    path: Union[str, Path],
    header: Sequence[str],
    rows: Iterable[Sequence[str]],
) -> Path:
    return write_text_atomic(path, render_csv(header, rows))


def read_text(path: Union[str, Path]) -> str:
    target = Path(path)
    try:
        return target.read_text(encoding="utf-8")
    except FileNotFoundError as exc:
        raise ArtifactError(target, "missing file") from exc
    except OSError as exc:
        raise ArtifactError(target, f"read failed ({exc.strerror or exc})") from exc


def missing_run_files(run_dir: Union[str, Path], required: Sequence[str] = RUN_FILES) -> List[str]:
    base = Path(run_dir)
    return [name for name in required if not (base / name).is_file()]
