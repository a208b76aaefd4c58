"""Execute one simulation into a self-describing run directory."""

import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

from faultsim import artifacts
from faultsim.detector import build_report, write_recovery_csv
from faultsim.engine import run
from faultsim.metrics import export_csv, ledger_summary
from faultsim.scenario import ScenarioConfig, run_detector, serialize
from faultsim.types import RecoveryReport, RunArtifacts

logger = logging.getLogger("FAULTSIM.runner")


@dataclass
class RunResult:
    directory: Path
    artifacts: RunArtifacts
    report: RecoveryReport
    files: List[Path] = field(default_factory=list)

    def summary(self) -> Dict[str, Any]:
        return {
            "directory": str(self.directory),
            "scenario": self.artifacts.config.name,
            "seed": self.artifacts.seed,
            "failures": len(self.artifacts.failures),
            "recovery": self.report.summary(),
            "ledger": ledger_summary(self.artifacts.ledger),
        }


def execute_run(config: ScenarioConfig, out_dir: Union[str, Path], seed: Optional[int] = None) -> RunResult:
    """Run, export every artifact and judge recovery against the injected failure times."""
    seed = config.seed if seed is None else seed
    directory = artifacts.ensure_dir(out_dir)
    result = run(config, seed)

    files = [artifacts.write_text_atomic(directory / artifacts.SCENARIO_FILE, serialize(replace(config, seed=seed)))]
    files.extend(export_csv(result, directory))
    report = build_report(
        directory / artifacts.METRICS_FILE,
        run_detector(config),
        ground_truth=directory / artifacts.FAILURES_FILE,
    )
    files.append(write_recovery_csv(report, directory / artifacts.RECOVERY_FILE))
    logger.info("run %s seed=%d written to %s", config.name, seed, directory)
    return RunResult(directory=directory, artifacts=result, report=report, files=files)
