"""faultsim: fault recovery simulation and recovery-time detection for stateful stream processing."""

from faultsim.detector import analyze, build_report
from faultsim.engine import run
from faultsim.errors import FaultsimError
from faultsim.runner import RunResult, execute_run
from faultsim.scenario import ScenarioConfig, builtin_scenario, load_scenario, resolve_scenario
from faultsim.types import RecoveryReport, RunArtifacts

__all__ = [
    "FaultsimError",
    "RecoveryReport",
    "RunArtifacts",
    "RunResult",
    "ScenarioConfig",
    "analyze",
    "build_report",
    "builtin_scenario",
    "execute_run",
    "load_scenario",
    "resolve_scenario",
    "run",
]
