"""Parameter sweeps: one scenario key over several values, crossed with seeds."""

import itertools
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Sequence, Union

from faultsim import artifacts
from faultsim.reporting import SWEEP_HEADER, RunSummary, summarize_run, sweep_row
from faultsim.runner import execute_run
from faultsim.scenario import SCHEMA_BY_KEY, ScenarioConfig, coerce_value, serialize, with_overrides

logger = logging.getLogger("FAULTSIM.sweep")

SWEEP_FILE = "sweep.csv"


@dataclass(frozen=True)
class SweepJob:
    value: str
    seed: int
    config: ScenarioConfig
    out_dir: str


@dataclass
class SweepResult:
    directory: Path
    param: str
    runs: Dict[str, List[RunSummary]]
    table: Path
    rows: List[List[str]] = field(default_factory=list)


def run_directory(root: Union[str, Path], param: str, value: str, seed: int) -> Path:
    return Path(root) / f"{param}={value}" / f"seed-{seed}"


def plan_sweep(
    base: ScenarioConfig,
    param: str,
    values: Sequence[str],
    seeds: Sequence[int],
    root: Union[str, Path],
) -> List[SweepJob]:
    """Validate every variant up front; an unknown key raises ``KeyError`` before anything runs."""
    if param not in SCHEMA_BY_KEY:
        raise KeyError(f"unknown scenario key {param!r}")
    variants = {value: with_overrides(base, {param: value}) for value in values}
    return [
        SweepJob(value=value, seed=seed, config=variants[value], out_dir=str(run_directory(root, param, value, seed)))
        for value, seed in itertools.product(values, seeds)
    ]


def _execute(job: SweepJob) -> str:
    execute_run(job.config, job.out_dir, seed=job.seed)
    return job.out_dir


def run_sweep(
    base: ScenarioConfig,
    param: str,
    values: Sequence[str],
    seeds: Sequence[int],
    root: Union[str, Path],
    jobs: int = 1,
) -> SweepResult:
    values = list(dict.fromkeys(values))
    seeds = list(dict.fromkeys(seeds))
    directory = artifacts.ensure_dir(root)
    plan = plan_sweep(base, param, values, seeds, directory)
    logger.info("sweep %s over %d values x %d seeds (%d runs, jobs=%d)", param, len(values), len(seeds), len(plan), jobs)
    artifacts.write_text_atomic(directory / artifacts.SCENARIO_FILE, serialize(base))

    if jobs > 1 and len(plan) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            finished = list(pool.map(_execute, plan))
    else:
        finished = [_execute(job) for job in plan]

    runs: Dict[str, List[RunSummary]] = {value: [] for value in values}
    for job, out_dir in zip(plan, finished):
        runs[job.value].append(summarize_run(out_dir, label=f"{param}={job.value}/seed-{job.seed}"))

    rows = [sweep_row(_canonical(param, value), runs[value]) for value in values]
    table = artifacts.write_csv_atomic(directory / SWEEP_FILE, SWEEP_HEADER, rows)
    logger.info("sweep table written to %s", table)
    return SweepResult(directory=directory, param=param, runs=runs, table=table, rows=rows)


def _canonical(param: str, value: str) -> str:
    coerced = coerce_value(param, value)
    return repr(coerced) if isinstance(coerced, float) else str(coerced)
