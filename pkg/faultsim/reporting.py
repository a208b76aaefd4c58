"""Comparative summaries over run directories: per run, per scenario group, and contrasts."""

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

from faultsim import artifacts
from faultsim.detector import REPORT_METRICS, read_failures_csv, read_metrics_csv, read_recovery_csv
from faultsim.errors import ArtifactError, MetricsFormatError
from faultsim.metrics import format_number, lower_median, run_median, weighted_percentiles
from faultsim.scenario import ScenarioConfig, load_scenario_file

logger = logging.getLogger("FAULTSIM.reporting")

REPORT_HEADER = ("section", "name", "metric", "value")
SWEEP_HEADER = (
    "value",
    "runs",
    "median_recovery_lat_p90_s",
    "median_p90_ms",
    "median_convergence_rounds",
    "recovered_fraction",
)
REPORT_FILES = (
    artifacts.SCENARIO_FILE,
    artifacts.METRICS_FILE,
    artifacts.FAILURES_FILE,
    artifacts.RECOVERY_FILE,
    artifacts.CONVERGENCE_FILE,
)
LATENCY_METRIC = "lat_p90_ms"
QUARTILES = (25.0, 50.0, 75.0)


@dataclass
class RunSummary:
    label: str
    directory: Path
    config: ScenarioConfig
    failure_times: Tuple[float, ...]
    median_p90_ms: float
    recovered_fraction: Dict[str, Optional[float]] = field(default_factory=dict)
    median_duration: Dict[str, Optional[float]] = field(default_factory=dict)
    censored_durations: List[float] = field(default_factory=list)
    latency_recovered: List[bool] = field(default_factory=list)
    convergence_rounds: List[int] = field(default_factory=list)
    recovery_durations: Dict[str, List[float]] = field(default_factory=dict)
    judged: Dict[str, int] = field(default_factory=dict)

    @property
    def scenario(self) -> str:
        return self.config.name

    @property
    def median_rounds(self) -> Optional[float]:
        return lower_median(self.convergence_rounds) if self.convergence_rounds else None


def _read_rounds(path: Path) -> List[int]:
    reader = csv.reader(artifacts.read_text(path).splitlines())
    next(reader, None)
    rounds: List[int] = []
    for row_no, row in enumerate(reader, start=2):
        if len(row) < 4 or not row[3]:
            continue
        try:
            rounds.append(int(row[3]))
        except ValueError as exc:
            raise MetricsFormatError(path, row_no, f"bad rounds field {row[3]!r}") from exc
    return rounds


def summarize_run(run_dir: Union[str, Path], label: Optional[str] = None) -> RunSummary:
    """Load one run directory; every artifact the report needs must be present."""
    directory = Path(run_dir)
    missing = artifacts.missing_run_files(directory, REPORT_FILES)
    if missing:
        raise ArtifactError(directory, f"missing artifacts: {', '.join(missing)}")

    config = load_scenario_file(directory / artifacts.SCENARIO_FILE)
    series = read_metrics_csv(directory / artifacts.METRICS_FILE)
    failure_times = tuple(read_failures_csv(directory / artifacts.FAILURES_FILE))
    report = read_recovery_csv(directory / artifacts.RECOVERY_FILE)
    if LATENCY_METRIC not in series:
        raise MetricsFormatError(directory / artifacts.METRICS_FILE, 1, f"no {LATENCY_METRIC} column")

    start = failure_times[0] if failure_times else config.detector.warmup_end
    censored = [
        f.verdicts[LATENCY_METRIC].duration
        if f.verdicts[LATENCY_METRIC].recovered
        else config.failures.failure_period
        for f in report.failures
        if LATENCY_METRIC in f.verdicts
    ]
    summary = report.summary()
    return RunSummary(
        label=label or directory.name,
        directory=directory,
        config=config,
        failure_times=failure_times,
        median_p90_ms=run_median(series[LATENCY_METRIC], start),
        recovered_fraction={m: s["recovered_fraction"] for m, s in summary.items()},
        median_duration={m: s["median_duration"] for m, s in summary.items()},
        censored_durations=censored,
        latency_recovered=[f.verdicts[LATENCY_METRIC].recovered for f in report.failures if LATENCY_METRIC in f.verdicts],
        convergence_rounds=_read_rounds(directory / artifacts.CONVERGENCE_FILE),
        recovery_durations={m: report.durations(m) for m in report.metrics},
        judged={m: sum(1 for f in report.failures if m in f.verdicts) for m in report.metrics},
    )


def _labels(directories: Sequence[Path]) -> List[str]:
    names = [d.name for d in directories]
    if len(set(names)) == len(names):
        return names
    return [str(d) for d in directories]


def load_runs(run_dirs: Sequence[Union[str, Path]]) -> List[RunSummary]:
    directories = [Path(d) for d in run_dirs]
    runs = [summarize_run(d, label) for d, label in zip(directories, _labels(directories))]
    plans = {(r.failure_times, r.config.failures.kills_per_failure) for r in runs}
    if len(plans) > 1:
        logger.warning("report mixes runs whose failure plans differ (%d distinct plans)", len(plans))
    return runs


# ═══════════════════════════════════════════════════════════════════════
# TABLES
# ═══════════════════════════════════════════════════════════════════════


def _percent_change(new: float, old: float) -> Optional[float]:
    if old == 0.0:
        return None
    return (new - old) / old * 100.0


def run_rows(runs: Sequence[RunSummary]) -> List[List[str]]:
    rows: List[List[str]] = []
    for run in runs:
        rows.append(["run", run.label, "scenario", run.scenario])
        rows.append(["run", run.label, "median_p90_ms", format_number(run.median_p90_ms)])
        for metric in REPORT_METRICS:
            rows.append(["run", run.label, f"{metric}.recovered_fraction", format_number(run.recovered_fraction.get(metric))])
            rows.append(["run", run.label, f"{metric}.median_duration_s", format_number(run.median_duration.get(metric))])
        rows.append(["run", run.label, "median_convergence_rounds", format_number(run.median_rounds)])
    return rows


def group_runs(runs: Sequence[RunSummary]) -> Dict[str, List[RunSummary]]:
    """Scenario name to runs, in order of first appearance."""
    groups: Dict[str, List[RunSummary]] = {}
    for run in runs:
        groups.setdefault(run.scenario, []).append(run)
    return groups


def group_rows(groups: Dict[str, List[RunSummary]]) -> List[List[str]]:
    """Per scenario: quartiles of the run medians of p90 and of recovery durations per metric."""
    rows: List[List[str]] = []
    for name, members in groups.items():
        q1, median, q3 = weighted_percentiles([r.median_p90_ms for r in members], percentiles=QUARTILES)
        rows.append(["group", name, "runs", str(len(members))])
        rows.append(["group", name, "median_p90_ms.q1", format_number(q1)])
        rows.append(["group", name, "median_p90_ms.median", format_number(median)])
        rows.append(["group", name, "median_p90_ms.q3", format_number(q3)])
        for metric in REPORT_METRICS:
            durations = [d for r in members for d in r.recovery_durations.get(metric, [])]
            judged = sum(r.judged.get(metric, 0) for r in members)
            rows.append(["group", name, f"{metric}.failures", str(judged)])
            rows.append(["group", name, f"{metric}.recovered", str(len(durations))])
            if durations:
                d1, d2, d3 = weighted_percentiles(durations, percentiles=QUARTILES)
                rows.append(["group", name, f"{metric}.recovery_s.q1", format_number(d1)])
                rows.append(["group", name, f"{metric}.recovery_s.median", format_number(d2)])
                rows.append(["group", name, f"{metric}.recovery_s.q3", format_number(d3)])
        censored = [d for r in members for d in r.censored_durations]
        if censored:
            rows.append(["group", name, "lat_p90_ms.censored_recovery_median_s", format_number(lower_median(censored))])
    return rows


def contrasts(runs: Sequence[RunSummary]) -> List[Tuple[str, str, Optional[float]]]:
    """(later, earlier, percent change of median p90) for every ordered pair.

    Pairs are scenario groups when there are several, otherwise individual runs.
    """
    groups = group_runs(runs)
    if len(groups) > 1:
        units = [(name, lower_median(r.median_p90_ms for r in members)) for name, members in groups.items()]
    else:
        units = [(r.label, r.median_p90_ms) for r in runs]
    out: List[Tuple[str, str, Optional[float]]] = []
    for i, (base_name, base_value) in enumerate(units):
        for other_name, other_value in units[i + 1 :]:
            out.append((other_name, base_name, _percent_change(other_value, base_value)))
    return out


def contrast_rows(runs: Sequence[RunSummary]) -> List[List[str]]:
    return [
        ["contrast", f"{later} vs {earlier}", "median_p90_pct", format_number(change)]
        for later, earlier, change in contrasts(runs)
    ]


def report_rows(runs: Sequence[RunSummary]) -> List[List[str]]:
    rows = run_rows(runs) + group_rows(group_runs(runs))
    if len(runs) > 1:
        rows.extend(contrast_rows(runs))
    return rows


def contrast_lines(runs: Sequence[RunSummary]) -> List[str]:
    if len(runs) < 2:
        return []
    lines = []
    for later, earlier, change in contrasts(runs):
        rendered = "n/a" if change is None else f"{change:+.2f}%"
        lines.append(f"{later} vs {earlier} median p90: {rendered}")
    return lines


def render_table(header: Sequence[str], rows: Sequence[Sequence[str]]) -> str:
    """Aligned plain-text table; empty cells print as ``-``."""
    cells = [list(header)] + [[c if c != "" else "-" for c in row] for row in rows]
    widths = [max(len(row[i]) for row in cells) for i in range(len(header))]
    lines = ["  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)).rstrip() for row in cells]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines)


def write_report(runs: Sequence[RunSummary], out_path: Union[str, Path]) -> Path:
    path = artifacts.write_csv_atomic(out_path, REPORT_HEADER, report_rows(runs))
    logger.info("report over %d runs written to %s", len(runs), path)
    return path


# ═══════════════════════════════════════════════════════════════════════
# SWEEP AGGREGATE
# ═══════════════════════════════════════════════════════════════════════


def sweep_row(value: str, runs: Sequence[RunSummary]) -> List[str]:
    durations = [d for r in runs for d in r.censored_durations]
    rounds = [n for r in runs for n in r.convergence_rounds]
    verdicts = [v for r in runs for v in r.latency_recovered]
    return [
        value,
        str(len(runs)),
        format_number(lower_median(durations)) if durations else "",
        format_number(lower_median(r.median_p90_ms for r in runs)),
        format_number(lower_median(rounds)) if rounds else "",
        format_number(sum(verdicts) / len(verdicts)) if verdicts else "",
    ]
