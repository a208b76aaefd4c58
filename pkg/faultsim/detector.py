"""Offline failure and recovery-time detection over metric traces.

A reference mean/std is trained on the stable stretch after warm-up. The first failure is the
first sustained deviation of the moving average; later failures follow on the fixed period. A
failure counts as recovered once the moving average stays inside the band around the reference
mean for the whole stable window, before the next failure.
"""

import csv
import logging
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np

from faultsim.errors import DetectorError, MetricsFormatError
from faultsim.metrics import METRICS_HEADER, format_number, moving_average
from faultsim import artifacts
from faultsim.scenario import DETECTABLE_METRICS, DetectorConfig
from faultsim.types import FailureVerdicts, MetricSeries, RecoveryReport, ReferenceStats, Verdict

logger = logging.getLogger("FAULTSIM.detector")

RECOVERY_HEADER = ("failure_idx", "t_inject_s", "metric", "recovered", "t_recover_s", "duration_s")
REPORT_METRICS = ("output_tp", "lat_p90_ms")
MIN_REFERENCE_SAMPLES = 10


def train_reference(
    series: MetricSeries,
    cfg: DetectorConfig,
    first_failure_hint: Optional[float] = None,
) -> ReferenceStats:
    start = cfg.warmup_end
    end = start + cfg.reference_span
    if first_failure_hint is not None:
        end = min(end, first_failure_hint)
    window = [
        v
        for t, v in zip(series.times, series.values)
        if start <= t <= end and (first_failure_hint is None or t < first_failure_hint)
    ]
    if len(window) < MIN_REFERENCE_SAMPLES:
        raise DetectorError(
            f"reference window [{format_number(start)}, {format_number(end)}] of {series.name} "
            f"holds {len(window)} samples, need at least {MIN_REFERENCE_SAMPLES}"
        )
    values = np.asarray(window, dtype=float)
    return ReferenceStats(
        metric=series.name,
        mean=float(np.mean(values)),
        std=float(np.std(values)),
        window_start=start,
        window_end=end,
        samples=len(window),
    )


def detect_failures(series: MetricSeries, ref: ReferenceStats, cfg: DetectorConfig) -> List[float]:
    smoothed = moving_average(series.values, cfg.moving_window)
    limit = cfg.detection_threshold * abs(ref.mean)
    run_start: Optional[float] = None
    run_length = 0
    first: Optional[float] = None
    for t, value in zip(series.times, smoothed):
        if t <= ref.window_end:
            continue
        if abs(value - ref.mean) > limit:
            if run_length == 0:
                run_start = t
            run_length += 1
            if run_length >= cfg.detection_consecutive_samples:
                first = run_start
                break
        else:
            run_length = 0
    if first is None:
        return []
    last = series.times[-1]
    marks: List[float] = []
    t = first
    while t <= last:
        marks.append(t)
        t = first + len(marks) * cfg.failure_period
    return marks


def detect_recovery(
    series: MetricSeries,
    ref: ReferenceStats,
    t_inject: float,
    cfg: DetectorConfig,
) -> Verdict:
    """Earliest stable window after ``t_inject`` that closes before the next failure."""
    if not series.times:
        return Verdict.unrecovered()
    times = np.asarray(series.times, dtype=float)
    smoothed = np.asarray(moving_average(series.values, cfg.moving_window), dtype=float)
    in_band = np.abs(smoothed - ref.mean) <= cfg.recovery_threshold * abs(ref.mean)

    # next_out[i]: index of the first out-of-band sample at or after i (len(times) if none).
    next_out = np.full(times.size + 1, times.size, dtype=np.int64)
    for i in range(times.size - 1, -1, -1):
        next_out[i] = next_out[i + 1] if in_band[i] else i

    deadline = t_inject + cfg.failure_period
    last = times[-1]
    for i in np.flatnonzero((times > t_inject) & in_band):
        t_r = float(times[i])
        window_end = t_r + cfg.stable_window
        if window_end > deadline or window_end > last:
            break
        j = next_out[i]
        if j >= times.size or times[j] > window_end:
            return Verdict(recovered=True, t_recover=t_r, duration=t_r - t_inject)
    return Verdict.unrecovered()


# ═══════════════════════════════════════════════════════════════════════
# CSV I/O
# ═══════════════════════════════════════════════════════════════════════


def read_metrics_csv(path: Union[str, Path]) -> Dict[str, MetricSeries]:
    source = Path(path)
    text = artifacts.read_text(source)
    reader = csv.reader(text.splitlines())
    header = next(reader, None)
    if not header or header[0] != "t_s":
        raise MetricsFormatError(source, 1, "header must start with t_s")
    columns = header[1:]
    times: List[float] = []
    values: Dict[str, List[float]] = {name: [] for name in columns}
    for row_no, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise MetricsFormatError(source, row_no, f"expected {len(header)} fields, got {len(row)}")
        try:
            numbers = [float(field) for field in row]
        except ValueError as exc:
            raise MetricsFormatError(source, row_no, f"non-numeric field ({exc})") from exc
        if times and numbers[0] <= times[-1]:
            raise MetricsFormatError(source, row_no, "t_s must be strictly increasing")
        times.append(numbers[0])
        for name, number in zip(columns, numbers[1:]):
            values[name].append(number)
    cadence = times[1] - times[0] if len(times) > 1 else 1.0
    return {name: MetricSeries(name, list(times), values[name], cadence=cadence) for name in columns}


def read_failures_csv(path: Union[str, Path]) -> List[float]:
    source = Path(path)
    reader = csv.reader(artifacts.read_text(source).splitlines())
    header = next(reader, None)
    if not header or header[:2] != ["failure_idx", "t_inject_s"]:
        raise MetricsFormatError(source, 1, "header must start with failure_idx,t_inject_s")
    marks: List[tuple] = []
    for row_no, row in enumerate(reader, start=2):
        if not row:
            continue
        try:
            marks.append((int(row[0]), float(row[1])))
        except (ValueError, IndexError) as exc:
            raise MetricsFormatError(source, row_no, f"bad failure row ({exc})") from exc
    return [t for _, t in sorted(marks)]


def write_recovery_csv(report: RecoveryReport, path: Union[str, Path]) -> Path:
    rows: List[List[str]] = []
    for failure in report.failures:
        for metric in report.metrics:
            verdict = failure.verdicts.get(metric)
            if verdict is None:
                continue
            rows.append(
                [
                    str(failure.index),
                    format_number(failure.t_inject),
                    metric,
                    "1" if verdict.recovered else "0",
                    format_number(verdict.t_recover),
                    format_number(verdict.duration),
                ]
            )
    return artifacts.write_csv_atomic(path, RECOVERY_HEADER, rows)


def read_recovery_csv(path: Union[str, Path]) -> RecoveryReport:
    source = Path(path)
    reader = csv.reader(artifacts.read_text(source).splitlines())
    header = next(reader, None)
    if header != list(RECOVERY_HEADER):
        raise MetricsFormatError(source, 1, "unexpected recovery.csv header")
    by_index: Dict[int, FailureVerdicts] = {}
    metrics: List[str] = []
    for row_no, row in enumerate(reader, start=2):
        if not row:
            continue
        try:
            index, t_inject, metric, recovered = int(row[0]), float(row[1]), row[2], row[3] == "1"
            verdict = (
                Verdict(True, float(row[4]), float(row[5])) if recovered else Verdict.unrecovered()
            )
        except (ValueError, IndexError) as exc:
            raise MetricsFormatError(source, row_no, f"bad recovery row ({exc})") from exc
        entry = by_index.setdefault(index, FailureVerdicts(index=index, t_inject=t_inject))
        entry.verdicts[metric] = verdict
        if metric not in metrics:
            metrics.append(metric)
    return RecoveryReport(metrics=metrics, failures=[by_index[i] for i in sorted(by_index)])


# ═══════════════════════════════════════════════════════════════════════
# REPORT
# ═══════════════════════════════════════════════════════════════════════


def analyze(
    series: Dict[str, MetricSeries],
    cfg: DetectorConfig,
    metrics: Sequence[str] = REPORT_METRICS,
    injections: Optional[Sequence[float]] = None,
) -> RecoveryReport:
    """Verdicts per failure and metric; failures are detected unless ``injections`` is given."""
    for name in list(metrics) + [cfg.detection_metric]:
        if name not in series:
            raise DetectorError(f"unknown metric {name!r}; available: {', '.join(sorted(series))}")

    report = RecoveryReport(metrics=list(metrics))
    if injections is None:
        detection_ref = train_reference(series[cfg.detection_metric], cfg)
        injections = detect_failures(series[cfg.detection_metric], detection_ref, cfg)
        logger.info("detected %d failures on %s", len(injections), cfg.detection_metric)
    hint = injections[0] if injections else None

    for name in metrics:
        report.references[name] = train_reference(series[name], cfg, hint)
    for index, t_inject in enumerate(injections):
        entry = FailureVerdicts(index=index, t_inject=float(t_inject))
        for name in metrics:
            entry.verdicts[name] = detect_recovery(series[name], report.references[name], t_inject, cfg)
        report.failures.append(entry)
    return report


def build_report(
    metrics_path: Union[str, Path],
    cfg: DetectorConfig,
    ground_truth: Optional[Union[str, Path]] = None,
    metrics: Sequence[str] = REPORT_METRICS,
) -> RecoveryReport:
    source = Path(metrics_path)
    if source.is_dir():
        source = source / artifacts.METRICS_FILE
    series = read_metrics_csv(source)
    injections = read_failures_csv(ground_truth) if ground_truth is not None else None
    return analyze(series, cfg, metrics, injections)


def known_metric(name: str) -> bool:
    return name in DETECTABLE_METRICS and name in METRICS_HEADER
