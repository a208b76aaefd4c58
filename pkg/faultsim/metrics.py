"""Sampling, smoothing, percentiles and CSV export of run artifacts."""

import logging
import math
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from faultsim import artifacts
from faultsim.errors import EmptySelectionError
from faultsim.types import LatencyWindow, MetricSeries, OutputLedger, RunArtifacts

logger = logging.getLogger("FAULTSIM.metrics")

METRICS_HEADER = ("t_s", "input_tp", "output_tp", "lag", "lat_p50_ms", "lat_p90_ms", "lat_p99_ms")
CPU_HEADER = ("t_s", "worker_id", "cpu_util")
FAILURES_HEADER = ("failure_idx", "t_inject_s", "victims")
CONVERGENCE_HEADER = ("failure_idx", "first_probe_s", "converged_s", "rounds")

THROUGHPUT_WINDOW = 5
CPU_WINDOW = 10
CPU_CADENCE = 2.0
LATENCY_WINDOW_S = 10.0
PERCENTILES = (50.0, 90.0, 99.0)


def format_number(value: Union[float, int, None]) -> str:
    """Six significant digits, positional notation, trailing zeros trimmed; ``None`` is empty."""
    if value is None:
        return ""
    if isinstance(value, (int, np.integer)) and not isinstance(value, bool):
        return str(int(value))
    number = float(value)
    if not math.isfinite(number):
        raise ValueError(f"cannot export non-finite value {number!r}")
    if number == 0.0:
        return "0"
    return np.format_float_positional(number, precision=6, unique=False, fractional=False, trim="-")


# ═══════════════════════════════════════════════════════════════════════
# SMOOTHING AND PERCENTILES
# ═══════════════════════════════════════════════════════════════════════


def moving_average(values: Sequence[float], window: int) -> List[float]:
    """Trailing mean of the last ``window`` values; shorter at the head of the series."""
    if window < 1:
        raise ValueError("window must be at least 1")
    data = [float(v) for v in values]
    out: List[float] = []
    for i in range(len(data)):
        chunk = data[max(0, i - window + 1) : i + 1]
        out.append(sum(chunk) / len(chunk))
    return out


def weighted_percentiles(
    values: Sequence[float],
    weights: Optional[Sequence[float]] = None,
    percentiles: Sequence[float] = PERCENTILES,
) -> List[float]:
    """Nearest-rank percentiles of the weight-expanded distribution (no interpolation).

    The p-th percentile is the smallest value whose cumulative weight reaches p% of the total.
    All-zero weights fall back to equal weights.
    """
    vals = np.asarray(values, dtype=float)
    if vals.size == 0:
        raise EmptySelectionError("percentile over an empty sample")
    w = np.ones_like(vals) if weights is None else np.asarray(weights, dtype=float)
    if w.shape != vals.shape:
        raise ValueError("values and weights differ in length")
    total = float(w.sum())
    if total <= 0.0:
        w = np.ones_like(vals)
        total = float(vals.size)
    order = np.argsort(vals, kind="stable")
    ranked = vals[order]
    cumulative = np.cumsum(w[order])
    out: List[float] = []
    for p in percentiles:
        target = p * total / 100.0
        idx = int(np.searchsorted(cumulative, target, side="left"))
        out.append(float(ranked[min(idx, ranked.size - 1)]))
    return out


def latency_window(latencies_s: np.ndarray, weights: np.ndarray, window_start: float) -> LatencyWindow:
    p50, p90, p99 = weighted_percentiles(latencies_s, weights, PERCENTILES)
    return LatencyWindow(window_start=window_start, p50=p50 * 1000.0, p90=p90 * 1000.0, p99=p99 * 1000.0)


def lower_median(values: Iterable[float]) -> float:
    ordered = sorted(float(v) for v in values)
    if not ordered:
        raise EmptySelectionError("median over an empty selection")
    return ordered[(len(ordered) - 1) // 2]


def run_median(series: MetricSeries, start: float) -> float:
    """Lower median over every sample at or after ``start``."""
    return lower_median(series.since(start))


# ═══════════════════════════════════════════════════════════════════════
# SERIES FROM RUN ARTIFACTS
# ═══════════════════════════════════════════════════════════════════════


def _seconds(n: int) -> List[float]:
    return [float(s) for s in range(1, n + 1)]


def sample_throughput(run: RunArtifacts) -> Tuple[MetricSeries, MetricSeries]:
    times = _seconds(len(run.input_per_second))
    return (
        MetricSeries("input_tp", times, moving_average(run.input_per_second, THROUGHPUT_WINDOW)),
        MetricSeries("output_tp", times, moving_average(run.output_per_second, THROUGHPUT_WINDOW)),
    )


def sample_lag(run: RunArtifacts) -> MetricSeries:
    return MetricSeries("lag", _seconds(len(run.lag_per_second)), [max(0.0, v) for v in run.lag_per_second])


def sample_latency(run: RunArtifacts) -> List[LatencyWindow]:
    return list(run.latency_windows)


def latency_series(run: RunArtifacts, column: str = "p90") -> MetricSeries:
    """Per-second latency column: second ``s`` reports the window containing [s-1, s)."""
    seconds = len(run.input_per_second)
    values: List[float] = []
    for s in range(1, seconds + 1):
        window = _window_for_second(run.latency_windows, s)
        values.append(getattr(window, column) if window is not None else 0.0)
    return MetricSeries(f"lat_{column}_ms", _seconds(seconds), values)


def _window_for_second(windows: Sequence[LatencyWindow], second: int) -> Optional[LatencyWindow]:
    idx = int((second - 1) // LATENCY_WINDOW_S)
    if 0 <= idx < len(windows):
        return windows[idx]
    return windows[-1] if windows else None


def sample_cpu(run: RunArtifacts) -> Dict[int, MetricSeries]:
    """Per-worker CPU series with the 10-value trailing moving average applied."""
    raw: Dict[int, Tuple[List[float], List[float]]] = {}
    for t, worker, value in run.cpu_samples:
        times, values = raw.setdefault(worker, ([], []))
        times.append(t)
        values.append(value)
    return {
        worker: MetricSeries(f"cpu_{worker}", times, moving_average(values, CPU_WINDOW), cadence=CPU_CADENCE)
        for worker, (times, values) in sorted(raw.items())
    }


def ledger_summary(ledger: OutputLedger) -> Dict[str, float]:
    expected = ledger.total_expected()
    emitted = ledger.total_emitted()
    return {
        "windows": len(ledger.closed),
        "replayed_windows": len(ledger.replayed_windows),
        "expected_outputs": expected,
        "emitted_outputs": emitted,
        "duplicate_outputs": emitted - expected,
    }


# ═══════════════════════════════════════════════════════════════════════
# EXPORT
# ═══════════════════════════════════════════════════════════════════════


def metrics_rows(run: RunArtifacts) -> List[List[str]]:
    input_tp, output_tp = sample_throughput(run)
    lag = sample_lag(run)
    rows: List[List[str]] = []
    for i, t in enumerate(input_tp.times):
        window = _window_for_second(run.latency_windows, int(t))
        p50, p90, p99 = (window.p50, window.p90, window.p99) if window else (0.0, 0.0, 0.0)
        rows.append(
            [
                format_number(int(t)),
                format_number(input_tp.values[i]),
                format_number(output_tp.values[i]),
                format_number(lag.values[i]),
                format_number(p50),
                format_number(p90),
                format_number(p99),
            ]
        )
    return rows


def cpu_rows(run: RunArtifacts) -> List[List[str]]:
    smoothed = sample_cpu(run)
    rows: List[Tuple[float, int, float]] = []
    for worker, series in smoothed.items():
        rows.extend((t, worker, v) for t, v in zip(series.times, series.values))
    rows.sort(key=lambda r: (r[0], r[1]))
    return [[format_number(t), str(worker), format_number(v)] for t, worker, v in rows]


def failure_rows(run: RunArtifacts) -> List[List[str]]:
    return [
        [str(f.index), format_number(f.time), ";".join(str(v) for v in f.victims)]
        for f in run.failures
    ]


def convergence_rows(run: RunArtifacts) -> List[List[str]]:
    return [
        [
            str(rec.failure_idx),
            format_number(rec.first_probe),
            format_number(rec.converged),
            "" if rec.rounds is None else str(rec.rounds),
        ]
        for rec in run.convergence
    ]


def export_csv(run: RunArtifacts, directory: Union[str, Path]) -> List[Path]:
    """Write metrics.csv, cpu.csv, failures.csv, convergence.csv and events.log into ``directory``."""
    out_dir = artifacts.ensure_dir(directory)
    written = [
        artifacts.write_csv_atomic(out_dir / artifacts.METRICS_FILE, METRICS_HEADER, metrics_rows(run)),
        artifacts.write_csv_atomic(out_dir / artifacts.CPU_FILE, CPU_HEADER, cpu_rows(run)),
        artifacts.write_csv_atomic(out_dir / artifacts.FAILURES_FILE, FAILURES_HEADER, failure_rows(run)),
        artifacts.write_csv_atomic(out_dir / artifacts.CONVERGENCE_FILE, CONVERGENCE_HEADER, convergence_rows(run)),
        artifacts.write_text_atomic(
            out_dir / artifacts.EVENTS_FILE, "".join(line + "\n" for line in run.events)
        ),
    ]
    logger.info("exported %d files to %s", len(written), out_dir)
    return written
