import numpy as np
import pytest

from faultsim import artifacts
from faultsim.errors import EmptySelectionError
from faultsim.metrics import (
    CPU_HEADER,
    METRICS_HEADER,
    export_csv,
    format_number,
    ledger_summary,
    lower_median,
    moving_average,
    run_median,
    sample_cpu,
    sample_lag,
    sample_latency,
    sample_throughput,
    weighted_percentiles,
)
from faultsim.types import MetricSeries


def _brute_moving_average(values, window):
    out = []
    for i in range(len(values)):
        chunk = values[max(0, i - window + 1) : i + 1]
        out.append(sum(chunk) / len(chunk))
    return out


def _brute_percentile(values, weights, p):
    pairs = sorted(zip(values, weights), key=lambda vw: vw[0])
    total = sum(weights)
    running = 0.0
    for value, weight in pairs:
        running += weight
        if running >= p * total / 100.0:
            return value
    return pairs[-1][0]


def test_moving_average_examples():
    assert moving_average([100, 110, 120, 130, 140], 5)[4] == 120.0
    assert moving_average([100.0] * 20, 5) == [100.0] * 20


def test_moving_average_matches_brute_force():
    rng = np.random.default_rng(3)
    values = [float(v) for v in rng.normal(1000.0, 150.0, size=10000)]
    for window in (1, 5, 10):
        assert moving_average(values, window) == _brute_moving_average(values, window)


def test_moving_average_rejects_empty_window():
    with pytest.raises(ValueError):
        moving_average([1.0], 0)


def test_nearest_rank_percentiles():
    values = [float(v) for v in range(1, 101)]
    assert weighted_percentiles(values, percentiles=[90.0]) == [90.0]
    assert weighted_percentiles([7.0] * 12) == [7.0, 7.0, 7.0]


def test_weighted_percentiles_match_brute_force():
    rng = np.random.default_rng(8)
    values = rng.integers(0, 500, size=10000).astype(float)
    weights = rng.integers(0, 20, size=10000).astype(float)
    got = weighted_percentiles(values, weights, [50.0, 90.0, 99.0])
    expected = [_brute_percentile(list(values), list(weights), p) for p in (50.0, 90.0, 99.0)]
    assert got == expected


def test_zero_weights_fall_back_to_equal_weights():
    assert weighted_percentiles([1.0, 2.0, 3.0, 4.0], [0.0] * 4, [50.0]) == [2.0]


def test_two_mode_distribution_raises_p90_only():
    # Six healthy workers near 60 ms, two overloaded near 400 ms.
    values = [60.0] * 60 + [400.0] * 20
    p50, p90, _ = weighted_percentiles(values)
    assert p50 == 60.0
    assert p90 == 400.0


def test_percentile_of_nothing():
    with pytest.raises(EmptySelectionError):
        weighted_percentiles([])


def test_lower_median():
    assert lower_median([1, 2, 3]) == 2
    assert lower_median([4, 1, 3, 2]) == 2
    with pytest.raises(EmptySelectionError):
        lower_median([])


def test_run_median_starts_at_time():
    series = MetricSeries("lat_p90_ms", [1.0, 2.0, 3.0, 4.0], [500.0, 1.0, 2.0, 3.0])
    assert run_median(series, 2.0) == 2.0


def test_format_number():
    assert format_number(None) == ""
    assert format_number(0.0) == "0"
    assert format_number(3) == "3"
    assert format_number(13000.0) == "13000"
    assert format_number(58.51234567) == "58.5123"
    assert format_number(0.000123456789) == "0.000123457"
    with pytest.raises(ValueError):
        format_number(float("inf"))


def test_throughput_series_are_smoothed(quiet_run):
    input_tp, output_tp = sample_throughput(quiet_run)
    assert input_tp.times[0] == 1.0
    assert output_tp.values == moving_average(quiet_run.output_per_second, 5)


def test_lag_series_is_non_negative(small_run):
    lag = sample_lag(small_run)
    assert min(lag.values) >= 0.0
    assert len(lag) == int(small_run.config.run_duration)


def test_cpu_series_every_two_seconds(quiet_run):
    series = sample_cpu(quiet_run)
    assert sorted(series) == [0, 1, 2, 3]
    worker = series[0]
    assert worker.times[:3] == [2.0, 4.0, 6.0]
    assert worker.values[-1] == pytest.approx(0.4, abs=0.01)


def test_export_headers_and_files(small_run, tmp_path):
    written = export_csv(small_run, tmp_path)
    assert {p.name for p in written} == {
        artifacts.METRICS_FILE,
        artifacts.CPU_FILE,
        artifacts.FAILURES_FILE,
        artifacts.CONVERGENCE_FILE,
        artifacts.EVENTS_FILE,
    }
    metrics = (tmp_path / artifacts.METRICS_FILE).read_text().splitlines()
    assert metrics[0] == ",".join(METRICS_HEADER)
    assert metrics[0] == "t_s,input_tp,output_tp,lag,lat_p50_ms,lat_p90_ms,lat_p99_ms"
    assert len(metrics) == int(small_run.config.run_duration) + 1
    cpu = (tmp_path / artifacts.CPU_FILE).read_text().splitlines()
    assert cpu[0] == ",".join(CPU_HEADER) == "t_s,worker_id,cpu_util"
    failures = (tmp_path / artifacts.FAILURES_FILE).read_text().splitlines()
    assert failures[0] == "failure_idx,t_inject_s,victims"
    assert len(failures) == 3


def test_reexport_is_byte_identical(small_run, tmp_path):
    export_csv(small_run, tmp_path / "a")
    export_csv(small_run, tmp_path / "b")
    for name in (artifacts.METRICS_FILE, artifacts.CPU_FILE, artifacts.FAILURES_FILE, artifacts.EVENTS_FILE):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_ledger_summary(small_run):
    summary = ledger_summary(small_run.ledger)
    assert summary["duplicate_outputs"] >= 0.0
    assert summary["emitted_outputs"] == pytest.approx(summary["expected_outputs"] + summary["duplicate_outputs"])


def test_latency_windows_cover_the_run(quiet_run):
    windows = sample_latency(quiet_run)
    assert len(windows) == int(quiet_run.config.run_duration // 10)
    assert all(w.p50 <= w.p90 <= w.p99 for w in windows)
