from dataclasses import replace

import numpy as np
import pytest

from faultsim.detector import (
    analyze,
    build_report,
    detect_failures,
    detect_recovery,
    read_failures_csv,
    read_metrics_csv,
    read_recovery_csv,
    train_reference,
    write_recovery_csv,
)
from faultsim.engine import run
from faultsim.errors import ArtifactError, DetectorError, MetricsFormatError
from faultsim.metrics import latency_series
from faultsim.scenario import DetectorConfig, build_scenario
from faultsim.types import MetricSeries, ReferenceStats

from tests.conftest import small_values

CFG = DetectorConfig()
EXACT = replace(CFG, moving_window=1)


def _series(values, name="output_tp"):
    return MetricSeries(name, [float(t) for t in range(len(values))], [float(v) for v in values])


def _flat(n=2400, level=100.0):
    return [level] * n


def _ref(mean=100.0, end=420.0):
    return ReferenceStats("output_tp", mean, 0.0, 120.0, end, 301)


def _with_segment(values, start, end, level):
    out = list(values)
    for t in range(start, min(end, len(out))):
        out[t] = level
    return out


def test_reference_of_constant_series():
    ref = train_reference(_series(_flat()), CFG)
    assert ref.mean == 100.0
    assert ref.std == 0.0
    assert (ref.window_start, ref.window_end) == (120.0, 420.0)


def test_reference_of_alternating_series():
    values = [90.0 if t % 2 == 0 else 110.0 for t in range(2400)]
    ref = train_reference(_series(values), CFG, first_failure_hint=220.0)
    assert ref.samples == 100
    assert ref.mean == pytest.approx(100.0)
    assert ref.std == pytest.approx(10.0)


def test_reference_matches_brute_force():
    rng = np.random.default_rng(21)
    for _ in range(20):
        values = list(rng.normal(500.0, 40.0, size=900))
        hint = float(rng.integers(200, 800))
        ref = train_reference(_series(values), CFG, first_failure_hint=hint)
        window = [v for t, v in enumerate(values) if 120 <= t <= 420 and t < hint]
        mean = sum(window) / len(window)
        std = (sum((v - mean) ** 2 for v in window) / len(window)) ** 0.5
        assert ref.mean == pytest.approx(mean, rel=1e-12)
        assert ref.std == pytest.approx(std, rel=1e-9)


def test_reference_too_short():
    with pytest.raises(DetectorError):
        train_reference(_series(_flat(200)), CFG, first_failure_hint=125.0)


def test_flat_series_has_no_failures():
    series = _series(_flat())
    assert detect_failures(series, train_reference(series, CFG), CFG) == []


def test_throughput_drop_is_detected():
    values = _flat()
    for start in (720, 1440, 2160):
        values = _with_segment(values, start, start + 300, 50.0)
    series = _series(values)
    marks = detect_failures(series, train_reference(series, CFG), CFG)
    assert abs(marks[0] - 720.0) <= 5.0
    assert marks[1] == marks[0] + 720.0
    assert len(marks) == 3


def test_later_failures_follow_the_period():
    values = _with_segment(_flat(), 723, 900, 40.0)
    marks = detect_failures(_series(values), _ref(), EXACT)
    assert marks == [723.0, 1443.0, 2163.0]


def test_recovery_after_two_hundred_seconds():
    values = _with_segment(_flat(), 720, 920, 50.0)
    verdict = detect_recovery(_series(values), _ref(), 720.0, EXACT)
    assert verdict.recovered
    assert verdict.t_recover == 920.0
    assert verdict.duration == 200.0


def test_latency_settling_above_reference_is_unrecovered():
    values = _with_segment(_flat(level=60.81), 720, 2400, 83.99)
    ref = ReferenceStats("lat_p90_ms", 60.81, 0.0, 120.0, 420.0, 301)
    assert not detect_recovery(_series(values, "lat_p90_ms"), ref, 720.0, EXACT).recovered


def test_short_stable_stretch_is_unrecovered():
    values = _with_segment(_flat(), 720, 920, 50.0)
    values = _with_segment(values, 1070, 2400, 50.0)
    assert not detect_recovery(_series(values), _ref(), 720.0, EXACT).recovered


def test_recovery_must_close_before_next_failure():
    values = _with_segment(_flat(), 720, 1400, 50.0)
    assert not detect_recovery(_series(values), _ref(), 720.0, EXACT).recovered


def _synthetic_trace(rng):
    first = int(rng.integers(600, 800))
    durations = [int(rng.integers(100, 500)) for _ in range(3)]
    spike = bool(rng.integers(0, 2))
    n = first + 3 * 720
    base = 60.0 if spike else 1000.0
    values = np.full(n, base)
    for k, duration in enumerate(durations):
        start = first + k * 720
        factor = rng.uniform(1.5, 3.0) if spike else rng.uniform(0.3, 0.6)
        values[start : start + duration] = base * factor
    values = values * (1.0 + rng.uniform(-0.03, 0.03, size=n))
    return first, durations, list(values)


def test_synthetic_ground_truth_traces():
    rng = np.random.default_rng(2024)
    for _ in range(30):
        first, durations, values = _synthetic_trace(rng)
        series = _series(values)
        report = analyze({"output_tp": series}, CFG, metrics=["output_tp"])

        assert len(report.failures) == 3
        for k, failure in enumerate(report.failures):
            truth = first + k * 720
            assert abs(failure.t_inject - truth) <= CFG.moving_window + 5
            verdict = failure.verdicts["output_tp"]
            assert verdict.recovered
            true_recovery = truth + durations[k]
            assert abs(verdict.t_recover - true_recovery) <= 10.0


def test_analyze_with_no_failures():
    series = _series(_flat())
    report = analyze({"output_tp": series, "lat_p90_ms": _series(_flat(), "lat_p90_ms")}, CFG, injections=[])
    assert report.failures == []
    assert set(report.references) == {"output_tp", "lat_p90_ms"}


def test_analyze_unknown_metric():
    with pytest.raises(DetectorError, match="unknown metric"):
        analyze({"output_tp": _series(_flat())}, CFG, metrics=["lat_p90_ms"])


def _write_metrics(path, values):
    lines = ["t_s,input_tp,output_tp,lag,lat_p50_ms,lat_p90_ms,lat_p99_ms"]
    for t, v in enumerate(values, start=1):
        lines.append(f"{t},{2 * v},{v},0,50,60,70")
    path.write_text("\n".join(lines) + "\n")


def test_build_report_uses_ground_truth(tmp_path):
    values = _with_segment(_flat(2300), 720, 900, 50.0)
    _write_metrics(tmp_path / "metrics.csv", values)
    (tmp_path / "failures.csv").write_text("failure_idx,t_inject_s,victims\n0,700,1;2\n")

    report = build_report(tmp_path, CFG, ground_truth=tmp_path / "failures.csv")

    assert [f.t_inject for f in report.failures] == [700.0]
    assert report.failures[0].verdicts["output_tp"].recovered


def test_recovery_csv_round_trip(tmp_path):
    values = _with_segment(_flat(2300), 720, 900, 50.0)
    _write_metrics(tmp_path / "metrics.csv", values)
    report = build_report(tmp_path / "metrics.csv", CFG)

    path = write_recovery_csv(report, tmp_path / "recovery.csv")
    lines = path.read_text().splitlines()
    assert lines[0] == "failure_idx,t_inject_s,metric,recovered,t_recover_s,duration_s"
    again = read_recovery_csv(path)
    assert again.metrics == report.metrics
    assert [f.verdicts for f in again.failures] == [f.verdicts for f in report.failures]


def test_unrecovered_rows_leave_times_empty(tmp_path):
    values = _with_segment(_flat(2300), 720, 2300, 50.0)
    _write_metrics(tmp_path / "metrics.csv", values)
    report = build_report(tmp_path / "metrics.csv", CFG, metrics=["output_tp"])
    lines = write_recovery_csv(report, tmp_path / "recovery.csv").read_text().splitlines()
    assert all(line.endswith(",output_tp,0,,") for line in lines[1:])


def test_malformed_metrics_csv(tmp_path):
    bad_header = tmp_path / "a.csv"
    bad_header.write_text("time,x\n1,2\n")
    with pytest.raises(MetricsFormatError):
        read_metrics_csv(bad_header)

    bad_value = tmp_path / "b.csv"
    bad_value.write_text("t_s,output_tp\n1,10\n2,ten\n")
    with pytest.raises(MetricsFormatError) as exc:
        read_metrics_csv(bad_value)
    assert exc.value.row == 3

    not_increasing = tmp_path / "c.csv"
    not_increasing.write_text("t_s,output_tp\n2,10\n1,10\n")
    with pytest.raises(MetricsFormatError, match="strictly increasing"):
        read_metrics_csv(not_increasing)


def test_missing_metrics_file(tmp_path):
    with pytest.raises(ArtifactError):
        read_metrics_csv(tmp_path / "nope.csv")


def test_failures_csv_is_sorted_by_index(tmp_path):
    path = tmp_path / "failures.csv"
    path.write_text("failure_idx,t_inject_s,victims\n1,1440,3\n0,720,1;2\n")
    assert read_failures_csv(path) == [720.0, 1440.0]


def test_smaller_threshold_never_detects_later():
    values = _flat(2400)
    for t in range(720, 1000):
        values[t] = 100.0 - 0.25 * (t - 720)
    series = _series(values)
    previous = None
    for threshold in (0.05, 0.1, 0.15, 0.3, 0.5):
        marks = detect_failures(series, _ref(), replace(EXACT, detection_threshold=threshold))
        assert marks
        if previous is not None:
            assert marks[0] >= previous
        previous = marks[0]


def _exhaustive_recovery(times, values, ref, t_inject, cfg):
    limit = cfg.recovery_threshold * abs(ref.mean)
    in_band = [abs(v - ref.mean) <= limit for v in values]
    for i, t_r in enumerate(times):
        if t_r <= t_inject or not in_band[i]:
            continue
        end = t_r + cfg.stable_window
        if end > t_inject + cfg.failure_period or end > times[-1]:
            return None
        if all(ok for t, ok in zip(times, in_band) if t_r <= t <= end):
            return t_r
    return None


def _noisy_trace(rng, n=1600):
    values = [100.0] * n
    for _ in range(int(rng.integers(3, 12))):
        start = int(rng.integers(700, n))
        length = int(rng.integers(1, 120))
        level = float(rng.choice([40.0, 80.0, 130.0]))
        values = _with_segment(values, start, start + length, level)
    return values


def test_recovery_is_the_earliest_stable_window():
    rng = np.random.default_rng(7)
    cfg = replace(EXACT, stable_window=60.0)
    for _ in range(40):
        values = _noisy_trace(rng)
        series = _series(values)
        verdict = detect_recovery(series, _ref(), 720.0, cfg)
        expected = _exhaustive_recovery(series.times, series.values, _ref(), 720.0, cfg)
        if expected is None:
            assert not verdict.recovered
        else:
            assert verdict.recovered
            assert verdict.t_recover == expected


def test_verdict_stable_under_half_cadence_duplicates():
    rng = np.random.default_rng(11)
    cfg = replace(EXACT, stable_window=60.0)
    for _ in range(20):
        values = _noisy_trace(rng)
        times = []
        doubled = []
        for t, v in enumerate(values):
            times += [float(t), t + 0.5]
            doubled += [v, v]
        coarse = detect_recovery(_series(values), _ref(), 720.0, cfg)
        fine = detect_recovery(MetricSeries("output_tp", times, doubled, cadence=0.5), _ref(), 720.0, cfg)
        assert fine.recovered == coarse.recovered
        if coarse.recovered:
            assert abs(fine.t_recover - coarse.t_recover) <= 0.5


def test_detected_failures_match_injections_of_a_run():
    config = build_scenario(small_values(**{"failures.kills_per_failure": 2}))
    result = run(config, seed=4)
    cfg = replace(config.detector, detection_metric="lat_p90_ms")
    report = analyze({"lat_p90_ms": latency_series(result)}, cfg, metrics=["lat_p90_ms"])
    truth = [f.time for f in result.failures]
    assert len(report.failures) == len(truth)
    for failure, t in zip(report.failures, truth):
        assert abs(failure.t_inject - t) <= cfg.moving_window + 5
