import logging

import pytest

from faultsim import artifacts
from faultsim.errors import ArtifactError
from faultsim.reporting import (
    REPORT_HEADER,
    contrast_lines,
    contrasts,
    load_runs,
    render_table,
    report_rows,
    summarize_run,
    sweep_row,
    write_report,
)
from faultsim.runner import execute_run
from faultsim.scenario import build_scenario
from faultsim.sweep import plan_sweep, run_directory, run_sweep

from tests.conftest import small_values


@pytest.fixture(scope="module")
def run_dirs(tmp_path_factory):
    root = tmp_path_factory.mktemp("runs")
    slow = build_scenario(small_values(**{"scenario.name": "slow", "rebalance.probing_interval_s": 60.0}))
    fast = build_scenario(small_values(**{"scenario.name": "fast", "rebalance.max_warmup_replicas": 4}))
    return {
        "slow": execute_run(slow, root / "slow", seed=5).directory,
        "fast": execute_run(fast, root / "fast", seed=5).directory,
    }


def test_execute_run_writes_every_artifact(run_dirs):
    assert artifacts.missing_run_files(run_dirs["slow"]) == []
    snapshot = (run_dirs["slow"] / artifacts.SCENARIO_FILE).read_text()
    assert "scenario.seed = 5" in snapshot
    assert "scenario.name = slow" in snapshot


def test_summarize_run(run_dirs):
    summary = summarize_run(run_dirs["slow"])
    assert summary.scenario == "slow"
    assert summary.failure_times == (100.0, 250.0)
    assert summary.median_p90_ms > 0.0
    assert len(summary.censored_durations) == 2
    assert all(0.0 < d <= 150.0 for d in summary.censored_durations)


def test_summarize_run_names_missing_artifacts(tmp_path):
    (tmp_path / artifacts.METRICS_FILE).write_text("t_s,output_tp\n1,1\n")
    with pytest.raises(ArtifactError) as exc:
        summarize_run(tmp_path)
    assert "recovery.csv" in str(exc.value)
    assert "scenario.conf" in str(exc.value)


def test_report_sections_and_contrast(run_dirs, tmp_path):
    runs = load_runs([run_dirs["slow"], run_dirs["fast"]])
    rows = report_rows(runs)
    sections = {row[0] for row in rows}
    assert sections == {"run", "group", "contrast"}
    contrast = [row for row in rows if row[0] == "contrast"]
    assert [row[1] for row in contrast] == ["fast vs slow"]

    (later, earlier, change), = contrasts(runs)
    expected = (runs[1].median_p90_ms - runs[0].median_p90_ms) / runs[0].median_p90_ms * 100.0
    assert change == pytest.approx(expected)
    assert contrast_lines(runs)[0].startswith("fast vs slow median p90: ")

    path = write_report(runs, tmp_path / "report.csv")
    assert path.read_text().splitlines()[0] == ",".join(REPORT_HEADER)


def test_single_run_report_has_no_contrast(run_dirs):
    runs = load_runs([run_dirs["slow"]])
    assert all(row[0] != "contrast" for row in report_rows(runs))
    assert contrast_lines(runs) == []


def test_group_quartiles_over_runs(run_dirs):
    runs = load_runs([run_dirs["slow"], run_dirs["slow"]])
    group = {row[2]: row[3] for row in report_rows(runs) if row[0] == "group"}
    assert group["runs"] == "2"
    assert group["median_p90_ms.q1"] == group["median_p90_ms.q3"]


def test_mixed_failure_plans_warn(run_dirs, tmp_path, caplog):
    other = build_scenario(small_values(**{"failures.first_failure_time_s": 80.0, "scenario.run_duration_s": 380.0}))
    odd = execute_run(other, tmp_path / "odd", seed=5).directory
    with caplog.at_level(logging.WARNING, logger="FAULTSIM.reporting"):
        load_runs([run_dirs["slow"], odd])
    assert "failure plans differ" in caplog.text


def test_render_table_aligns_columns():
    text = render_table(("a", "value"), [["long-name", "1"], ["x", ""]])
    lines = text.splitlines()
    assert lines[0].startswith("a          value")
    assert lines[1] == "---------  -----"
    assert lines[3] == "x          -"


def test_sweep_row_censors_unrecovered(run_dirs):
    summary = summarize_run(run_dirs["slow"])
    summary.censored_durations = [150.0, 40.0]
    summary.latency_recovered = [False, True]
    summary.convergence_rounds = [1, 3]
    row = sweep_row("60", [summary])
    assert row[:3] == ["60", "1", "40"]
    assert row[4] == "1"
    assert row[5] == "0.5"


def test_sweep_plan_and_layout(tmp_path):
    base = build_scenario(small_values())
    plan = plan_sweep(base, "rebalance.max_warmup_replicas", ["1", "4"], [1, 2], tmp_path)
    assert len(plan) == 4
    assert plan[0].out_dir == str(run_directory(tmp_path, "rebalance.max_warmup_replicas", "1", 1))
    assert {job.config.rebalance.max_warmup_replicas for job in plan} == {1, 4}
    with pytest.raises(KeyError):
        plan_sweep(base, "rebalance.unknown", ["1"], [1], tmp_path)


def test_single_value_sweep_equals_plain_run(tmp_path):
    base = build_scenario(small_values())
    result = run_sweep(base, "rebalance.max_warmup_replicas", ["2"], [5], tmp_path / "sweep")
    plain = execute_run(base, tmp_path / "plain", seed=5).directory
    swept = run_directory(tmp_path / "sweep", "rebalance.max_warmup_replicas", "2", 5)
    for name in (artifacts.METRICS_FILE, artifacts.RECOVERY_FILE):
        assert (swept / name).read_bytes() == (plain / name).read_bytes()
    lines = result.table.read_text().splitlines()
    assert lines[0] == "value,runs,median_recovery_lat_p90_s,median_p90_ms,median_convergence_rounds,recovered_fraction"
    assert lines[1].startswith("2,1,")


def test_recovery_search_stops_at_next_injection(tmp_path):
    config = build_scenario(small_values(**{"detector.failure_period_s": 720.0, "detector.stable_window_s": 120.0}))
    report = execute_run(config, tmp_path / "period", seed=5).report
    for failure in report.failures[:1]:
        for verdict in failure.verdicts.values():
            if verdict.recovered:
                assert verdict.t_recover + 120.0 <= 250.0


def test_group_rows_carry_recovery_quartiles_per_metric(run_dirs):
    runs = load_runs([run_dirs["slow"], run_dirs["slow"]])
    group = {row[2]: row[3] for row in report_rows(runs) if row[0] == "group"}
    summary = runs[0]
    for metric in ("output_tp", "lat_p90_ms"):
        assert group[f"{metric}.failures"] == str(2 * summary.judged[metric])
        recovered = summary.recovery_durations[metric]
        assert group[f"{metric}.recovered"] == str(2 * len(recovered))
        if recovered:
            assert float(group[f"{metric}.recovery_s.q1"]) <= float(group[f"{metric}.recovery_s.median"])
            assert float(group[f"{metric}.recovery_s.median"]) <= float(group[f"{metric}.recovery_s.q3"])
        else:
            assert f"{metric}.recovery_s.median" not in group
