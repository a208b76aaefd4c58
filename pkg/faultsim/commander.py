"""CLI to the fault recovery simulator: run, detect, report, sweep."""

import argparse
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

from faultsim import artifacts
from faultsim.detector import (
    RECOVERY_HEADER,
    REPORT_METRICS,
    build_report,
    known_metric,
    write_recovery_csv,
)
from faultsim.errors import FaultsimError
from faultsim.metrics import format_number
from faultsim.reporting import (
    REPORT_HEADER,
    SWEEP_HEADER,
    RunSummary,
    contrast_lines,
    load_runs,
    render_table,
    report_rows,
    write_report,
)
from faultsim.runner import RunResult, execute_run
from faultsim.scenario import (
    DETECTABLE_METRICS,
    SCHEMA_BY_KEY,
    DetectorConfig,
    ScenarioConfig,
    parse_overrides,
    resolve_scenario,
    schema_table,
    with_overrides,
)
from faultsim.sweep import SweepResult, run_sweep
from faultsim.types import RecoveryReport

logger = logging.getLogger("FAULTSIM.cli")


class UsageError(Exception):
    """Bad command-line input that argparse cannot catch on its own."""


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


class FaultsimCommander:
    def __init__(self, output_root: Path):
        self.output_root = Path(output_root)

    def load(self, scenario: str, overrides: Sequence[str]) -> ScenarioConfig:
        config = resolve_scenario(scenario)
        if overrides:
            try:
                pairs = parse_overrides(list(overrides))
            except ValueError as exc:
                raise UsageError(str(exc)) from exc
            unknown = [key for key in pairs if key not in SCHEMA_BY_KEY]
            if unknown:
                raise UsageError(f"unknown scenario key(s): {', '.join(unknown)}")
            config = with_overrides(config, pairs)
        return config

    def run(self, config: ScenarioConfig, seed: Optional[int], out: Optional[str]) -> RunResult:
        seed = config.seed if seed is None else seed
        target = Path(out) if out else self.output_root / f"{config.name}-seed-{seed}"
        return execute_run(config, target, seed=seed)

    def detect(
        self,
        input_path: str,
        metrics: Sequence[str],
        cfg: DetectorConfig,
        ground_truth: Optional[str],
        out: Optional[str],
    ) -> Tuple[RecoveryReport, Path]:
        unknown = [m for m in dict.fromkeys([*metrics, cfg.detection_metric]) if not known_metric(m)]
        if unknown:
            raise UsageError(
                f"unknown metric(s): {', '.join(unknown)}; choose from {', '.join(DETECTABLE_METRICS)}"
            )
        source = Path(input_path)
        report = build_report(source, cfg, ground_truth=ground_truth, metrics=metrics)
        base = source if source.is_dir() else source.parent
        target = Path(out) if out else base / artifacts.RECOVERY_FILE
        return report, write_recovery_csv(report, target)

    def report(self, run_dirs: Sequence[str], out: str) -> Tuple[List[RunSummary], Path]:
        runs = load_runs(run_dirs)
        return runs, write_report(runs, out)

    def sweep(
        self,
        config: ScenarioConfig,
        param: str,
        values: Sequence[str],
        seeds: Sequence[int],
        out: Optional[str],
        jobs: int,
    ) -> SweepResult:
        if param not in SCHEMA_BY_KEY:
            raise UsageError(f"unknown scenario key {param!r}")
        target = Path(out) if out else self.output_root / f"sweep-{param}"
        return run_sweep(config, param, values, seeds, target, jobs=jobs)


# ═══════════════════════════════════════════════════════════════════════
# RENDERING
# ═══════════════════════════════════════════════════════════════════════


def verdict_rows(report: RecoveryReport) -> List[List[str]]:
    rows = []
    for failure in report.failures:
        for metric in report.metrics:
            verdict = failure.verdicts[metric]
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
    return rows


def _print_run(result: RunResult) -> None:
    summary = result.summary()
    print(f"run {summary['scenario']} seed={summary['seed']} -> {summary['directory']}")
    ledger = summary["ledger"]
    print(
        f"failures: {summary['failures']}  outputs expected={format_number(ledger['expected_outputs'])} "
        f"emitted={format_number(ledger['emitted_outputs'])}"
    )
    print(render_table(RECOVERY_HEADER, verdict_rows(result.report)))


# ═══════════════════════════════════════════════════════════════════════
# PARSER
# ═══════════════════════════════════════════════════════════════════════


def _csv_list(text: str) -> List[str]:
    items = [item.strip() for item in text.split(",") if item.strip()]
    if not items:
        raise argparse.ArgumentTypeError("expected a comma-separated list")
    return items


def _seed_list(text: str) -> List[int]:
    try:
        return [int(item) for item in _csv_list(text)]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"seeds must be integers: {text!r}") from exc


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="faultsim",
        description="Fault recovery simulator for stateful stream processing clusters",
        epilog=schema_table(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument(
        "--log-level",
        default=os.getenv("FAULTSIM_LOG_LEVEL", "WARNING"),
        help="DEBUG|INFO|WARNING|ERROR",
    )
    parser.add_argument(
        "--output-root",
        default=os.getenv("FAULTSIM_OUTPUT_ROOT", "runs"),
        help="Default parent directory for run and sweep outputs",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser(
        "run",
        help="Simulate one scenario into a run directory",
        epilog=schema_table(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    run_p.add_argument("--scenario", default="default", help="Builtin name (default|tuned) or scenario file")
    run_p.add_argument("--seed", type=int, default=None)
    run_p.add_argument("--out", default=None, help="Run directory")
    run_p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", dest="overrides")

    defaults = DetectorConfig()
    detect_p = sub.add_parser("detect", help="Detect failures and recovery times in a metrics CSV")
    detect_p.add_argument("--input", required=True, help="metrics.csv or a run directory")
    detect_p.add_argument("--metric", action="append", default=None, dest="metrics")
    detect_p.add_argument("--threshold", type=float, default=defaults.recovery_threshold)
    detect_p.add_argument("--detection-threshold", type=float, default=defaults.detection_threshold)
    detect_p.add_argument("--detection-metric", default=defaults.detection_metric)
    detect_p.add_argument("--consecutive", type=int, default=defaults.detection_consecutive_samples)
    detect_p.add_argument("--moving-window", type=int, default=defaults.moving_window)
    detect_p.add_argument("--stable-window", type=float, default=defaults.stable_window)
    detect_p.add_argument("--failure-period", type=float, default=defaults.failure_period)
    detect_p.add_argument("--warmup-end", type=float, default=defaults.warmup_end)
    detect_p.add_argument("--reference-span", type=float, default=defaults.reference_span)
    detect_p.add_argument("--ground-truth", default=None, help="failures.csv with injection times")
    detect_p.add_argument("--out", default=None, help="recovery.csv path")

    report_p = sub.add_parser("report", help="Compare run directories")
    report_p.add_argument("run_dirs", nargs="+")
    report_p.add_argument("--out", default="report.csv")

    sweep_p = sub.add_parser(
        "sweep",
        help="Run one scenario key over several values and seeds",
        epilog=schema_table(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sweep_p.add_argument("--scenario", default="default")
    sweep_p.add_argument("--param", required=True, help="Scenario key, e.g. rebalance.probing_interval_s")
    sweep_p.add_argument("--values", required=True, type=_csv_list)
    sweep_p.add_argument("--seeds", type=_seed_list, default=None, help="Comma-separated seeds")
    sweep_p.add_argument("--out", default=None)
    sweep_p.add_argument("--jobs", type=int, default=int(os.getenv("FAULTSIM_JOBS", "1")))
    sweep_p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", dest="overrides")
    return parser


def _detector_config(args: argparse.Namespace) -> DetectorConfig:
    return replace(
        DetectorConfig(),
        warmup_end=args.warmup_end,
        recovery_threshold=args.threshold,
        stable_window=args.stable_window,
        failure_period=args.failure_period,
        detection_threshold=args.detection_threshold,
        detection_consecutive_samples=args.consecutive,
        moving_window=args.moving_window,
        reference_span=args.reference_span,
        detection_metric=args.detection_metric,
    )


def dispatch(commander: FaultsimCommander, args: argparse.Namespace) -> None:
    if args.command == "run":
        config = commander.load(args.scenario, args.overrides)
        _print_run(commander.run(config, args.seed, args.out))
    elif args.command == "detect":
        metrics = args.metrics or list(REPORT_METRICS)
        report, path = commander.detect(args.input, metrics, _detector_config(args), args.ground_truth, args.out)
        print(f"{len(report.failures)} failures detected; verdicts written to {path}")
        print(render_table(RECOVERY_HEADER, verdict_rows(report)))
    elif args.command == "report":
        runs, path = commander.report(args.run_dirs, args.out)
        print(render_table(REPORT_HEADER, report_rows(runs)))
        for line in contrast_lines(runs):
            print(line)
        print(f"report written to {path}")
    elif args.command == "sweep":
        config = commander.load(args.scenario, args.overrides)
        seeds = args.seeds or [config.seed]
        result = commander.sweep(config, args.param, args.values, seeds, args.out, max(1, args.jobs))
        print(render_table(SWEEP_HEADER, result.rows))
        print(f"sweep table written to {result.table}")


def main(argv: Optional[Sequence[str]] = None) -> None:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=getattr(logging, str(args.log_level).upper(), logging.WARNING),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    commander = FaultsimCommander(Path(args.output_root))

    try:
        dispatch(commander, args)
    except FaultsimError as exc:
        print(f"ERROR: {exc}", file=sys.stderr)
        raise SystemExit(2) from exc
    except (UsageError, KeyError) as exc:
        message = exc.args[0] if exc.args else exc
        print(f"ERROR: {message}", file=sys.stderr)
        raise SystemExit(1) from exc
    except OSError as exc:
        print(f"ERROR: {exc}", file=sys.stderr)
        raise SystemExit(2) from exc


if __name__ == "__main__":
    main()
