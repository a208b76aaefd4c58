"""Scenario definitions: config dataclasses, the key/value schema, parser, validator and builtins."""

import logging
import math
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, Mapping, Tuple, Union

from faultsim.errors import ScenarioParseError, ScenarioValidationError

logger = logging.getLogger("FAULTSIM.scenario")

DEFAULT_LOAD_FACTOR = 0.4
DETECTABLE_METRICS = ("input_tp", "output_tp", "lag", "lat_p50_ms", "lat_p90_ms", "lat_p99_ms")
BUILTIN_NAMES = ("default", "tuned")


# ═══════════════════════════════════════════════════════════════════════
# CONFIG DATACLASSES
# ═══════════════════════════════════════════════════════════════════════


@dataclass(frozen=True)
class WorkloadConfig:
    input_rate: float
    num_partitions: int = 40
    selectivity: float = 0.5
    num_consumers: int = 20000
    base_processing_latency: float = 0.039
    latency_congestion: float = 0.8
    latency_noise: float = 0.05
    state_window: float = 60.0

    @property
    def expected_output_rate(self) -> float:
        return self.selectivity * self.input_rate

    @property
    def per_task_rate(self) -> float:
        return self.input_rate / self.num_partitions


@dataclass(frozen=True)
class ClusterConfig:
    num_workers: int = 8
    worker_capacity: float = 10000.0
    replay_rate: float = 20000.0
    stream_threads: int = 5
    replacement_delay_min: float = 2.0
    replacement_delay_max: float = 10.0


@dataclass(frozen=True)
class RebalanceConfig:
    probing_interval: float = 600.0
    max_warmup_replicas: int = 2
    acceptable_recovery_lag: float = 10000.0
    num_standby_replicas: int = 0
    commit_interval: float = 2.0


@dataclass(frozen=True)
class FailurePlan:
    first_failure_time: float = 720.0
    failure_period: float = 720.0
    kills_per_failure: int = 2
    num_failures: int = 3


@dataclass(frozen=True)
class DetectorConfig:
    warmup_end: float = 120.0
    recovery_threshold: float = 0.15
    stable_window: float = 160.0
    failure_period: float = 720.0
    detection_threshold: float = 0.15
    detection_consecutive_samples: int = 3
    moving_window: int = 5
    reference_span: float = 300.0
    detection_metric: str = "output_tp"


@dataclass(frozen=True)
class ScenarioConfig:
    workload: WorkloadConfig
    cluster: ClusterConfig = field(default_factory=ClusterConfig)
    rebalance: RebalanceConfig = field(default_factory=RebalanceConfig)
    failures: FailurePlan = field(default_factory=FailurePlan)
    detector: DetectorConfig = field(default_factory=DetectorConfig)
    run_duration: float = 3600.0
    seed: int = 42
    name: str = "default"
    tick: float = 0.1

    @property
    def num_ticks(self) -> int:
        return int(round(self.run_duration / self.tick))

    def ticks(self, seconds: float) -> int:
        """Seconds expressed as a whole number of ticks (rounded up)."""
        return int(math.ceil(seconds / self.tick - 1e-9))

    def to_dict(self) -> Dict[str, Any]:
        return flatten(self)


@dataclass
class ValidationResult:
    violations: List[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def raise_for_violations(self) -> None:
        if self.violations:
            raise ScenarioValidationError(self.violations)

    def to_dict(self) -> Dict[str, Any]:
        return {"ok": self.ok, "violations": list(self.violations)}


# ═══════════════════════════════════════════════════════════════════════
# SCHEMA
# ═══════════════════════════════════════════════════════════════════════


@dataclass(frozen=True)
class SchemaEntry:
    key: str
    section: str
    attr: str
    kind: type
    default: Any
    unit: str
    description: str


def _entry(key: str, attr: str, kind: type, default: Any, unit: str, description: str) -> SchemaEntry:
    return SchemaEntry(key, key.split(".", 1)[0], attr, kind, default, unit, description)


# Single source of truth for keys and defaults; docs/SCENARIO_SCHEMA.md mirrors it.
SCENARIO_SCHEMA: Tuple[SchemaEntry, ...] = (
    _entry("scenario.name", "name", str, "default", "-", "label used to group runs in reports"),
    _entry("scenario.run_duration_s", "run_duration", float, 3600.0, "s", "simulated time"),
    _entry("scenario.seed", "seed", int, 42, "-", "default seed when the CLI gives none"),
    _entry("scenario.tick_s", "tick", float, 0.1, "s", "integration step"),
    _entry("workload.input_rate", "input_rate", float, None, "records/s",
           "aggregate input rate; auto = 0.4 x num_workers x worker_capacity"),
    _entry("workload.num_partitions", "num_partitions", int, 40, "count", "input partitions, one task each"),
    _entry("workload.selectivity", "selectivity", float, 0.5, "fraction", "outputs per input record"),
    _entry("workload.num_consumers", "num_consumers", int, 20000, "count", "consumers, aggregated per task"),
    _entry("workload.base_processing_latency_s", "base_processing_latency", float, 0.039, "s",
           "service time per record on an idle worker"),
    _entry("workload.latency_congestion", "latency_congestion", float, 0.8, "-",
           "service time inflation k in base / (1 - k x thread utilization)"),
    _entry("workload.latency_noise", "latency_noise", float, 0.05, "-", "relative std of latency jitter"),
    _entry("workload.state_window_s", "state_window", float, 60.0, "s", "per-task state cap in seconds of input"),
    _entry("cluster.num_workers", "num_workers", int, 8, "count", "worker instances at start"),
    _entry("cluster.worker_capacity", "worker_capacity", float, 10000.0, "records/s", "service rate per worker"),
    _entry("cluster.replay_rate", "replay_rate", float, 20000.0, "records/s",
           "changelog replay rate per worker"),
    _entry("cluster.stream_threads", "stream_threads", int, 5, "count",
           "processing threads per worker; tasks are dealt to them in id order"),
    _entry("cluster.replacement_delay_min_s", "replacement_delay_min", float, 2.0, "s",
           "lower bound of replacement start delay"),
    _entry("cluster.replacement_delay_max_s", "replacement_delay_max", float, 10.0, "s",
           "upper bound of replacement start delay"),
    _entry("rebalance.probing_interval_s", "probing_interval", float, 600.0, "s",
           "delay between follow-up rebalances"),
    _entry("rebalance.max_warmup_replicas", "max_warmup_replicas", int, 2, "count",
           "cluster-wide cap on warming replicas"),
    _entry("rebalance.acceptable_recovery_lag", "acceptable_recovery_lag", float, 10000.0, "records",
           "backlog at or below which a warm-up is ready"),
    _entry("rebalance.num_standby_replicas", "num_standby_replicas", int, 0, "count", "standbys per task"),
    _entry("rebalance.commit_interval_s", "commit_interval", float, 2.0, "s", "offset commit period"),
    _entry("failures.first_failure_time_s", "first_failure_time", float, 720.0, "s", "first injection"),
    _entry("failures.failure_period_s", "failure_period", float, 720.0, "s", "time between injections"),
    _entry("failures.kills_per_failure", "kills_per_failure", int, 2, "count", "workers killed per injection"),
    _entry("failures.num_failures", "num_failures", int, 3, "count", "number of injections"),
    _entry("detector.warmup_end_s", "warmup_end", float, 120.0, "s", "end of warm-up, start of reference"),
    _entry("detector.recovery_threshold", "recovery_threshold", float, 0.15, "fraction",
           "two-sided band around the reference mean"),
    _entry("detector.stable_window_s", "stable_window", float, 160.0, "s",
           "time the metric must stay inside the band"),
    _entry("detector.failure_period_s", "failure_period", float, 720.0, "s",
           "spacing of detected failures after the first; simulated runs use failures.failure_period_s"),
    _entry("detector.detection_threshold", "detection_threshold", float, 0.15, "fraction",
           "deviation that marks the first failure"),
    _entry("detector.detection_consecutive_samples", "detection_consecutive_samples", int, 3, "count",
           "consecutive deviating samples needed"),
    _entry("detector.moving_window", "moving_window", int, 5, "samples", "moving average length"),
    _entry("detector.reference_span_s", "reference_span", float, 300.0, "s", "maximum reference window length"),
    _entry("detector.detection_metric", "detection_metric", str, "output_tp", "-",
           "metrics.csv column used to find the first failure"),
)

SCHEMA_BY_KEY: Dict[str, SchemaEntry] = {entry.key: entry for entry in SCENARIO_SCHEMA}

_SECTION_ATTR = {
    "workload": "workload",
    "cluster": "cluster",
    "rebalance": "rebalance",
    "failures": "failures",
    "detector": "detector",
}

_LINE_RE = re.compile(r"^([a-z_]+\.[a-z0-9_]+)\s*=\s*(.*)$")


def schema_table() -> str:
    """Plain-text rendering of the schema for ``--help``."""
    width = max(len(entry.key) for entry in SCENARIO_SCHEMA)
    lines = ["scenario keys (section.key = value):"]
    for entry in SCENARIO_SCHEMA:
        default = "auto" if entry.default is None else entry.default
        lines.append(f"  {entry.key:<{width}}  default {default} [{entry.unit}]  {entry.description}")
    return "\n".join(lines)


# ═══════════════════════════════════════════════════════════════════════
# PARSING AND SERIALIZATION
# ═══════════════════════════════════════════════════════════════════════


def coerce_value(key: str, raw: Any) -> Any:
    """Convert ``raw`` to the schema type of ``key``; raises ValueError on mismatch."""
    entry = SCHEMA_BY_KEY.get(key)
    if entry is None:
        raise KeyError(key)
    if entry.default is None and isinstance(raw, str) and raw.strip().lower() == "auto":
        return None
    if entry.kind is str:
        text = str(raw).strip()
        if not text:
            raise ValueError("empty value")
        return text
    if entry.kind is int:
        if isinstance(raw, bool):
            raise ValueError("expected an integer")
        if isinstance(raw, float):
            if not raw.is_integer():
                raise ValueError(f"expected an integer, got {raw!r}")
            return int(raw)
        return int(str(raw).strip())
    value = float(str(raw).strip()) if not isinstance(raw, (int, float)) else float(raw)
    if not math.isfinite(value):
        raise ValueError("value must be finite")
    return value


def parse_scenario(text: str) -> Dict[str, Any]:
    """Parse a scenario document into a flat ``{key: value}`` mapping of the keys it sets."""
    values: Dict[str, Any] = {}
    for line_no, line in enumerate(text.splitlines(), start=1):
        content = line.split("#", 1)[0].strip()
        if not content:
            continue
        match = _LINE_RE.match(content)
        if not match:
            raise ScenarioParseError(line_no, line, "expected 'section.key = value'")
        key, raw = match.group(1), match.group(2).strip()
        if key not in SCHEMA_BY_KEY:
            raise ScenarioParseError(line_no, line, f"unknown key {key}")
        if key in values:
            raise ScenarioParseError(line_no, line, f"duplicate key {key}")
        try:
            values[key] = coerce_value(key, raw)
        except ValueError as exc:
            raise ScenarioParseError(line_no, line, f"bad value for {key} ({exc})") from exc
    return values


def build_scenario(values: Mapping[str, Any]) -> ScenarioConfig:
    """Build a config from a flat mapping; missing keys take their defaults, auto input rate is resolved."""
    sections: Dict[str, Dict[str, Any]] = {name: {} for name in _SECTION_ATTR}
    top: Dict[str, Any] = {}
    for entry in SCENARIO_SCHEMA:
        value = values.get(entry.key, entry.default)
        if entry.section == "scenario":
            top[entry.attr] = value
        else:
            sections[entry.section][entry.attr] = value
    cluster = ClusterConfig(**sections["cluster"])
    workload_values = sections["workload"]
    if workload_values["input_rate"] is None:
        workload_values["input_rate"] = DEFAULT_LOAD_FACTOR * cluster.num_workers * cluster.worker_capacity
    return ScenarioConfig(
        workload=WorkloadConfig(**workload_values),
        cluster=cluster,
        rebalance=RebalanceConfig(**sections["rebalance"]),
        failures=FailurePlan(**sections["failures"]),
        detector=DetectorConfig(**sections["detector"]),
        **top,
    )


def flatten(config: ScenarioConfig) -> Dict[str, Any]:
    out: Dict[str, Any] = {}
    for entry in SCENARIO_SCHEMA:
        holder = config if entry.section == "scenario" else getattr(config, _SECTION_ATTR[entry.section])
        out[entry.key] = getattr(holder, entry.attr)
    return out


def load_scenario(text: str) -> ScenarioConfig:
    config = build_scenario(parse_scenario(text))
    validate(config).raise_for_violations()
    return config


def load_scenario_file(path: Union[str, Path]) -> ScenarioConfig:
    source = Path(path)
    config = load_scenario(source.read_text(encoding="utf-8"))
    logger.info("loaded scenario %s from %s", config.name, source)
    return config


def serialize(config: ScenarioConfig) -> str:
    lines = [f"# faultsim scenario: {config.name}"]
    current = None
    for key, value in flatten(config).items():
        section = key.split(".", 1)[0]
        if section != current:
            if current is not None:
                lines.append("")
            current = section
        rendered = repr(value) if isinstance(value, float) else str(value)
        lines.append(f"{key} = {rendered}")
    return "\n".join(lines) + "\n"


def with_overrides(config: ScenarioConfig, overrides: Mapping[str, Any]) -> ScenarioConfig:
    """Return a validated copy of ``config`` with flat-key overrides applied."""
    values = flatten(config)
    for key, raw in overrides.items():
        if key not in SCHEMA_BY_KEY:
            raise KeyError(key)
        try:
            values[key] = coerce_value(key, raw)
        except ValueError as exc:
            raise ScenarioValidationError([f"{key}: {exc}"]) from exc
    updated = build_scenario(values)
    validate(updated).raise_for_violations()
    return updated


def parse_overrides(pairs: List[str]) -> Dict[str, str]:
    overrides: Dict[str, str] = {}
    for pair in pairs:
        key, sep, value = pair.partition("=")
        if not sep or not key.strip():
            raise ValueError(f"override must look like section.key=value, got {pair!r}")
        overrides[key.strip()] = value.strip()
    return overrides


# ═══════════════════════════════════════════════════════════════════════
# VALIDATION AND BUILTINS
# ═══════════════════════════════════════════════════════════════════════


def _is_tick_multiple(value: float, tick: float) -> bool:
    ratio = value / tick
    return abs(ratio - round(ratio)) < 1e-6


def validate(config: ScenarioConfig) -> ValidationResult:
    """Check every invariant and return all violations, not only the first."""
    w, c, r, f, d = config.workload, config.cluster, config.rebalance, config.failures, config.detector
    violations: List[str] = []

    if w.input_rate <= 0:
        violations.append("input_rate must be positive")
    if w.num_partitions < 1:
        violations.append("num_partitions must be at least 1")
    if not 0.0 <= w.selectivity <= 1.0:
        violations.append("selectivity out of range [0, 1]")
    if w.num_consumers < 0:
        violations.append("num_consumers must be non-negative")
    if w.base_processing_latency <= 0:
        violations.append("base_processing_latency must be positive")
    if not 0.0 <= w.latency_congestion < 1.0:
        violations.append("latency_congestion out of range [0, 1)")
    if w.latency_noise < 0:
        violations.append("latency_noise must be non-negative")
    if w.state_window < 0:
        violations.append("state_window must be non-negative")

    if c.num_workers < 1:
        violations.append("num_workers must be at least 1")
    if c.worker_capacity <= 0:
        violations.append("worker_capacity must be positive")
    if c.replay_rate <= 0:
        violations.append("replay_rate must be positive")
    if c.stream_threads < 1:
        violations.append("stream_threads must be at least 1")
    if not 0 < c.replacement_delay_min <= c.replacement_delay_max:
        violations.append("replacement delays must satisfy 0 < min <= max")

    if r.probing_interval <= 0:
        violations.append("probing_interval must be positive")
    if r.max_warmup_replicas < 1:
        violations.append("max_warmup_replicas must be at least 1")
    if r.num_standby_replicas < 0:
        violations.append("num_standby_replicas must be non-negative")
    elif r.num_standby_replicas > 0 and r.num_standby_replicas >= c.num_workers:
        violations.append("num_standby_replicas must be below num_workers")
    if r.commit_interval <= 0:
        violations.append("commit_interval must be positive")
    if r.acceptable_recovery_lag < 0:
        violations.append("acceptable_recovery_lag must be non-negative")

    if f.failure_period <= 0:
        violations.append("failure_period must be positive")
    if f.num_failures < 0:
        violations.append("num_failures must be non-negative")
    if f.kills_per_failure >= c.num_workers:
        violations.append("kills_per_failure must be below num_workers")
    if f.num_failures > 0 and f.kills_per_failure < 1:
        violations.append("kills_per_failure must be at least 1 when failures are planned")
    if f.num_failures > 0 and f.failure_period <= c.replacement_delay_max:
        violations.append("failure_period must exceed replacement_delay_max")

    if not 0 < d.recovery_threshold < 1:
        violations.append("recovery_threshold out of range (0, 1)")
    if not 0 < d.detection_threshold < 1:
        violations.append("detection_threshold out of range (0, 1)")
    if d.stable_window <= 0:
        violations.append("stable_window must be positive")
    if d.failure_period <= 0:
        violations.append("detector failure_period must be positive")
    if d.detection_consecutive_samples < 1:
        violations.append("detection_consecutive_samples must be at least 1")
    if d.moving_window < 1:
        violations.append("moving_window must be at least 1")
    if d.reference_span <= 0:
        violations.append("reference_span must be positive")
    if d.detection_metric not in DETECTABLE_METRICS:
        violations.append(f"detection_metric must be one of {', '.join(DETECTABLE_METRICS)}")

    if f.first_failure_time <= d.warmup_end:
        violations.append("reference window empty: first_failure_time must exceed warmup_end")
    if f.num_failures > 0 and config.run_duration < f.first_failure_time + f.num_failures * f.failure_period:
        violations.append("run_duration shorter than the failure plan")
    if config.run_duration <= 0:
        violations.append("run_duration must be positive")

    if config.tick <= 0:
        violations.append("tick must be positive")
    else:
        if r.commit_interval > 0 and not _is_tick_multiple(r.commit_interval, config.tick):
            violations.append("commit_interval must be a multiple of tick")
        if r.probing_interval > 0 and not _is_tick_multiple(r.probing_interval, config.tick):
            violations.append("probing_interval must be a multiple of tick")
        if config.run_duration > 0 and not _is_tick_multiple(config.run_duration, 1.0):
            violations.append("run_duration must be whole seconds")
        if not _is_tick_multiple(1.0, config.tick):
            violations.append("tick must divide one second")

    return ValidationResult(violations)


def builtin_scenario(name: str) -> ScenarioConfig:
    """The two calibrated setups: framework defaults and the tuned regime."""
    if name not in BUILTIN_NAMES:
        raise KeyError(f"unknown builtin scenario {name!r}; expected one of {', '.join(BUILTIN_NAMES)}")
    base = build_scenario({})
    if name == "default":
        return base
    return replace(
        base,
        name="tuned",
        rebalance=replace(base.rebalance, probing_interval=60.0, max_warmup_replicas=8, num_standby_replicas=0),
    )


def resolve_scenario(name_or_path: str) -> ScenarioConfig:
    if name_or_path in BUILTIN_NAMES:
        return builtin_scenario(name_or_path)
    path = Path(name_or_path)
    if not path.is_file():
        raise KeyError(f"unknown scenario {name_or_path!r}: not a builtin name and no such file")
    return load_scenario_file(path)


def describe(config: ScenarioConfig) -> Dict[str, Any]:
    return {
        "name": config.name,
        "workers": config.cluster.num_workers,
        "partitions": config.workload.num_partitions,
        "input_rate": config.workload.input_rate,
        "stream_threads": config.cluster.stream_threads,
        "probing_interval": config.rebalance.probing_interval,
        "max_warmup_replicas": config.rebalance.max_warmup_replicas,
        "standbys": config.rebalance.num_standby_replicas,
        "kills_per_failure": config.failures.kills_per_failure,
        "num_failures": config.failures.num_failures,
    }



def run_detector(config: ScenarioConfig) -> DetectorConfig:
    """Detector settings for judging a simulated run; recovery search stops at the next planned injection."""
    if config.failures.num_failures > 0:
        return replace(config.detector, failure_period=config.failures.failure_period)
    return config.detector
