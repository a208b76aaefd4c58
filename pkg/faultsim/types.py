"""Shared types for the faultsim package: enums and dataclasses passed between modules."""

from dataclasses import dataclass, field
from enum import Enum
from typing import TYPE_CHECKING, Any, Dict, Iterator, List, Optional, Sequence, Tuple

if TYPE_CHECKING:
    from faultsim.scenario import ScenarioConfig


class TaskStatus(Enum):
    ACTIVE = "active"
    WARMING = "warming"
    STANDBY = "standby"
    ORPHANED = "orphaned"


class MembershipKind(Enum):
    WORKER_LOST = "worker_lost"
    WORKER_JOINED = "worker_joined"


class EventKind(Enum):
    FAILURE = "FAILURE"
    JOIN = "JOIN"
    PROBE = "PROBE"
    COMMIT = "COMMIT"


@dataclass
class TaskState:
    """Snapshot of one task (one input partition) inside a running simulation."""

    task_id: int
    status: TaskStatus
    owner: Optional[int]
    queue: float
    changelog_backlog: float
    last_commit_offset: float
    produced_offset: float
    consumed_offset: float = 0.0
    warming_on: Optional[int] = None

    def to_dict(self) -> Dict[str, Any]:
        return {
            "task_id": self.task_id,
            "status": self.status.value,
            "owner": self.owner,
            "queue": self.queue,
            "changelog_backlog": self.changelog_backlog,
            "last_commit_offset": self.last_commit_offset,
            "produced_offset": self.produced_offset,
            "consumed_offset": self.consumed_offset,
            "warming_on": self.warming_on,
        }


@dataclass
class WorkerInstance:
    worker_id: int
    alive: bool
    capacity: float
    assigned_tasks: Dict[str, List[int]] = field(default_factory=dict)
    cpu_utilization: float = 0.0

    def to_dict(self) -> Dict[str, Any]:
        return {
            "worker_id": self.worker_id,
            "alive": self.alive,
            "capacity": self.capacity,
            "assigned_tasks": {k: list(v) for k, v in self.assigned_tasks.items()},
            "cpu_utilization": self.cpu_utilization,
        }


@dataclass
class Assignment:
    """Task ownership at one rebalance generation.

    ``active`` maps task -> worker, ``warming`` maps task -> destination worker of its
    warm-up replica, ``standby`` maps task -> sorted tuple of standby holders.
    """

    active: Dict[int, int] = field(default_factory=dict)
    warming: Dict[int, int] = field(default_factory=dict)
    standby: Dict[int, Tuple[int, ...]] = field(default_factory=dict)
    epoch: int = 0

    def copy(self) -> "Assignment":
        return Assignment(
            active=dict(self.active),
            warming=dict(self.warming),
            standby={t: tuple(ws) for t, ws in self.standby.items()},
            epoch=self.epoch,
        )

    def tasks_of(self, worker_id: int) -> List[int]:
        return sorted(t for t, w in self.active.items() if w == worker_id)

    def active_counts(self, workers: Sequence[int]) -> Dict[int, int]:
        counts = {w: 0 for w in workers}
        for w in self.active.values():
            if w in counts:
                counts[w] += 1
        return counts

    def standby_counts(self, workers: Sequence[int]) -> Dict[int, int]:
        counts = {w: 0 for w in workers}
        for holders in self.standby.values():
            for w in holders:
                if w in counts:
                    counts[w] += 1
        return counts

    def to_dict(self) -> Dict[str, Any]:
        return {
            "active": {str(t): w for t, w in sorted(self.active.items())},
            "warming": {str(t): w for t, w in sorted(self.warming.items())},
            "standby": {str(t): list(ws) for t, ws in sorted(self.standby.items())},
            "epoch": self.epoch,
        }


@dataclass
class MembershipEvent:
    time: float
    kind: MembershipKind
    worker_id: int

    def to_dict(self) -> Dict[str, Any]:
        return {"time": self.time, "kind": self.kind.value, "worker_id": self.worker_id}


@dataclass
class FailureEvent:
    index: int
    time: float
    victims: Tuple[int, ...]
    replacement_times: Dict[int, float] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "index": self.index,
            "time": self.time,
            "victims": list(self.victims),
            "replacement_times": {str(w): t for w, t in self.replacement_times.items()},
        }


@dataclass
class MetricSeries:
    name: str
    times: List[float]
    values: List[float]
    cadence: float = 1.0

    def __len__(self) -> int:
        return len(self.times)

    def since(self, start: float) -> List[float]:
        return [v for t, v in zip(self.times, self.values) if t >= start]

    def between(self, start: float, end: float) -> List[float]:
        return [v for t, v in zip(self.times, self.values) if start <= t <= end]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "name": self.name,
            "cadence": self.cadence,
            "samples": [[t, v] for t, v in zip(self.times, self.values)],
        }


@dataclass
class LatencyWindow:
    window_start: float
    p50: float
    p90: float
    p99: float

    def to_dict(self) -> Dict[str, Any]:
        return {
            "window_start": self.window_start,
            "p50": self.p50,
            "p90": self.p90,
            "p99": self.p99,
        }


@dataclass
class LedgerWindow:
    task_id: int
    window: int
    expected_outputs: float
    emitted_outputs: float
    replayed: bool

    @property
    def duplicates(self) -> float:
        return self.emitted_outputs - self.expected_outputs


@dataclass
class OutputLedger:
    """Closed commit windows per task, in closing order."""

    closed: List[LedgerWindow] = field(default_factory=list)

    def close(
        self,
        task_id: int,
        window: int,
        expected: float,
        emitted: float,
        replayed: bool,
    ) -> None:
        self.closed.append(LedgerWindow(task_id, window, expected, emitted, replayed))

    def windows(self, task_id: Optional[int] = None) -> Iterator[LedgerWindow]:
        for entry in self.closed:
            if task_id is None or entry.task_id == task_id:
                yield entry

    @property
    def replayed_windows(self) -> List[Tuple[int, int]]:
        return [(w.task_id, w.window) for w in self.closed if w.replayed]

    def total_expected(self) -> float:
        return sum(w.expected_outputs for w in self.closed)

    def total_emitted(self) -> float:
        return sum(w.emitted_outputs for w in self.closed)


@dataclass
class ConvergenceRecord:
    failure_idx: int
    first_probe: Optional[float] = None
    converged: Optional[float] = None
    rounds: Optional[int] = None

    def to_dict(self) -> Dict[str, Any]:
        return {
            "failure_idx": self.failure_idx,
            "first_probe": self.first_probe,
            "converged": self.converged,
            "rounds": self.rounds,
        }


@dataclass
class RunArtifacts:
    """Everything one simulation run produces, before export."""

    config: "ScenarioConfig"
    seed: int
    input_per_second: List[float]
    output_per_second: List[float]
    lag_per_second: List[float]
    latency_windows: List[LatencyWindow]
    cpu_samples: List[Tuple[float, int, float]]
    failures: List[FailureEvent]
    events: List[str]
    ledger: OutputLedger
    convergence: List[ConvergenceRecord]
    total_produced: float = 0.0
    imbalance_per_second: List[int] = field(default_factory=list)


@dataclass
class ReferenceStats:
    metric: str
    mean: float
    std: float
    window_start: float
    window_end: float
    samples: int = 0

    def to_dict(self) -> Dict[str, Any]:
        return {
            "metric": self.metric,
            "mean": self.mean,
            "std": self.std,
            "window": [self.window_start, self.window_end],
            "samples": self.samples,
        }


@dataclass
class Verdict:
    recovered: bool
    t_recover: Optional[float] = None
    duration: Optional[float] = None

    @classmethod
    def unrecovered(cls) -> "Verdict":
        return cls(recovered=False)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "recovered": self.recovered,
            "t_recover": self.t_recover,
            "duration": self.duration,
        }


@dataclass
class FailureVerdicts:
    index: int
    t_inject: float
    verdicts: Dict[str, Verdict] = field(default_factory=dict)


@dataclass
class RecoveryReport:
    metrics: List[str]
    failures: List[FailureVerdicts] = field(default_factory=list)
    references: Dict[str, ReferenceStats] = field(default_factory=dict)

    def durations(self, metric: str) -> List[float]:
        return [
            f.verdicts[metric].duration
            for f in self.failures
            if metric in f.verdicts and f.verdicts[metric].recovered
        ]

    def recovered_fraction(self, metric: str) -> Optional[float]:
        judged = [f.verdicts[metric] for f in self.failures if metric in f.verdicts]
        if not judged:
            return None
        return sum(1 for v in judged if v.recovered) / len(judged)

    def summary(self) -> Dict[str, Dict[str, Any]]:
        from faultsim.metrics import lower_median

        out: Dict[str, Dict[str, Any]] = {}
        for metric in self.metrics:
            durations = self.durations(metric)
            out[metric] = {
                "failures": len(self.failures),
                "recovered": len(durations),
                "recovered_fraction": self.recovered_fraction(metric),
                "median_duration": lower_median(durations) if durations else None,
            }
        return out
