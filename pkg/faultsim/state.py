"""Mutable cluster state shared by the engine and failure injection.

Per-task quantities live in numpy arrays indexed by task id; per-worker quantities in arrays
indexed by worker id (initial workers first, replacements appended in join order).
"""

import heapq
import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional

import numpy as np

from faultsim.metrics import format_number
from faultsim.rebalance import imbalance, place_standbys
from faultsim.scenario import ScenarioConfig
from faultsim.types import (
    Assignment,
    ConvergenceRecord,
    EventKind,
    FailureEvent,
    MembershipEvent,
    MembershipKind,
    OutputLedger,
    TaskState,
    TaskStatus,
    WorkerInstance,
)

logger = logging.getLogger("FAULTSIM.state")


@dataclass(order=True)
class ScheduledEvent:
    tick: int
    seq: int
    kind: EventKind = field(compare=False)
    payload: Dict[str, Any] = field(compare=False, default_factory=dict)


class ClusterState:
    """Workers, tasks, offsets, backlogs, the event queue and the seeded random streams of one run.

    Ownership, liveness and replica arrays change only through the methods below; each change bumps
    ``layout_version`` so the engine rebuilds its cached per-assignment arrays.
    """

    def __init__(self, config: ScenarioConfig, seed: int) -> None:
        self.config = config
        self.seed = seed
        workload, cluster = config.workload, config.cluster
        self.num_tasks = workload.num_partitions
        self.task_rate = np.full(self.num_tasks, workload.per_task_rate)
        self.state_cap = workload.state_window * workload.per_task_rate
        self.max_workers = cluster.num_workers + config.failures.kills_per_failure * config.failures.num_failures

        self.tick_index = 0
        self.time = 0.0

        self.alive = np.zeros(self.max_workers, dtype=bool)
        self.alive[: cluster.num_workers] = True
        self.next_worker_id = cluster.num_workers
        self.lineage: Dict[int, int] = {}

        n = self.num_tasks
        self.produced = np.zeros(n)
        self.consumed = np.zeros(n)
        self.committed = np.zeros(n)
        self.high_water = np.zeros(n)
        self.restore_backlog = np.zeros(n)
        self.warm_backlog = np.zeros(n)
        self.last_service = np.zeros(n)
        self.owner = np.full(n, -1, dtype=np.int64)
        self.warm_dest = np.full(n, -1, dtype=np.int64)
        self.standby_tasks = np.zeros(0, dtype=np.int64)
        self.standby_workers = np.zeros(0, dtype=np.int64)

        self.ledger = OutputLedger()
        self.win_expected = np.zeros(n)
        self.win_emitted = np.zeros(n)
        self.win_replayed = np.zeros(n, dtype=bool)
        self.win_index = np.zeros(n, dtype=np.int64)

        self.assignment = Assignment()
        self.events: List[ScheduledEvent] = []
        self._seq = 0
        self.probe_token = 0
        self.probe_pending = False
        self.last_rebalance_time = 0.0
        self.event_log: List[str] = []
        self.failures: List[FailureEvent] = []
        self.membership: List[MembershipEvent] = []
        self.convergence: List[ConvergenceRecord] = []
        self.current_failure: Optional[int] = None
        self.current_imbalance = 0
        self.last_sample: Optional[Any] = None
        self.layout: Optional[Any] = None
        self.layout_version = 0
        self.noise_block: Optional[np.ndarray] = None
        self.noise_pos = 0

        self.failure_rng = np.random.default_rng([seed, 1])
        self.noise_rng = np.random.default_rng([seed, 2])

    # ── workers ─────────────────────────────────────────────────────────

    def live_workers(self) -> List[int]:
        return [int(w) for w in np.flatnonzero(self.alive)]

    def allocate_worker(self) -> int:
        worker_id = self.next_worker_id
        if worker_id >= self.max_workers:
            grow = worker_id + 1 - self.max_workers
            self.alive = np.concatenate([self.alive, np.zeros(grow, dtype=bool)])
            self.max_workers = worker_id + 1
        self.next_worker_id += 1
        self.alive[worker_id] = True
        self.membership.append(MembershipEvent(self.time, MembershipKind.WORKER_JOINED, worker_id))
        self.layout_version += 1
        logger.debug("worker %d joined at t=%s", worker_id, format_number(self.time))
        return worker_id

    def mark_lost(self, worker_id: int) -> None:
        self.alive[worker_id] = False
        self.membership.append(MembershipEvent(self.time, MembershipKind.WORKER_LOST, worker_id))
        self.layout_version += 1
        logger.debug("worker %d lost at t=%s", worker_id, format_number(self.time))

    # ── tasks ───────────────────────────────────────────────────────────

    @property
    def queue(self) -> np.ndarray:
        return self.produced - self.consumed

    def state_size(self) -> np.ndarray:
        return np.minimum(self.state_cap, self.high_water)

    def rollback(self, tasks: List[int]) -> None:
        """Uncommitted progress of ``tasks`` is lost; they resume from the last commit."""
        for task in tasks:
            self.consumed[task] = self.committed[task]

    def close_window(self, task: int) -> None:
        self.ledger.close(
            task,
            int(self.win_index[task]),
            float(self.win_expected[task]),
            float(self.win_emitted[task]),
            bool(self.win_replayed[task]),
        )
        self.win_index[task] += 1
        self.win_expected[task] = 0.0
        self.win_emitted[task] = 0.0
        self.win_replayed[task] = False

    def commit_task(self, task: int) -> None:
        self.committed[task] = self.consumed[task]
        self.close_window(task)

    # ── assignment ──────────────────────────────────────────────────────

    def apply_assignment(self, new: Assignment) -> float:
        """Install ``new`` and move backlogs accordingly; returns changelog records that were lost.

        A task landing on a standby holder restores nothing, on its warm-up worker it keeps the
        warm-up backlog, anywhere else it replays its full state. A planned move (previous owner
        still alive) first commits and closes the task's window on the previous owner.
        """
        old = self.assignment
        sizes = self.state_size()
        lost = 0.0
        for task in sorted(new.active):
            dest = new.active[task]
            prev = old.active.get(task)
            if prev == dest:
                continue
            planned = prev is not None and prev < len(self.alive) and bool(self.alive[prev])
            if planned:
                self.commit_task(task)
            if dest in old.standby.get(task, ()):
                backlog = 0.0
            elif old.warming.get(task) == dest:
                backlog = float(self.warm_backlog[task])
            else:
                backlog = float(sizes[task])
                if not planned:
                    lost += backlog
            self.restore_backlog[task] = backlog

        for task in range(self.num_tasks):
            dest = new.warming.get(task)
            if dest is None:
                self.warm_backlog[task] = 0.0
            elif old.warming.get(task) != dest:
                self.warm_backlog[task] = 0.0 if dest in new.standby.get(task, ()) else float(sizes[task])

        self.assignment = new
        self._sync_arrays()
        return lost

    def refresh_standbys(self) -> None:
        """Top standbys up after membership changes and resync the derived arrays."""
        wanted = self.config.rebalance.num_standby_replicas
        if wanted > 0 or self.assignment.standby:
            self.assignment = place_standbys(self.assignment, self.live_workers(), wanted)
        self._sync_arrays()

    def _sync_arrays(self) -> None:
        self.owner[:] = -1
        for task, worker in self.assignment.active.items():
            self.owner[task] = worker
        self.warm_dest[:] = -1
        for task, worker in self.assignment.warming.items():
            self.warm_dest[task] = worker
        pairs = [(t, w) for t, holders in sorted(self.assignment.standby.items()) for w in holders]
        self.standby_tasks = np.array([t for t, _ in pairs], dtype=np.int64)
        self.standby_workers = np.array([w for _, w in pairs], dtype=np.int64)
        live = self.live_workers()
        self.current_imbalance = imbalance(self.assignment, live) if live else 0
        self.layout_version += 1

    # ── events ──────────────────────────────────────────────────────────

    def schedule(self, time: float, kind: EventKind, **payload: Any) -> ScheduledEvent:
        event = ScheduledEvent(max(self.config.ticks(time), self.tick_index), self._seq, kind, payload)
        self._seq += 1
        heapq.heappush(self.events, event)
        return event

    def pop_due(self) -> Optional[ScheduledEvent]:
        if self.events and self.events[0].tick <= self.tick_index:
            return heapq.heappop(self.events)
        return None

    def schedule_probe(self, time: float) -> None:
        """(Re)arm the probing timer; earlier pending probes become stale."""
        self.probe_token += 1
        self.probe_pending = True
        self.schedule(time, EventKind.PROBE, token=self.probe_token)

    def stop_probing(self) -> None:
        self.probe_token += 1
        self.probe_pending = False

    def log(self, kind: str, details: str) -> None:
        self.event_log.append(f"{format_number(self.time)}\t{kind}\t{details}")

    # ── snapshots ───────────────────────────────────────────────────────

    def task_snapshot(self) -> List[TaskState]:
        out: List[TaskState] = []
        queue = self.queue
        for task in range(self.num_tasks):
            owner = int(self.owner[task])
            status = TaskStatus.ACTIVE if owner >= 0 else TaskStatus.ORPHANED
            warm = int(self.warm_dest[task])
            out.append(
                TaskState(
                    task_id=task,
                    status=status,
                    owner=owner if owner >= 0 else None,
                    queue=float(max(queue[task], 0.0)),
                    changelog_backlog=float(self.restore_backlog[task]),
                    last_commit_offset=float(self.committed[task]),
                    produced_offset=float(self.produced[task]),
                    consumed_offset=float(self.consumed[task]),
                    warming_on=warm if warm >= 0 else None,
                )
            )
        return out

    def worker_snapshot(self) -> List[WorkerInstance]:
        out: List[WorkerInstance] = []
        for worker in range(self.next_worker_id):
            alive = bool(self.alive[worker])
            tasks: Dict[str, List[int]] = {}
            if alive:
                tasks = {
                    TaskStatus.ACTIVE.value: self.assignment.tasks_of(worker),
                    TaskStatus.WARMING.value: sorted(t for t, w in self.assignment.warming.items() if w == worker),
                    TaskStatus.STANDBY.value: sorted(
                        t for t, ws in self.assignment.standby.items() if worker in ws
                    ),
                }
            out.append(
                WorkerInstance(
                    worker_id=worker,
                    alive=alive,
                    capacity=self.config.cluster.worker_capacity,
                    assigned_tasks=tasks,
                )
            )
        return out

    def lag(self) -> float:
        return float(np.sum(self.produced - self.committed))
