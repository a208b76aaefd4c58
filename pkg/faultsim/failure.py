"""Chaos-style failure injection: plan kills, execute them, bring replacements in."""

import logging
from typing import Dict, List, Sequence, Set, Tuple

import numpy as np

from faultsim.errors import SchedulerError
from faultsim.metrics import format_number
from faultsim.rebalance import immediate_rebalance, migrations
from faultsim.scenario import ScenarioConfig
from faultsim.state import ClusterState
from faultsim.types import ConvergenceRecord, EventKind, FailureEvent

logger = logging.getLogger("FAULTSIM.failure")


def plan_failures(config: ScenarioConfig, rng: np.random.Generator) -> List[FailureEvent]:
    """Injection times on a fixed period; victims drawn from the initial worker ids.

    Victims are remapped onto live replacements when the failure executes.
    """
    plan = config.failures
    delay_min = config.cluster.replacement_delay_min
    delay_max = config.cluster.replacement_delay_max
    events: List[FailureEvent] = []
    for index in range(plan.num_failures):
        time = plan.first_failure_time + index * plan.failure_period
        victims = rng.choice(config.cluster.num_workers, size=plan.kills_per_failure, replace=False)
        delays = rng.uniform(delay_min, delay_max, size=plan.kills_per_failure)
        ordered = tuple(int(v) for v in victims)
        events.append(
            FailureEvent(
                index=index,
                time=time,
                victims=ordered,
                replacement_times={v: time + float(d) for v, d in zip(ordered, delays)},
            )
        )
    return events


def resolve_victims(planned: Sequence[int], lineage: Dict[int, int], alive: Sequence[bool]) -> Tuple[int, ...]:
    """Follow each planned id down its replacement chain to a live worker.

    A victim with no live descendant falls back to the smallest live id not already chosen.
    """
    chosen: List[int] = []
    taken: Set[int] = set()
    unresolved = 0
    for worker in planned:
        current = worker
        while current in lineage and not alive[current]:
            current = lineage[current]
        if 0 <= current < len(alive) and alive[current] and current not in taken:
            chosen.append(current)
            taken.add(current)
        else:
            unresolved += 1
    for _ in range(unresolved):
        spare = next((w for w in range(len(alive)) if alive[w] and w not in taken), None)
        if spare is None:
            raise SchedulerError(f"no live worker left to kill for planned victims {list(planned)}")
        chosen.append(spare)
        taken.add(spare)
    return tuple(chosen)


def kill_workers(state: ClusterState, event: FailureEvent) -> ClusterState:
    """Kill the victims, roll their tasks back to the last commit and rebalance immediately."""
    for worker in event.victims:
        if worker >= len(state.alive) or not state.alive[worker]:
            raise SchedulerError(f"worker {worker} is not alive at t={format_number(state.time)}")

    orphaned = sorted(t for t, w in state.assignment.active.items() if w in event.victims)
    for worker in event.victims:
        state.mark_lost(worker)
        state.log("KILL", f"worker={worker}")
    state.rollback(orphaned)

    before = state.assignment
    after = immediate_rebalance(before, event.victims, state.live_workers())
    lost = state.apply_assignment(after)
    state.refresh_standbys()
    state.log("STATE_LOST", f"records={format_number(lost)}")
    state.log(
        "REBALANCE",
        f"epoch={after.epoch} kind=immediate migrations={migrations(before, after)} "
        f"imbalance={state.current_imbalance}",
    )
    state.last_rebalance_time = state.time
    state.schedule_probe(state.time + state.config.rebalance.probing_interval)

    for worker, at in sorted(event.replacement_times.items(), key=lambda item: (item[1], item[0])):
        state.schedule(at, EventKind.JOIN, replaces=worker)

    state.failures.append(event)
    state.convergence.append(ConvergenceRecord(failure_idx=event.index))
    state.current_failure = len(state.convergence) - 1
    logger.info(
        "failure %d at t=%s killed %s, %d tasks orphaned, %s changelog records lost",
        event.index,
        format_number(state.time),
        list(event.victims),
        len(orphaned),
        format_number(lost),
    )
    return state


def execute_failure(state: ClusterState, planned: FailureEvent) -> ClusterState:
    """Remap a planned failure onto the live cluster and run it."""
    victims = resolve_victims(planned.victims, state.lineage, state.alive)
    delays = [planned.replacement_times[v] - planned.time for v in planned.victims]
    event = FailureEvent(
        index=planned.index,
        time=state.time,
        victims=victims,
        replacement_times={v: state.time + d for v, d in zip(victims, delays)},
    )
    return kill_workers(state, event)


def spawn_replacement(state: ClusterState, replaced: int, time: float) -> ClusterState:
    """A fresh, empty worker joins; it only gains tasks through later probing rebalances."""
    worker = state.allocate_worker()
    state.lineage[replaced] = worker
    state.refresh_standbys()
    state.log("JOIN", f"worker={worker} replaces={replaced}")
    if not state.probe_pending:
        state.schedule_probe(max(state.last_rebalance_time + state.config.rebalance.probing_interval, time))
    logger.info("worker %d joined at t=%s replacing %d", worker, format_number(time), replaced)
    return state
