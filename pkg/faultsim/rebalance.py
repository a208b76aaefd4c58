"""Task assignment: sticky balanced targets, immediate and probing rebalances, standby placement.

Every function is pure: it takes an ``Assignment`` and returns a new one. The engine applies
them on the simulation clock.
"""

import logging
from collections import defaultdict
from typing import Callable, Dict, Iterable, List, Sequence

from faultsim.errors import ClusterDownError
from faultsim.types import Assignment

logger = logging.getLogger("FAULTSIM.rebalance")

ReadinessOracle = Callable[[int, int], bool]


def _require_live(live_workers: Sequence[int]) -> List[int]:
    live = sorted(set(live_workers))
    if not live:
        raise ClusterDownError("no live workers left to own tasks")
    return live


def imbalance(assignment: Assignment, live_workers: Sequence[int]) -> int:
    """Max minus min active task count over live workers (count only, not load)."""
    live = _require_live(live_workers)
    counts = assignment.active_counts(live)
    return max(counts.values()) - min(counts.values())


def migrations(before: Assignment, after: Assignment) -> int:
    return sum(1 for task, worker in after.active.items() if before.active.get(task) != worker)


def warmup_ready(changelog_backlog: float, acceptable_recovery_lag: float) -> bool:
    """A warm-up replica may take over once its backlog is at most the acceptable lag."""
    return changelog_backlog <= acceptable_recovery_lag


def compute_target_assignment(
    current: Assignment,
    live_workers: Sequence[int],
    tasks: Sequence[int],
) -> Assignment:
    """Balanced ideal that keeps as many current placements as possible.

    Ceil quotas go to the workers that currently hold the most tasks. Over-quota workers release
    tasks that are being warmed elsewhere first, then their highest task ids. Released and
    unowned tasks go to their warming worker when it has room, then fill deficits in ascending
    (worker_id, task_id) order.
    """
    live = _require_live(live_workers)
    task_ids = sorted(tasks)
    base, extra = divmod(len(task_ids), len(live))

    held: Dict[int, List[int]] = {w: [] for w in live}
    free: List[int] = []
    for task in task_ids:
        owner = current.active.get(task)
        if owner in held:
            held[owner].append(task)
        else:
            free.append(task)

    by_size = sorted(live, key=lambda w: (-len(held[w]), w))
    quota = {w: base + (1 if rank < extra else 0) for rank, w in enumerate(by_size)}

    target: Dict[int, int] = {}
    for worker in live:
        owned = held[worker]
        surplus = len(owned) - quota[worker]
        if surplus > 0:
            warmed_elsewhere = [t for t in owned if current.warming.get(t, worker) != worker]
            rest = [t for t in owned if t not in warmed_elsewhere]
            release_order = warmed_elsewhere + sorted(rest, reverse=True)
            released = set(release_order[:surplus])
            free.extend(release_order[:surplus])
            owned = [t for t in owned if t not in released]
        for task in owned:
            target[task] = worker

    deficit = {w: quota[w] - sum(1 for t in held[w] if target.get(t) == w) for w in live}
    remaining: List[int] = []
    for task in sorted(free):
        dest = current.warming.get(task)
        if dest in deficit and deficit[dest] > 0:
            target[task] = dest
            deficit[dest] -= 1
        else:
            remaining.append(task)

    queue = iter(remaining)
    for worker in live:
        for _ in range(deficit[worker]):
            target[next(queue)] = worker

    return Assignment(active=target, warming={}, standby={}, epoch=current.epoch)


def immediate_rebalance(
    assignment: Assignment,
    lost_workers: Iterable[int],
    live_workers: Sequence[int],
) -> Assignment:
    """Hand every orphaned task to a survivor right away, without warm-up gating.

    All lost workers leave before any orphan is placed. An orphan goes to a live standby holder
    if it has one, else to the worker warming it, else to the least-loaded survivor (ties by id).
    """
    lost = set(lost_workers)
    live = _require_live([w for w in live_workers if w not in lost])
    live_set = set(live)

    active = dict(assignment.active)
    warming = {t: w for t, w in assignment.warming.items() if w in live_set}
    standby = {
        t: tuple(w for w in holders if w in live_set)
        for t, holders in assignment.standby.items()
    }
    standby = {t: holders for t, holders in standby.items() if holders}

    load = {w: 0 for w in live}
    orphans: List[int] = []
    for task in sorted(active):
        owner = active[task]
        if owner in live_set:
            load[owner] += 1
        else:
            orphans.append(task)

    for task in orphans:
        holders = standby.get(task, ())
        if holders:
            dest = min(holders, key=lambda w: (load[w], w))
            remaining = tuple(w for w in holders if w != dest)
            if remaining:
                standby[task] = remaining
            else:
                standby.pop(task)
        elif task in warming:
            dest = warming[task]
        else:
            dest = min(live, key=lambda w: (load[w], w))
        warming.pop(task, None)
        active[task] = dest
        load[dest] += 1

    logger.debug("immediate rebalance: %d orphans over %d survivors", len(orphans), len(live))
    return Assignment(active=active, warming=warming, standby=standby, epoch=assignment.epoch + 1)


def probing_rebalance(
    assignment: Assignment,
    live_workers: Sequence[int],
    ready: ReadinessOracle,
    max_warmup_replicas: int,
) -> Assignment:
    """One follow-up rebalance: promote ready warm-ups, then place new ones toward the target.

    Returns the input unchanged (same epoch) when the round would not move anything.
    """
    live = _require_live(live_workers)
    live_set = set(live)
    active = dict(assignment.active)
    standby = {t: tuple(ws) for t, ws in assignment.standby.items()}

    warming: Dict[int, int] = {}
    for task, dest in sorted(assignment.warming.items()):
        if dest not in live_set:
            continue
        if ready(task, dest):
            active[task] = dest
            if dest in standby.get(task, ()):
                standby[task] = tuple(w for w in standby[task] if w != dest)
        else:
            warming[task] = dest

    promoted = Assignment(active=active, warming=warming, standby=standby, epoch=assignment.epoch)
    target = compute_target_assignment(promoted, live, list(active))

    warming = {t: w for t, w in warming.items() if target.active.get(t) == w}
    candidates = sorted(
        (dest, task)
        for task, dest in target.active.items()
        if active.get(task) != dest and task not in warming
    )
    for dest, task in candidates:
        if len(warming) >= max_warmup_replicas:
            break
        warming[task] = dest

    standby = {t: ws for t, ws in standby.items() if ws}
    if active == assignment.active and warming == assignment.warming:
        return assignment
    return Assignment(active=active, warming=warming, standby=standby, epoch=assignment.epoch + 1)


def place_standbys(
    assignment: Assignment,
    live_workers: Sequence[int],
    num_standby_replicas: int,
) -> Assignment:
    """Top every task up to ``num_standby_replicas`` standby holders, never on its active owner.

    Existing valid holders stay. New holders are chosen by fewest standbys, then fewest active
    tasks, then id; tasks are visited interleaved by owner so each owner's tasks spread out.
    """
    if num_standby_replicas <= 0:
        return Assignment(
            active=dict(assignment.active),
            warming=dict(assignment.warming),
            standby={},
            epoch=assignment.epoch,
        )
    live = _require_live(live_workers)
    live_set = set(live)
    active_counts = assignment.active_counts(live)

    standby: Dict[int, List[int]] = {}
    for task, owner in assignment.active.items():
        kept = [w for w in assignment.standby.get(task, ()) if w in live_set and w != owner]
        standby[task] = kept[:num_standby_replicas]
    standby_counts = {w: 0 for w in live}
    for holders in standby.values():
        for w in holders:
            standby_counts[w] += 1

    by_owner: Dict[int, List[int]] = defaultdict(list)
    for task in sorted(assignment.active):
        by_owner[assignment.active[task]].append(task)
    owners = sorted(by_owner)
    depth = max((len(ts) for ts in by_owner.values()), default=0)
    order = [by_owner[o][k] for k in range(depth) for o in owners if k < len(by_owner[o])]

    for task in order:
        owner = assignment.active[task]
        holders = standby[task]
        while len(holders) < num_standby_replicas:
            options = [w for w in live if w != owner and w not in holders]
            if not options:
                break
            pick = min(options, key=lambda w: (standby_counts[w], active_counts[w], w))
            holders.append(pick)
            standby_counts[pick] += 1

    return Assignment(
        active=dict(assignment.active),
        warming=dict(assignment.warming),
        standby={t: tuple(sorted(ws)) for t, ws in standby.items() if ws},
        epoch=assignment.epoch,
    )


def initial_assignment(
    live_workers: Sequence[int],
    tasks: Sequence[int],
    num_standby_replicas: int = 0,
) -> Assignment:
    target = compute_target_assignment(Assignment(), live_workers, tasks)
    return place_standbys(target, live_workers, num_standby_replicas)
