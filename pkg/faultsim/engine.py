"""Deterministic fluid-flow simulation of the cluster on a fixed tick.

Queues, offsets and backlogs are continuous per-task quantities advanced every tick. Failures,
replacements, probing rebalances and commits are discrete events on the state's priority queue,
processed at the start of the tick they fall in.

Each worker runs a fixed number of processing threads and deals its active tasks to them in
task-id order. Throughput is shared across the whole worker; a task's service time inflates with
the utilization of the thread it sits on.
"""

import logging
from collections import defaultdict
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple, Union

import numpy as np

from faultsim.failure import execute_failure, plan_failures, spawn_replacement
from faultsim.metrics import CPU_CADENCE, LATENCY_WINDOW_S, format_number, latency_window
from faultsim.rebalance import initial_assignment, migrations, probing_rebalance, warmup_ready
from faultsim.scenario import ScenarioConfig, WorkloadConfig, describe, validate
from faultsim.state import ClusterState, ScheduledEvent
from faultsim.types import EventKind, LatencyWindow, RunArtifacts

logger = logging.getLogger("FAULTSIM.engine")

ArrayOrFloat = Union[np.ndarray, float]

NOISE_BLOCK_TICKS = 1000


@dataclass
class TickSample:
    latency: np.ndarray
    weight: np.ndarray
    cpu: np.ndarray
    consumed: float
    emitted: float


@dataclass
class Layout:
    """Per-task and per-worker arrays that only change with ownership, liveness or replicas."""

    version: int
    owned: np.ndarray
    idx: np.ndarray
    live_owned: np.ndarray
    all_live_owned: bool
    arrival: np.ndarray
    thread_load: np.ndarray
    drain: np.ndarray
    standing_rate: np.ndarray
    budget_rate: np.ndarray
    has_warm: np.ndarray
    warm_idx: np.ndarray
    any_warm: bool
    base_cpu: np.ndarray
    base_service_time: np.ndarray


# ═══════════════════════════════════════════════════════════════════════
# PER-TICK OPERATIONS
# ═══════════════════════════════════════════════════════════════════════


def compute_event_latency(queue: ArrayOrFloat, service_rate: ArrayOrFloat, service_time: ArrayOrFloat) -> ArrayOrFloat:
    """Sojourn time of a served task: drain time of its queue plus one service time."""
    queue_arr = np.asarray(queue, dtype=float)
    rate = np.asarray(service_rate, dtype=float)
    wait = np.divide(queue_arr, rate, out=np.zeros(np.broadcast(queue_arr, rate).shape), where=rate > 0)
    result = wait + service_time
    return float(result) if np.ndim(result) == 0 else result


def unserved_latency(idle_for: ArrayOrFloat, queue: ArrayOrFloat, drain_rate: ArrayOrFloat, base: float) -> ArrayOrFloat:
    """Latency of records waiting on a task that is not being served (orphaned or restoring)."""
    return idle_for + compute_event_latency(queue, drain_rate, base)


def congested_service_time(workload: WorkloadConfig, utilization: ArrayOrFloat) -> ArrayOrFloat:
    """``base / (1 - k * u)`` with ``u`` clipped to [0, 1]."""
    u = np.clip(utilization, 0.0, 1.0)
    return workload.base_processing_latency / (1.0 - workload.latency_congestion * u)


def deal_threads(owner: np.ndarray, threads: int) -> np.ndarray:
    """Thread index of every task; each worker deals its tasks round-robin in task-id order."""
    thread = np.zeros(owner.size, dtype=np.int64)
    dealt: Dict[int, int] = defaultdict(int)
    for task in np.flatnonzero(owner >= 0):
        worker = int(owner[task])
        thread[task] = dealt[worker] % threads
        dealt[worker] += 1
    return thread


def build_layout(state: ClusterState) -> Layout:
    cfg = state.config
    capacity = cfg.cluster.worker_capacity
    threads = cfg.cluster.stream_threads
    replay_cost = capacity / cfg.cluster.replay_rate
    num_workers = state.alive.size
    rate = state.task_rate

    owned = state.owner >= 0
    idx = np.where(owned, state.owner, 0)
    live_owned = owned & state.alive[idx]

    arrival = np.zeros(num_workers)
    arrival += np.bincount(idx[owned], weights=rate[owned], minlength=num_workers)

    key = idx * threads + deal_threads(state.owner, threads)
    per_thread = np.zeros(num_workers * threads)
    per_thread += np.bincount(key[owned], weights=rate[owned], minlength=num_workers * threads)
    thread_load = np.where(owned, per_thread[key] * threads / capacity, 0.0)

    tasks_per_worker = np.bincount(idx[owned], minlength=num_workers)
    drain = np.where(owned, capacity / np.maximum(tasks_per_worker[idx], 1), capacity)

    # Standbys and caught-up warm-ups follow the changelog of their task continuously.
    has_warm = state.warm_dest >= 0
    warm_idx = np.where(has_warm, state.warm_dest, 0)
    standing_rate = np.zeros(num_workers)
    if state.standby_tasks.size:
        standing_rate += np.bincount(
            state.standby_workers, weights=rate[state.standby_tasks] * replay_cost, minlength=num_workers
        )
    if has_warm.any():
        standing_rate += np.bincount(warm_idx[has_warm], weights=rate[has_warm] * replay_cost, minlength=num_workers)

    budget_rate = np.where(state.alive, np.maximum(capacity - standing_rate, 0.0), 0.0)
    base_cpu = np.where(state.alive, np.minimum(1.0, (arrival + standing_rate) / capacity), 0.0)
    base_service_time = congested_service_time(cfg.workload, thread_load + standing_rate[idx] / capacity)

    return Layout(
        version=state.layout_version,
        owned=owned,
        idx=idx,
        live_owned=live_owned,
        all_live_owned=bool(live_owned.all()),
        arrival=arrival,
        thread_load=thread_load,
        drain=drain,
        standing_rate=standing_rate,
        budget_rate=budget_rate,
        has_warm=has_warm,
        warm_idx=warm_idx,
        any_warm=bool(has_warm.any()),
        base_cpu=base_cpu,
        base_service_time=base_service_time,
    )


def current_layout(state: ClusterState) -> Layout:
    layout = state.layout
    if layout is None or layout.version != state.layout_version:
        layout = build_layout(state)
        state.layout = layout
    return layout


def generate_load(state: ClusterState, dt: float) -> ClusterState:
    state.produced += state.task_rate * dt
    return state


def commit_tick(state: ClusterState) -> ClusterState:
    """Commit the consumed offset of every owned task and close its ledger window."""
    owned = state.owner >= 0
    for task in np.flatnonzero(owned):
        if state.alive[state.owner[task]]:
            state.commit_task(int(task))
    return state


def emit_output(state: ClusterState, served: np.ndarray, reprocessed: Optional[np.ndarray] = None) -> float:
    """Outputs for the records served this tick; re-served records mark their window replayed."""
    selectivity = state.config.workload.selectivity
    outputs = selectivity * served
    state.win_emitted += outputs
    if reprocessed is None:
        state.win_expected += outputs
    else:
        state.win_expected += selectivity * (served - reprocessed)
        state.win_replayed |= reprocessed > 0
    return float(outputs.sum())


def _water_fill(
    demand: np.ndarray,
    owner: np.ndarray,
    mask: np.ndarray,
    budget: np.ndarray,
) -> Tuple[np.ndarray, np.ndarray]:
    """Share each worker's budget equally among its tasks, handing leftovers of small demands on.

    Returns per-task allocation and the final per-task share (water level) of each worker.
    """
    num_workers = budget.size
    held = owner[mask]
    totals = np.bincount(held, weights=demand[mask], minlength=num_workers)
    if (totals <= budget).all():
        counts = np.bincount(held, minlength=num_workers)
        level = np.divide(budget, counts, out=np.zeros(num_workers), where=counts > 0)
        return np.where(mask, demand, 0.0), level

    alloc = np.zeros(demand.size)
    level = np.zeros(num_workers)
    remaining = budget.copy()
    pending = mask & (demand > 0)
    while pending.any():
        counts = np.bincount(owner[pending], minlength=num_workers)
        share = np.divide(remaining, counts, out=np.zeros(num_workers), where=counts > 0)
        level = np.where(counts > 0, share, level)
        need = demand - alloc
        task_share = share[owner]
        satisfied = pending & (need <= task_share)
        if not satisfied.any():
            alloc[pending] += task_share[pending]
            break
        alloc[satisfied] += need[satisfied]
        remaining = np.maximum(
            remaining - np.bincount(owner[satisfied], weights=need[satisfied], minlength=num_workers), 0.0
        )
        pending &= ~satisfied
    return alloc, level


def _replay(state: ClusterState, layout: Layout, budget: np.ndarray, replay_cost: float) -> Tuple[np.ndarray, np.ndarray]:
    """Drain restore and warm-up backlogs ahead of processing, proportionally per worker.

    Returns the budget left for processing and the replay demand (records) of each worker.
    """
    num_workers = budget.size
    restoring = layout.owned & (state.restore_backlog > 0)
    warming = layout.has_warm & (state.warm_backlog > 0)
    demand = np.zeros(num_workers)
    demand += np.bincount(layout.idx[restoring], weights=state.restore_backlog[restoring], minlength=num_workers)
    demand += np.bincount(layout.warm_idx[warming], weights=state.warm_backlog[warming], minlength=num_workers)
    replayed = np.minimum(demand, budget / replay_cost)
    fraction = np.divide(replayed, demand, out=np.zeros(num_workers), where=demand > 0)
    state.restore_backlog[restoring] *= 1.0 - fraction[layout.idx[restoring]]
    state.warm_backlog[warming] *= 1.0 - fraction[layout.warm_idx[warming]]
    return np.maximum(budget - replayed * replay_cost, 0.0), demand


def _jitter(state: ClusterState, noise: float) -> np.ndarray:
    block = state.noise_block
    if block is None or state.noise_pos >= block.shape[0]:
        raw = state.noise_rng.standard_normal((NOISE_BLOCK_TICKS, state.num_tasks))
        block = np.maximum(0.1, 1.0 + noise * raw)
        state.noise_block = block
        state.noise_pos = 0
    row = block[state.noise_pos]
    state.noise_pos += 1
    return row


def step(state: ClusterState, dt: float) -> ClusterState:
    """Advance every task by ``dt``: load, replay, service, outputs, backlogs and latency."""
    cfg = state.config
    capacity = cfg.cluster.worker_capacity
    replay_cost = capacity / cfg.cluster.replay_rate
    workload = cfg.workload
    layout = current_layout(state)
    idx = layout.idx

    generate_load(state, dt)
    budget = layout.budget_rate * dt

    restoring = bool(state.restore_backlog.any())
    replay_demand: Optional[np.ndarray] = None
    if restoring or (layout.any_warm and state.warm_backlog.any()):
        budget, replay_demand = _replay(state, layout, budget, replay_cost)
        restoring = bool(state.restore_backlog.any())

    serviceable = layout.live_owned & (state.restore_backlog <= 0) if restoring else layout.live_owned
    queue = state.produced - state.consumed
    np.maximum(queue, 0.0, out=queue)
    served, level = _water_fill(queue, idx, serviceable, budget)

    behind = state.high_water - state.consumed
    reprocessed = np.clip(behind, 0.0, served) if behind.max() > 0 else None
    state.consumed += served
    np.maximum(state.high_water, state.consumed, out=state.high_water)
    emitted = emit_output(state, served, reprocessed)

    if replay_demand is None:
        cpu = layout.base_cpu
        service_time = layout.base_service_time
    else:
        overhead = layout.standing_rate + replay_demand * replay_cost / dt
        cpu = np.where(state.alive, np.minimum(1.0, (layout.arrival + overhead) / capacity), 0.0)
        service_time = congested_service_time(workload, layout.thread_load + overhead[idx] / capacity)

    now = state.time + dt
    if layout.all_live_owned and not restoring and (served >= queue).all():
        latency = service_time
        weight = served
        state.last_service.fill(now)
    else:
        is_served = served > 0
        queue_after = np.maximum(state.produced - state.consumed, 0.0)
        rate = np.maximum(served, level[idx]) / dt
        served_latency = compute_event_latency(queue_after, np.where(is_served, rate, 0.0), service_time)
        waiting_latency = unserved_latency(
            now - state.last_service, queue_after, layout.drain, workload.base_processing_latency
        )
        latency = np.where(is_served, served_latency, waiting_latency)
        weight = np.where(is_served, served, state.task_rate * dt)
        state.last_service[is_served] = now

    if workload.latency_noise > 0:
        latency = latency * _jitter(state, workload.latency_noise)
    else:
        latency = np.array(latency, dtype=float)

    state.last_sample = TickSample(latency, weight, cpu, float(served.sum()), emitted)
    state.time = now
    return state


# ═══════════════════════════════════════════════════════════════════════
# EVENTS
# ═══════════════════════════════════════════════════════════════════════


def init_state(config: ScenarioConfig, seed: int) -> ClusterState:
    state = ClusterState(config, seed)
    tasks = list(range(state.num_tasks))
    first = initial_assignment(state.live_workers(), tasks, config.rebalance.num_standby_replicas)
    state.apply_assignment(first)
    state.log("REBALANCE", f"epoch={first.epoch} kind=initial migrations={len(tasks)} imbalance={state.current_imbalance}")

    for planned in plan_failures(config, state.failure_rng):
        state.schedule(planned.time, EventKind.FAILURE, planned=planned)
    state.schedule(config.rebalance.commit_interval, EventKind.COMMIT)
    return state


def _probe(state: ClusterState, token: int) -> None:
    if token != state.probe_token:
        return
    state.probe_pending = False
    cfg = state.config.rebalance
    before = state.assignment

    def ready(task: int, worker: int) -> bool:
        return warmup_ready(float(state.warm_backlog[task]), cfg.acceptable_recovery_lag)

    after = probing_rebalance(before, state.live_workers(), ready, cfg.max_warmup_replicas)
    changed = after is not before
    if changed:
        state.apply_assignment(after)
        state.refresh_standbys()
        state.last_rebalance_time = state.time
        state.log(
            "REBALANCE",
            f"epoch={after.epoch} kind=probing migrations={migrations(before, after)} "
            f"warming={len(after.warming)} imbalance={state.current_imbalance}",
        )
        logger.debug("probe at t=%s: epoch %d, %d warming", format_number(state.time), after.epoch, len(after.warming))

    if state.current_failure is not None:
        record = state.convergence[state.current_failure]
        if record.first_probe is None:
            record.first_probe = state.time
        if record.converged is None and state.current_imbalance <= 1:
            record.converged = state.time
            record.rounds = int(round((state.time - record.first_probe) / cfg.probing_interval))

    if changed or state.current_imbalance > 1 or state.assignment.warming:
        state.schedule_probe(state.time + cfg.probing_interval)
    else:
        state.stop_probing()


def dispatch(state: ClusterState, event: ScheduledEvent) -> None:
    if event.kind is EventKind.FAILURE:
        execute_failure(state, event.payload["planned"])
    elif event.kind is EventKind.JOIN:
        spawn_replacement(state, event.payload["replaces"], state.time)
    elif event.kind is EventKind.PROBE:
        _probe(state, event.payload["token"])
    elif event.kind is EventKind.COMMIT:
        commit_tick(state)
        state.schedule(state.time + state.config.rebalance.commit_interval, EventKind.COMMIT)


# ═══════════════════════════════════════════════════════════════════════
# RUN
# ═══════════════════════════════════════════════════════════════════════


class _Recorder:
    """Folds per-tick samples into per-second, per-2-s and per-10-s series."""

    def __init__(self, state: ClusterState) -> None:
        self.input_per_second: List[float] = []
        self.output_per_second: List[float] = []
        self.lag_per_second: List[float] = []
        self.imbalance_per_second: List[int] = []
        self.latency_windows: List[LatencyWindow] = []
        self.cpu_samples: List[Tuple[float, int, float]] = []
        self._consumed = 0.0
        self._emitted = 0.0
        self._cpu = np.zeros(state.alive.size)
        self._latency: List[np.ndarray] = []
        self._weight: List[np.ndarray] = []
        self._window_start = 0.0

    def observe(self, state: ClusterState, dt: float) -> None:
        sample: TickSample = state.last_sample
        self._consumed += sample.consumed
        self._emitted += sample.emitted
        if sample.cpu.size > self._cpu.size:
            self._cpu = np.concatenate([self._cpu, np.zeros(sample.cpu.size - self._cpu.size)])
        self._cpu[: sample.cpu.size] += sample.cpu * dt
        self._latency.append(sample.latency)
        self._weight.append(sample.weight)

    def close_second(self, state: ClusterState) -> None:
        self.input_per_second.append(self._consumed)
        self.output_per_second.append(self._emitted)
        self.lag_per_second.append(state.lag())
        self.imbalance_per_second.append(state.current_imbalance)
        self._consumed = 0.0
        self._emitted = 0.0

    def close_cpu(self, state: ClusterState, t: float) -> None:
        for worker in state.live_workers():
            self.cpu_samples.append((t, worker, min(1.0, float(self._cpu[worker]) / CPU_CADENCE)))
        self._cpu[:] = 0.0

    def close_latency(self, next_start: float) -> None:
        if self._latency:
            self.latency_windows.append(
                latency_window(np.concatenate(self._latency), np.concatenate(self._weight), self._window_start)
            )
        self._latency.clear()
        self._weight.clear()
        self._window_start = next_start


def run(config: ScenarioConfig, seed: Optional[int] = None) -> RunArtifacts:
    """Simulate ``config`` from t=0 to run_duration; a pure function of (config, seed)."""
    validate(config).raise_for_violations()
    seed = config.seed if seed is None else seed
    state = init_state(config, seed)
    recorder = _Recorder(state)

    tick = config.tick
    per_second = int(round(1.0 / tick))
    per_cpu = int(round(CPU_CADENCE / tick))
    per_window = int(round(LATENCY_WINDOW_S / tick))
    logger.info("run seed=%d: %d ticks %s", seed, config.num_ticks, describe(config))

    for i in range(config.num_ticks):
        state.tick_index = i
        state.time = i / per_second
        event = state.pop_due()
        while event is not None:
            dispatch(state, event)
            event = state.pop_due()
        step(state, tick)
        recorder.observe(state, tick)
        done = i + 1
        if done % per_second == 0:
            recorder.close_second(state)
        if done % per_cpu == 0:
            recorder.close_cpu(state, done / per_second)
        if done % per_window == 0:
            recorder.close_latency(done / per_second)
    recorder.close_latency(config.run_duration)

    logger.info(
        "run %s seed=%d finished: %d failures, %d rebalance lines",
        config.name,
        seed,
        len(state.failures),
        sum(1 for line in state.event_log if "\tREBALANCE\t" in line),
    )
    return RunArtifacts(
        config=config,
        seed=seed,
        input_per_second=recorder.input_per_second,
        output_per_second=recorder.output_per_second,
        lag_per_second=recorder.lag_per_second,
        latency_windows=recorder.latency_windows,
        cpu_samples=recorder.cpu_samples,
        failures=list(state.failures),
        events=list(state.event_log),
        ledger=state.ledger,
        convergence=list(state.convergence),
        total_produced=float(state.produced.sum()),
        imbalance_per_second=recorder.imbalance_per_second,
    )
