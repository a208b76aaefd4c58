import logging

import numpy as np
import pytest

from faultsim.engine import init_state
from faultsim.errors import SchedulerError
from faultsim.failure import kill_workers, plan_failures, resolve_victims, spawn_replacement
from faultsim.scenario import build_scenario, builtin_scenario
from faultsim.types import EventKind, FailureEvent, MembershipKind, TaskStatus


def _event(victims, time=0.0):
    return FailureEvent(index=0, time=time, victims=tuple(victims), replacement_times={v: time + 4.0 for v in victims})


def test_plan_times_follow_the_period():
    config = builtin_scenario("default")
    plan = plan_failures(config, np.random.default_rng(1))
    assert [f.time for f in plan] == [720.0, 1440.0, 2160.0]
    for failure in plan:
        assert len(set(failure.victims)) == 2
        assert all(0 <= v < 8 for v in failure.victims)


def test_plan_without_failures():
    config = build_scenario({"failures.num_failures": 0})
    assert plan_failures(config, np.random.default_rng(1)) == []


def test_replacement_delays_stay_in_bounds():
    config = builtin_scenario("default")
    rng = np.random.default_rng(5)
    delays = []
    for _ in range(200):
        for failure in plan_failures(config, rng):
            delays.extend(t - failure.time for t in failure.replacement_times.values())
    assert len(delays) >= 1000
    assert min(delays) >= 2.0
    assert max(delays) <= 10.0


def test_plan_is_seeded():
    config = builtin_scenario("default")
    first = plan_failures(config, np.random.default_rng([42, 1]))
    second = plan_failures(config, np.random.default_rng([42, 1]))
    assert first == second


def test_resolve_victims_follows_replacements():
    alive = [True] * 10
    alive[3] = False
    alive[8] = False
    lineage = {3: 8, 8: 9}
    assert resolve_victims((3, 1), lineage, alive) == (9, 1)


def test_resolve_victims_falls_back_to_smallest_live_id():
    alive = [False, True, True, False]
    assert resolve_victims((3, 0), {}, alive) == (1, 2)
    with pytest.raises(SchedulerError):
        resolve_victims((0, 1, 2), {}, [True, False, False])


def test_kill_one_of_eight_reassigns_its_tasks():
    state = init_state(builtin_scenario("default"), seed=1)
    orphans = state.assignment.tasks_of(3)
    assert len(orphans) == 5

    kill_workers(state, _event([3]))

    assert not state.alive[3]
    assert state.assignment.tasks_of(3) == []
    assert sorted(state.assignment.active) == list(range(40))
    assert all(state.owner[t] != 3 for t in orphans)
    assert any(line.endswith("\tKILL\tworker=3") for line in state.event_log)
    assert any("\tREBALANCE\t" in line and "kind=immediate" in line for line in state.event_log)


def test_kill_rolls_back_to_last_commit():
    state = init_state(builtin_scenario("default"), seed=1)
    task = state.assignment.tasks_of(2)[0]
    state.committed[task] = 1000.0
    state.consumed[task] = 2500.0
    state.high_water[task] = 2500.0

    kill_workers(state, _event([2]))

    assert state.consumed[task] == 1000.0
    assert state.high_water[task] - state.consumed[task] == 1500.0


def test_kill_restores_full_state_without_standby():
    state = init_state(builtin_scenario("default"), seed=1)
    state.high_water[:] = 50000.0
    orphans = state.assignment.tasks_of(0)

    kill_workers(state, _event([0]))

    assert all(state.restore_backlog[t] == 50000.0 for t in orphans)
    assert any("\tSTATE_LOST\trecords=250000" in line for line in state.event_log)


def test_kill_with_standby_restores_nothing():
    config = build_scenario({"rebalance.num_standby_replicas": 1})
    state = init_state(config, seed=1)
    state.high_water[:] = 50000.0
    orphans = state.assignment.tasks_of(0)

    kill_workers(state, _event([0]))

    assert all(state.restore_backlog[t] == 0.0 for t in orphans)
    for task, holders in state.assignment.standby.items():
        assert state.assignment.active[task] not in holders
        assert 0 not in holders


def test_killing_a_dead_worker_is_a_scheduler_bug():
    state = init_state(builtin_scenario("default"), seed=1)
    kill_workers(state, _event([4]))
    with pytest.raises(SchedulerError):
        kill_workers(state, _event([4]))


def test_kill_schedules_probe_and_joins():
    state = init_state(builtin_scenario("tuned"), seed=1)
    kill_workers(state, _event([1, 2]))
    kinds = [e.kind for e in state.events]
    assert kinds.count(EventKind.JOIN) == 2
    assert EventKind.PROBE in kinds
    assert state.probe_pending
    assert len(state.convergence) == 1


def test_replacement_joins_empty():
    state = init_state(builtin_scenario("tuned"), seed=1)
    kill_workers(state, _event([5]))
    state.time = 4.0

    spawn_replacement(state, 5, 4.0)

    assert state.alive[8]
    assert state.lineage == {5: 8}
    assert state.assignment.tasks_of(8) == []
    assert state.event_log[-1] == "4\tJOIN\tworker=8 replaces=5"


def test_replacement_restarts_a_stopped_probe_timer():
    state = init_state(builtin_scenario("tuned"), seed=1)
    kill_workers(state, _event([5]))
    state.stop_probing()
    state.time = 6.0

    spawn_replacement(state, 5, 6.0)

    assert state.probe_pending
    probe = [e for e in state.events if e.kind is EventKind.PROBE][-1]
    assert probe.tick == state.config.ticks(60.0)


def test_replacements_over_a_run(small_run):
    joins = [line for line in small_run.events if "\tJOIN\t" in line]
    plan = small_run.config.failures
    assert len(joins) == plan.kills_per_failure * plan.num_failures


def test_membership_changes_are_recorded_in_order():
    state = init_state(builtin_scenario("tuned"), seed=1)
    kill_workers(state, _event([5, 6]))
    state.time = 4.0
    spawn_replacement(state, 5, 4.0)

    assert [(m.time, m.kind, m.worker_id) for m in state.membership] == [
        (0.0, MembershipKind.WORKER_LOST, 5),
        (0.0, MembershipKind.WORKER_LOST, 6),
        (4.0, MembershipKind.WORKER_JOINED, 8),
    ]


def test_snapshots_after_a_kill():
    state = init_state(builtin_scenario("default"), seed=1)
    kill_workers(state, _event([0]))

    tasks = state.task_snapshot()
    assert len(tasks) == 40
    assert all(t.status is TaskStatus.ACTIVE and t.owner != 0 for t in tasks)

    workers = {w.worker_id: w for w in state.worker_snapshot()}
    assert not workers[0].alive
    assert workers[0].assigned_tasks == {}
    assert sum(len(w.assigned_tasks["active"]) for w in workers.values() if w.alive) == 40


def test_membership_changes_are_logged(caplog):
    state = init_state(builtin_scenario("default"), seed=1)
    with caplog.at_level(logging.DEBUG, logger="FAULTSIM.state"):
        kill_workers(state, _event([2]))
        spawn_replacement(state, 2, 4.0)
    assert "worker 2 lost" in caplog.text
    assert "joined" in caplog.text
