import pytest
from hypothesis import given
from hypothesis import strategies as st

from edei.assignments import (AssignmentLog, Assignment, AStatus, completion_value, fail_on_incident,
                              order_queue, tick_deadlines)


def make_log():
    return AssignmentLog((Assignment(3, 10, 5), Assignment(1, 4, 7), Assignment(2, 4, 1)))


def test_queue_sorted_by_deadline_then_node():
    log = make_log()
    assert [a.node for a in log.assignments] == [1, 2, 3]
    assert order_queue([Assignment(9, 1, 1), Assignment(2, 1, 1)])[0].node == 2


def test_work_accumulates_and_completes():
    log = make_log()
    assert not log.work(1, 1.0, 0, 2.0)
    assert log.status[0] == AStatus.IN_PROGRESS and log.pending == {1, 2, 3}
    assert log.work(1, 1.0, 1, 2.0)
    assert log.done == {1} and log.completed_at[0] == 1
    assert completion_value(log) == 7
    with pytest.raises(RuntimeError):
        log.work(1, 1.0, 2, 2.0)


def test_crew_of_two_finishes_in_one_step():
    log = make_log()
    assert log.work(3, 2.0, 0, 2.0)


def test_deadline_is_inclusive():
    log = make_log()
    assert tick_deadlines(log, 4) == set()
    assert tick_deadlines(log, 5) == {1, 2}
    assert log.deadline_failed == {1, 2}
    assert log.pending == {3}


def test_fail_on_incident_ignores_unknown_and_closed():
    log = make_log()
    log.work(2, 2.0, 0, 2.0)
    assert fail_on_incident(log, [2, 3, 99], t=1) == {3}
    assert log.failed_reason[2] == "scrapped"
    assert log.deadline_failed == set()


def test_duplicate_nodes_and_negative_deadline_rejected():
    with pytest.raises(ValueError):
        AssignmentLog((Assignment(1, 1, 1), Assignment(1, 2, 1)))
    with pytest.raises(ValueError):
        Assignment(0, -1, 1)


ops = st.lists(st.tuples(st.sampled_from(["work", "tick", "fail"]), st.integers(0, 5), st.integers(0, 12)),
               max_size=30)


@given(ops)
def test_status_sets_always_partition(seq):
    log = AssignmentLog(tuple(Assignment(k, 2 * k + 1, k + 1) for k in range(6)))
    for op, node, t in seq:
        if op == "work" and node in log.pending:
            log.work(node, 1.0, t, 2.0)
        elif op == "tick":
            tick_deadlines(log, t)
        elif op == "fail":
            fail_on_incident(log, [node], t)
        parts = [log.pending, log.done, log.failed]
        assert sum(map(len, parts)) == 6 and set().union(*parts) == set(range(6))
        for k, s in enumerate(log.status):
            if s == AStatus.DONE:
                assert log.completed_at[k] is not None
    # terminal states never change again: every assignment appears at most once in a terminal transition
    terminal = [k for _, k, s in log.history if s in (AStatus.DONE, AStatus.FAILED)]
    assert len(terminal) == len(set(terminal))
