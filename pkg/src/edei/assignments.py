"""Deadline-ordered primary assignments and their completion log."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterable


class AStatus(enum.IntEnum):
    PENDING = 0
    IN_PROGRESS = 1
    DONE = 2
    FAILED = 3


# bare names avoid the slow enum class attribute lookup in hot loops
PENDING, IN_PROGRESS, DONE, FAILED = AStatus
TERMINAL = (DONE, FAILED)


@dataclass(frozen=True)
class Assignment:
    node: int
    deadline: int
    value: int

    def __post_init__(self):
        if self.deadline < 0:
            raise ValueError(f"assignment at node {self.node}: negative deadline")


def order_queue(assignments: Iterable[Assignment]) -> list[Assignment]:
    """Ascending deadline, ties by node id."""
    return sorted(assignments, key=lambda a: (a.deadline, a.node))


@dataclass
class AssignmentLog:
    """Completion record for one episode; indices follow ``assignments``."""

    assignments: tuple[Assignment, ...]
    status: list[AStatus] = field(default_factory=list)
    progress: list[float] = field(default_factory=list)
    completed_at: list[int | None] = field(default_factory=list)
    failed_reason: list[str | None] = field(default_factory=list)
    history: list[tuple[int, int, AStatus]] = field(default_factory=list)

    def __post_init__(self):
        self.assignments = tuple(order_queue(self.assignments))
        nodes = [a.node for a in self.assignments]
        if len(set(nodes)) != len(nodes):
            raise ValueError("at most one assignment per node")
        m = len(self.assignments)
        self.status = self.status or [PENDING] * m
        self.progress = self.progress or [0.0] * m
        self.completed_at = self.completed_at or [None] * m
        self.failed_reason = self.failed_reason or [None] * m
        self._by_node = {a.node: k for k, a in enumerate(self.assignments)}

    def copy(self) -> "AssignmentLog":
        return AssignmentLog(
            self.assignments,
            list(self.status),
            list(self.progress),
            list(self.completed_at),
            list(self.failed_reason),
            list(self.history),
        )

    def index_of(self, node: int) -> int | None:
        return self._by_node.get(node)

    def _set(self, k: int, new: AStatus, t: int) -> None:
        if self.status[k] in TERMINAL:
            raise RuntimeError(f"assignment {k} is already {self.status[k].name}")
        self.status[k] = new
        self.history.append((t, k, new))

    def is_open(self, k: int) -> bool:
        return self.status[k] not in TERMINAL

    @property
    def pending(self) -> set[int]:
        """Nodes whose assignment is still open (the waiting set)."""
        return {a.node for a, s in zip(self.assignments, self.status) if s not in TERMINAL}

    @property
    def done(self) -> set[int]:
        return {a.node for a, s in zip(self.assignments, self.status) if s == DONE}

    @property
    def failed(self) -> set[int]:
        return {a.node for a, s in zip(self.assignments, self.status) if s == FAILED}

    @property
    def deadline_failed(self) -> set[int]:
        return {
            a.node
            for a, s, why in zip(self.assignments, self.status, self.failed_reason)
            if s == FAILED and why == "deadline"
        }

    def work(self, node: int, amount: float, t: int, required: float) -> bool:
        """Add work to the open assignment at ``node``; True when it completes."""
        k = self._by_node[node]
        if not self.is_open(k):
            raise RuntimeError(f"assignment at node {node} is closed")
        if self.status[k] == PENDING:
            self._set(k, IN_PROGRESS, t)
        self.progress[k] += amount
        if self.progress[k] >= required - 1e-12:
            self._set(k, DONE, t)
            self.completed_at[k] = t
            return True
        return False


def tick_deadlines(log: AssignmentLog, t: int) -> set[int]:
    """Fail open assignments whose deadline is before step ``t``; returns their nodes."""
    out = set()
    for k, a in enumerate(log.assignments):
        if log.is_open(k) and a.deadline < t:
            log._set(k, FAILED, t)
            log.failed_reason[k] = "deadline"
            out.add(a.node)
    return out


def fail_on_incident(log: AssignmentLog, scrapped: Iterable[int], t: int = 0) -> set[int]:
    out = set()
    for node in scrapped:
        k = log.index_of(node)
        if k is not None and log.is_open(k):
            log._set(k, FAILED, t)
            log.failed_reason[k] = "scrapped"
            out.add(node)
    return out


def completion_value(log: AssignmentLog) -> int:
    return sum(a.value for a, s in zip(log.assignments, log.status) if s == DONE)
