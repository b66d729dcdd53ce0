"""Server registry and task scheduler held by the agent.

Pure bookkeeping with no I/O: the agent daemon drives it from its event loop
and tests drive it directly with a simulated clock.
"""

from __future__ import annotations

import time
from collections import deque
from dataclasses import dataclass, field

from ..errors import DuplicateAddress, NoIdleServer, NoServersAvailable

HEARTBEAT_INTERVAL = 2.0
MISSED_HEARTBEATS = 3
MAX_ATTEMPTS = 3


@dataclass
class ServerRecord:
    server_id: int
    address: str
    capacity: int
    inflight: int = 0
    completed: int = 0
    failed_at: float | None = None
    alive: bool = True
    last_seen: float = 0.0


class Registry:
    """Enrolled servers and their load; ids are never reused."""

    def __init__(self, clock=time.monotonic, heartbeat_interval=HEARTBEAT_INTERVAL,
                 missed=MISSED_HEARTBEATS):
        self.clock = clock
        self.heartbeat_interval = heartbeat_interval
        self.missed = missed
        self.records: dict[int, ServerRecord] = {}
        self._next_id = 0

    def __len__(self) -> int:
        return len(self.records)

    def register(self, address: str, capacity: int) -> int:
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        if any(r.alive and r.address == address for r in self.records.values()):
            raise DuplicateAddress(f"{address} is already registered")
        sid = self._next_id
        self._next_id += 1
        self.records[sid] = ServerRecord(sid, address, int(capacity), last_seen=self.clock())
        return sid

    def alive(self) -> list[ServerRecord]:
        return [r for r in self.records.values() if r.alive]

    def total_slots(self) -> int:
        return sum(r.capacity for r in self.alive())

    def pick(self) -> int:
        """Least loaded alive server with a free slot; takes the slot."""
        best = None
        for r in self.records.values():
            if not r.alive or r.inflight >= r.capacity:
                continue
            key = (r.inflight / r.capacity, r.completed, r.server_id)
            if best is None or key < best[0]:
                best = (key, r)
        if best is None:
            raise NoIdleServer("every alive server is at capacity")
        best[1].inflight += 1
        return best[1].server_id

    def release(self, server_id: int, completed: bool = True) -> None:
        r = self.records[server_id]
        if r.inflight > 0:
            r.inflight -= 1
        if completed:
            r.completed += 1

    def heartbeat(self, server_id: int) -> None:
        r = self.records.get(server_id)
        if r is not None and r.alive:
            r.last_seen = self.clock()

    def mark_failed(self, server_id: int) -> bool:
        """Flag a server dead; False if it already was."""
        r = self.records[server_id]
        if not r.alive:
            return False
        r.alive = False
        r.inflight = 0
        r.failed_at = self.clock()
        return True

    def expired(self) -> list[int]:
        """Alive servers silent for ``missed`` heartbeat intervals."""
        limit = self.clock() - self.missed * self.heartbeat_interval
        return [r.server_id for r in self.records.values() if r.alive and r.last_seen <= limit]


PENDING, ASSIGNED, DONE, FAILED, CANCELLED = "pending", "assigned", "done", "failed", "cancelled"


@dataclass
class TaskRecord:
    task_id: int
    owner: object
    payload: object
    status: str = PENDING
    server_id: int | None = None
    attempts: int = 0
    tried: set = field(default_factory=set)
    reason: str = ""


class Scheduler:
    """Task queue over a :class:`Registry`.

    Accounting identity, checked by :meth:`balanced`::

        submitted = completed + pending + inflight + permanently_failed + cancelled
    """

    def __init__(self, registry: Registry, max_attempts: int = MAX_ATTEMPTS):
        self.registry = registry
        self.max_attempts = max_attempts
        self.tasks: dict[int, TaskRecord] = {}
        self.queue: deque[int] = deque()
        self._next_id = 0
        self.submitted = 0
        self.completed = 0
        self.permanently_failed = 0
        self.cancelled = 0

    def submit(self, owner, payload=None) -> int:
        tid = self._next_id
        self._next_id += 1
        self.tasks[tid] = TaskRecord(tid, owner, payload)
        self.queue.append(tid)
        self.submitted += 1
        return tid

    @property
    def pending(self) -> int:
        return sum(1 for t in self.tasks.values() if t.status == PENDING)

    @property
    def inflight(self) -> int:
        return sum(1 for t in self.tasks.values() if t.status == ASSIGNED)

    def balanced(self) -> bool:
        return self.submitted == (self.completed + self.pending + self.inflight
                                  + self.permanently_failed + self.cancelled)

    def dispatch(self) -> list[tuple[int, int]]:
        """Assign queued tasks to free slots; returns ``(task_id, server_id)`` pairs.

        Raises NoServersAvailable when tasks wait and no server is alive.
        """
        out = []
        while self.queue:
            tid = self.queue[0]
            t = self.tasks[tid]
            if t.status != PENDING:
                self.queue.popleft()
                continue
            try:
                sid = self.registry.pick()
            except NoIdleServer:
                if not self.registry.alive():
                    raise NoServersAvailable("no alive servers") from None
                break
            self.queue.popleft()
            t.status = ASSIGNED
            t.server_id = sid
            t.attempts += 1
            t.tried.add(sid)
            out.append((tid, sid))
        return out

    def complete(self, task_id: int, server_id: int) -> TaskRecord | None:
        """Record a result; None if the task is no longer assigned to that server."""
        t = self.tasks.get(task_id)
        if t is None or t.status != ASSIGNED or t.server_id != server_id:
            return None
        self.registry.release(server_id, completed=True)
        t.status = DONE
        t.payload = None
        self.completed += 1
        return t

    def fail(self, task_id: int, reason: str) -> TaskRecord | None:
        """Permanent failure of one task, e.g. a deterministic compute error."""
        t = self.tasks.get(task_id)
        if t is None or t.status in (DONE, FAILED, CANCELLED):
            return None
        if t.status == ASSIGNED:
            self.registry.release(t.server_id, completed=False)
        t.status = FAILED
        t.reason = reason
        t.payload = None
        self.permanently_failed += 1
        return t

    def server_failed(self, server_id: int) -> list[TaskRecord]:
        """Mark a server dead and requeue its tasks; returns tasks now out of attempts."""
        self.registry.mark_failed(server_id)
        dead = []
        for t in self.tasks.values():
            if t.status != ASSIGNED or t.server_id != server_id:
                continue
            t.server_id = None
            if t.attempts >= self.max_attempts:
                t.status = FAILED
                t.reason = f"lost with server {server_id}"
                t.payload = None
                self.permanently_failed += 1
                dead.append(t)
            else:
                t.status = PENDING
                self.queue.appendleft(t.task_id)
        return dead

    def fail_all_pending(self, reason: str) -> list[TaskRecord]:
        out = []
        for tid in list(self.queue):
            t = self.tasks[tid]
            if t.status == PENDING:
                t.status = FAILED
                t.reason = reason
                t.payload = None
                self.permanently_failed += 1
                out.append(t)
        self.queue.clear()
        return out

    def cancel_owner(self, owner_key) -> int:
        """Drop every unfinished task whose owner matches ``owner_key(owner)``."""
        n = 0
        for t in self.tasks.values():
            if t.status in (PENDING, ASSIGNED) and owner_key(t.owner):
                if t.status == ASSIGNED:
                    self.registry.release(t.server_id, completed=False)
                t.status = CANCELLED
                t.payload = None
                self.cancelled += 1
                n += 1
        return n

    def forget_finished(self) -> None:
        """Drop bookkeeping for finished tasks (counters are kept)."""
        for tid in [k for k, t in self.tasks.items() if t.status in (DONE, FAILED, CANCELLED)]:
            del self.tasks[tid]
