"""Dependency-aware task runtime with pause/resume, external events and
polling services.

Tasks declare read/write sets over registered resources; a task becomes
ready once every earlier writer of its reads/writes and every earlier
reader of its writes has completed.  Scheduling is a single global FIFO
ready queue served by ``workers`` execution agents, with spawn-id
tie-breaking for tasks that become ready at the same instant.

Two clock modes:

* ``virtual`` -- a discrete-event clock drives compute durations, device
  completions and polling periods.  Execution is fully serialized through
  the scheduler, so identical inputs produce identical traces.
* ``real`` -- wall-clock execution on ``workers`` OS threads plus a
  dedicated polling thread.

Task bodies run on their own thread in both modes so that a paused body
is never buried under another task's live stack; a paused task occupies
no agent.
"""

from __future__ import annotations

import heapq
import itertools
import threading
import time
from collections import deque
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Iterable, Optional

SEC_NS = 1_000_000_000
MS_NS = 1_000_000
US_NS = 1_000

DEFAULT_POLL_PERIOD_US = 100.0


class TaskRuntimeError(Exception):
    pass


class NoTaskContextError(TaskRuntimeError):
    """Raised when a task-context API is called outside any task body."""


class UnknownResourceError(TaskRuntimeError):
    pass


class ShutdownError(TaskRuntimeError):
    pass


class HandleError(TaskRuntimeError):
    """Resume-handle misuse: double resume, resume of a completed task."""


class EventCounterError(TaskRuntimeError):
    pass


class ServiceError(TaskRuntimeError):
    pass


class DependencyCycleError(TaskRuntimeError):
    def __init__(self, stuck: list[tuple[int, list[int]]]):
        self.stuck = stuck
        desc = "; ".join(f"task {tid} waiting on {preds}" for tid, preds in stuck)
        super().__init__(f"no runnable task and no wake source: {desc}")


class TaskBodyError(TaskRuntimeError):
    def __init__(self, task_id: int, exc: BaseException):
        self.task_id = task_id
        self.cause = exc
        super().__init__(f"task {task_id} raised {exc!r}")


class TaskState(Enum):
    CREATED = "created"
    READY = "ready"
    RUNNING = "running"
    PAUSED = "paused"
    EVENTS_PENDING = "body-finished-events-pending"
    COMPLETED = "completed"


@dataclass
class RunStats:
    elapsed_ns: int
    tasks_executed: int
    completed_all: bool = True

    @property
    def elapsed_s(self) -> float:
        return self.elapsed_ns / SEC_NS


class ResumeHandle:
    """One-shot resumption capability for a paused task."""

    __slots__ = ("task_id", "_state")

    def __init__(self, task_id: int):
        self.task_id = task_id
        self._state = "pending"  # pending -> early|waiting -> redeemed

    def __repr__(self):
        return f"ResumeHandle(task={self.task_id}, state={self._state})"


class _Resource:
    __slots__ = ("last_writer", "readers_since")

    def __init__(self):
        self.last_writer: Optional[int] = None
        self.readers_since: list[int] = []


class _Task:
    __slots__ = (
        "id", "body", "reads", "writes", "state", "event_count",
        "unmet", "dependents", "runner", "started",
        "stepping", "resume_pending",
    )

    def __init__(self, tid: int, body: Callable[[], None], reads, writes):
        self.id = tid
        self.body = body
        self.reads = frozenset(reads)
        self.writes = frozenset(writes)
        self.state = TaskState.CREATED
        self.event_count = 0
        self.unmet = 0
        self.dependents: list[_Task] = []
        self.runner: Optional[_TaskRunner] = None
        self.started = False
        # real-clock engine: True while a worker is inside runner.step();
        # a resume arriving in that window is deferred so the same runner
        # is never stepped by two workers at once
        self.stepping = False
        self.resume_pending = False


class _Service:
    __slots__ = ("sid", "name", "callback", "period_ns", "next_due_ns", "lock", "active")

    def __init__(self, sid: int, name: str, callback: Callable[[], int], period_ns: int):
        self.sid = sid
        self.name = name
        self.callback = callback
        self.period_ns = period_ns
        self.next_due_ns = 0
        self.lock = threading.Lock()  # serializes a service with itself
        self.active = True


class _TaskRunner:
    """Runs one task body on a dedicated thread with scheduler handoff.

    Exactly one of {scheduler/worker, this body} runs at a time; control
    moves through ``step`` (scheduler side) and ``yield_to_scheduler``
    (body side).
    """

    def __init__(self, runtime: "Runtime", task: _Task):
        self._rt = runtime
        self.task = task
        self._go = threading.Event()
        self._yielded = threading.Event()
        self.yielded: tuple = ()
        self.io_result = None
        self.thread = threading.Thread(
            target=self._main, name=f"task-{task.id}", daemon=True
        )
        self.thread.start()

    def _main(self) -> None:
        self._go.wait()
        self._go.clear()
        self._rt._tls.task = self.task
        try:
            self.task.body()
        except BaseException as exc:  # surfaced as TaskBodyError by the engine
            self.yielded = ("error", exc)
            self._yielded.set()
            return
        self.yielded = ("done", None)
        self._yielded.set()

    def yield_to_scheduler(self, what: tuple) -> None:
        self.yielded = what
        self._yielded.set()
        self._go.wait()
        self._go.clear()

    def step(self) -> tuple:
        self._go.set()
        self._yielded.wait()
        self._yielded.clear()
        return self.yielded


class Runtime:
    def __init__(
        self,
        workers: int = 1,
        clock_mode: str = "virtual",
        poll_period_us: float = DEFAULT_POLL_PERIOD_US,
        trace: bool = True,
    ):
        if workers < 1:
            raise ValueError("workers must be >= 1")
        if clock_mode not in ("virtual", "real"):
            raise ValueError(f"unknown clock mode {clock_mode!r}")
        self.workers = workers
        self.clock_mode = clock_mode
        self.poll_period_ns = int(poll_period_us * US_NS)
        self._trace_enabled = trace
        self.trace: list[tuple[int, str, object]] = []

        self._lock = threading.RLock()
        self._tls = threading.local()
        self._task_seq = itertools.count(0)
        self._res_seq = itertools.count(0)
        self._svc_seq = itertools.count(0)
        self._tasks: dict[int, _Task] = {}
        self._resources: dict[int, _Resource] = {}
        self._services: dict[int, _Service] = {}
        self._io_contexts: list = []
        self._ready: deque[_Task] = deque()
        self._ready_cond = threading.Condition(self._lock)
        self._incomplete = 0
        self._executed = 0
        self._progress = 0  # bumped on ready/complete/spawn, for stall detection
        self._shutdown = False
        self._body_error: Optional[TaskBodyError] = None

        # virtual engine state
        self._now_ns = 0
        self._event_seq = itertools.count(0)
        self._events: list[tuple[int, int, str, object]] = []
        self._agents_free = workers
        self._io_waiters: dict[tuple[int, int], _Task] = {}

        # real engine state
        self._real_t0 = 0
        self._busy = 0
        self._stop = False

    # ------------------------------------------------------------------
    # clock / trace

    def now_ns(self) -> int:
        if self.clock_mode == "virtual":
            return self._now_ns
        if self._real_t0:
            return time.monotonic_ns() - self._real_t0
        return 0

    def _trace_evt(self, event: str, ident) -> None:
        if self._trace_enabled:
            self.trace.append((self.now_ns(), event, ident))

    def write_trace(self, path: str) -> None:
        """One event per line: ``<time_ns> <event> <task_or_service_id>``."""
        with open(path, "w") as fh:
            for t, event, ident in self.trace:
                fh.write(f"{t} {event} {ident}\n")

    # ------------------------------------------------------------------
    # resources and spawning

    def register_resource(self) -> int:
        with self._lock:
            rid = next(self._res_seq)
            self._resources[rid] = _Resource()
            return rid

    def spawn_task(self, body: Callable[[], None], reads: Iterable[int] = (), writes: Iterable[int] = ()) -> int:
        with self._lock:
            if self._shutdown:
                raise ShutdownError("spawn after shutdown")
            reads = frozenset(reads)
            writes = frozenset(writes)
            for rid in reads | writes:
                if rid not in self._resources:
                    raise UnknownResourceError(f"resource {rid} not registered")
            tid = next(self._task_seq)
            task = _Task(tid, body, reads, writes)
            self._tasks[tid] = task
            self._incomplete += 1

            preds: set[int] = set()
            for rid in reads:
                res = self._resources[rid]
                if res.last_writer is not None:
                    preds.add(res.last_writer)
            for rid in writes:
                res = self._resources[rid]
                if res.last_writer is not None:
                    preds.add(res.last_writer)
                preds.update(res.readers_since)
            preds.discard(tid)
            for pid in preds:
                pred = self._tasks[pid]
                if pred.state is not TaskState.COMPLETED:
                    task.unmet += 1
                    pred.dependents.append(task)

            for rid in reads:
                self._resources[rid].readers_since.append(tid)
            for rid in writes:
                res = self._resources[rid]
                res.last_writer = tid
                res.readers_since = []

            self._trace_evt("spawn", tid)
            if task.unmet == 0:
                self._make_ready(task)
            self._progress += 1
            return tid

    def _make_ready(self, task: _Task) -> None:
        task.state = TaskState.READY
        self._trace_evt("ready", task.id)
        self._ready.append(task)
        self._progress += 1
        self._ready_cond.notify_all()

    def _complete(self, task: _Task) -> None:
        task.state = TaskState.COMPLETED
        self._trace_evt("complete", task.id)
        self._incomplete -= 1
        self._executed += 1
        self._progress += 1
        released = [d for d in task.dependents]
        released.sort(key=lambda t: t.id)
        for dep in released:
            dep.unmet -= 1
            if dep.unmet == 0:
                self._make_ready(dep)
        self._ready_cond.notify_all()

    # ------------------------------------------------------------------
    # task-context APIs

    def current_task(self) -> int:
        task = getattr(self._tls, "task", None)
        if task is None:
            raise NoTaskContextError("not inside a task body")
        return task.id

    def _current(self) -> _Task:
        task = getattr(self._tls, "task", None)
        if task is None:
            raise NoTaskContextError("not inside a task body")
        return task

    def task_state(self, task_id: int) -> TaskState:
        return self._tasks[task_id].state

    def event_count(self, task_id: int) -> int:
        return self._tasks[task_id].event_count

    def create_resume_handle(self, task_id: Optional[int] = None) -> ResumeHandle:
        """Handle for resuming the given (default: current) task later."""
        if task_id is None:
            task_id = self.current_task()
        return ResumeHandle(task_id)

    def pause_current_task(self, handle: Optional[ResumeHandle] = None) -> ResumeHandle:
        task = self._current()
        if handle is None:
            handle = ResumeHandle(task.id)
        elif handle.task_id != task.id:
            raise HandleError("handle belongs to a different task")
        with self._lock:
            if handle._state == "early":
                # resumed before we managed to pause: no-op
                handle._state = "redeemed"
                return handle
            if handle._state != "pending":
                raise HandleError(f"handle already {handle._state}")
            handle._state = "waiting"
            task.state = TaskState.PAUSED
            self._trace_evt("pause", task.id)
        task.runner.yield_to_scheduler(("pause", handle))
        return handle

    def resume_task(self, handle: ResumeHandle) -> None:
        with self._lock:
            task = self._tasks[handle.task_id]
            if task.state is TaskState.COMPLETED:
                raise HandleError(f"resume of completed task {task.id}")
            if handle._state in ("redeemed", "early"):
                raise HandleError("handle redeemed twice")
            if handle._state == "pending":
                handle._state = "early"
                return
            handle._state = "redeemed"
            if task.stepping:
                # the worker dispatching this task has not consumed its
                # pause yield yet; let it requeue the task itself
                task.resume_pending = True
            else:
                self._make_ready(task)

    def increase_event_counter(self, task_id: int, n: int) -> None:
        if n < 1:
            raise EventCounterError("count must be positive")
        with self._lock:
            task = self._tasks[task_id]
            if task.state is TaskState.COMPLETED:
                raise EventCounterError(f"task {task_id} already completed")
            if task.state not in (TaskState.RUNNING, TaskState.PAUSED):
                raise EventCounterError("event increments are only legal while the body runs")
            task.event_count += n

    def decrease_event_counter(self, task_id: int, n: int) -> None:
        if n < 1:
            raise EventCounterError("count must be positive")
        with self._lock:
            task = self._tasks[task_id]
            if task.event_count < n:
                raise EventCounterError(
                    f"event counter underflow on task {task_id}: {task.event_count} - {n}"
                )
            task.event_count -= n
            if task.event_count == 0 and task.state is TaskState.EVENTS_PENDING:
                self._complete(task)

    # ------------------------------------------------------------------
    # polling services

    def register_polling_service(
        self,
        name: str,
        callback: Callable[[], int],
        period_hint_s: Optional[float] = None,
    ) -> int:
        with self._lock:
            period_ns = int(period_hint_s * SEC_NS) if period_hint_s else self.poll_period_ns
            sid = next(self._svc_seq)
            svc = _Service(sid, name, callback, period_ns)
            self._services[sid] = svc
            svc.next_due_ns = self.now_ns() + period_ns
            if self.clock_mode == "virtual":
                self._push_event(svc.next_due_ns, "poll", svc)
            return sid

    def unregister_polling_service(self, sid: int) -> None:
        with self._lock:
            svc = self._services.pop(sid, None)
            if svc is None:
                raise ServiceError(f"service {sid} not registered")
            svc.active = False

    def _run_service(self, svc: _Service) -> int:
        with svc.lock:
            count = svc.callback() or 0
        self._trace_evt("poll", svc.sid)
        return count

    # ------------------------------------------------------------------
    # in-body primitives

    def task_sleep(self, duration_ns: int) -> None:
        """Occupy the current agent for the given duration."""
        task = self._current()
        if duration_ns <= 0:
            return
        if self.clock_mode == "virtual":
            task.runner.yield_to_scheduler(("sleep", duration_ns))
        else:
            time.sleep(duration_ns / SEC_NS)

    def busy_wait(self, duration_ns: int) -> None:
        """Busy-wait compute: virtual-exact, wall-clock spin in real mode."""
        task = self._current()
        if duration_ns <= 0:
            return
        if self.clock_mode == "virtual":
            task.runner.yield_to_scheduler(("sleep", duration_ns))
        else:
            deadline = time.perf_counter_ns() + duration_ns
            while time.perf_counter_ns() < deadline:
                pass

    def attach_io_context(self, ctx) -> None:
        with self._lock:
            if ctx not in self._io_contexts:
                self._io_contexts.append(ctx)

    def block_on_request(self, ctx, request_id: int):
        """Synchronous wait for one I/O request, holding the agent."""
        task = self._current()
        if self.clock_mode == "virtual":
            rec = ctx.take_completion(request_id)
            if rec is not None:
                return rec
            task.runner.yield_to_scheduler(("io_wait", ctx, request_id))
            return task.runner.io_result
        return ctx.wait_for(request_id)

    # ------------------------------------------------------------------
    # run loop

    def run_to_completion(self, time_limit_s: Optional[float] = None) -> RunStats:
        if not self._tasks:
            raise TaskRuntimeError("no task spawned")
        if self.clock_mode == "virtual":
            return self._run_virtual(time_limit_s)
        return self._run_real(time_limit_s)

    def shutdown(self) -> None:
        with self._lock:
            self._shutdown = True

    # -- virtual engine ------------------------------------------------

    def _push_event(self, t_ns: int, kind: str, payload) -> None:
        heapq.heappush(self._events, (t_ns, next(self._event_seq), kind, payload))

    def _outstanding_io(self) -> int:
        return sum(ctx.outstanding for ctx in self._io_contexts)

    def _run_virtual(self, time_limit_s: Optional[float]) -> RunStats:
        t_start = self._now_ns
        deadline = None if time_limit_s is None else t_start + int(time_limit_s * SEC_NS)
        executed0 = self._executed
        idle_since: Optional[int] = None
        idle_progress = -1

        while True:
            if self._body_error is not None:
                raise self._body_error

            # dispatch ready tasks onto free agents (never idle with work)
            while self._ready and self._agents_free > 0 and not (
                deadline is not None and self._now_ns >= deadline
            ):
                task = self._ready.popleft()
                self._agents_free -= 1
                self._dispatch_virtual(task)

            if self._body_error is not None:
                raise self._body_error
            if self._incomplete == 0:
                break

            past_deadline = deadline is not None and self._now_ns >= deadline
            busy = self.workers - self._agents_free
            if past_deadline and busy == 0 and self._outstanding_io() == 0:
                break

            # idle with no wake source beyond polling: give the services a
            # generous number of periods, then report the stuck tasks
            if not past_deadline and busy == 0 and not self._ready and self._outstanding_io() == 0:
                stuck = [
                    (t.id, sorted(p.id for p in self._tasks.values() if t in p.dependents))
                    for t in self._tasks.values()
                    if t.state is not TaskState.COMPLETED
                ]
                active = [s for s in self._services.values() if s.active]
                if not active:
                    raise DependencyCycleError(stuck)
                if idle_since is None or self._progress != idle_progress:
                    idle_since = self._now_ns
                    idle_progress = self._progress
                elif self._now_ns - idle_since > 1000 * max(s.period_ns for s in active):
                    raise DependencyCycleError(stuck)
            else:
                idle_since = None

            # advance the clock to the next event
            cand: list[int] = []
            if self._events:
                cand.append(self._events[0][0])
            for ctx in self._io_contexts:
                next_event = getattr(ctx, "next_event_ns", None)
                if next_event is None:
                    continue  # wall-clock backend; virtual mode cannot wait on it
                ne = next_event()
                if ne is not None:
                    cand.append(ne)
            if not cand:
                # nothing scheduled but agents busy is impossible (busy bodies
                # always have a wake/io event); treat as stall
                raise TaskRuntimeError("virtual engine stalled with no events")
            t_next = max(self._now_ns, min(cand))
            self._now_ns = t_next
            for ctx in self._io_contexts:
                advance = getattr(ctx, "advance_to", None)
                if advance is not None:
                    advance(t_next)

            # deliver completions to synchronous waiters
            if self._io_waiters:
                for key, (ctx, task) in list(self._io_waiters.items()):
                    rec = ctx.take_completion(key[1])
                    if rec is not None:
                        del self._io_waiters[key]
                        task.runner.io_result = rec
                        self._continue_virtual(task)

            # timer/poll events due at t_next
            while self._events and self._events[0][0] <= t_next:
                _, _, kind, payload = heapq.heappop(self._events)
                if kind == "wake":
                    self._continue_virtual(payload)
                elif kind == "poll":
                    svc: _Service = payload
                    if svc.active:
                        self._run_service(svc)
                        svc.next_due_ns += svc.period_ns
                        self._push_event(svc.next_due_ns, "poll", svc)

        elapsed = self._now_ns - t_start
        completed_all = self._incomplete == 0
        return RunStats(elapsed, self._executed - executed0, completed_all)

    def _dispatch_virtual(self, task: _Task) -> None:
        if task.runner is None:
            task.runner = _TaskRunner(self, task)
        if not task.started:
            task.started = True
            task.state = TaskState.RUNNING
            self._trace_evt("start", task.id)
        else:
            task.state = TaskState.RUNNING
            self._trace_evt("resume", task.id)
        self._handle_yield(task, task.runner.step())

    def _continue_virtual(self, task: _Task) -> None:
        self._handle_yield(task, task.runner.step())

    def _handle_yield(self, task: _Task, yielded: tuple) -> None:
        kind, payload = yielded[0], yielded[1:]
        if kind == "sleep":
            self._push_event(self._now_ns + payload[0], "wake", task)
        elif kind == "io_wait":
            ctx, rid = payload
            rec = ctx.take_completion(rid)
            if rec is not None:
                task.runner.io_result = rec
                self._continue_virtual(task)
            else:
                self._io_waiters[(id(ctx), rid)] = (ctx, task)
        elif kind == "pause":
            # state was set to PAUSED inside pause_current_task
            self._agents_free += 1
        elif kind == "done":
            self._agents_free += 1
            with self._lock:
                self._trace_evt("body_end", task.id)
                if task.event_count > 0:
                    task.state = TaskState.EVENTS_PENDING
                else:
                    self._complete(task)
        elif kind == "error":
            self._agents_free += 1
            with self._lock:
                self._incomplete -= 1
                if self._body_error is None:
                    self._body_error = TaskBodyError(task.id, payload[0])
        else:  # pragma: no cover
            raise TaskRuntimeError(f"unknown yield {kind!r}")

    # -- real engine ---------------------------------------------------

    def _run_real(self, time_limit_s: Optional[float]) -> RunStats:
        self._real_t0 = time.monotonic_ns()
        executed0 = self._executed
        self._stop = False

        workers = [
            threading.Thread(target=self._worker_loop, name=f"agent-{i}", daemon=True)
            for i in range(self.workers)
        ]
        for w in workers:
            w.start()
        poller = threading.Thread(target=self._poller_loop, name="poller", daemon=True)
        poller.start()

        deadline = None if time_limit_s is None else time.monotonic() + time_limit_s
        stall_progress = -1
        stall_since = 0.0
        completed_all = True
        with self._lock:
            while self._incomplete > 0 and self._body_error is None:
                timeout = 0.05
                if deadline is not None:
                    timeout = min(timeout, max(0.0, deadline - time.monotonic()))
                self._ready_cond.wait(timeout)
                if self._incomplete == 0 or self._body_error is not None:
                    break
                if deadline is not None and time.monotonic() >= deadline:
                    completed_all = False
                    break
                idle = self._busy == 0 and not self._ready and self._outstanding_io() == 0
                if idle:
                    if self._progress != stall_progress:
                        stall_progress = self._progress
                        stall_since = time.monotonic()
                    elif time.monotonic() - stall_since > 0.5:
                        self._stop = True
                        self._ready_cond.notify_all()
                        stuck = [
                            (t.id, sorted(p.id for p in self._tasks.values() if t in p.dependents))
                            for t in self._tasks.values()
                            if t.state is not TaskState.COMPLETED
                        ]
                        raise DependencyCycleError(stuck)
                else:
                    stall_progress = -1

            self._stop = True
            self._ready_cond.notify_all()

        if not completed_all:
            # stop dispatching, give in-flight bodies a grace period to drain
            t_grace = time.monotonic() + 5.0
            with self._lock:
                while (self._busy > 0 or self._outstanding_io() > 0) and time.monotonic() < t_grace:
                    self._ready_cond.wait(0.05)

        for w in workers:
            w.join(timeout=5.0)
        poller.join(timeout=5.0)
        if self._body_error is not None:
            raise self._body_error
        elapsed = time.monotonic_ns() - self._real_t0
        return RunStats(elapsed, self._executed - executed0, completed_all)

    def _worker_loop(self) -> None:
        while True:
            with self._lock:
                while not self._ready and not self._stop:
                    self._ready_cond.wait(0.05)
                if self._stop:
                    return
                task = self._ready.popleft()
                self._busy += 1
                if task.runner is None:
                    task.runner = _TaskRunner(self, task)
                if not task.started:
                    task.started = True
                    task.state = TaskState.RUNNING
                    self._trace_evt("start", task.id)
                else:
                    task.state = TaskState.RUNNING
                    self._trace_evt("resume", task.id)
                task.stepping = True
            yielded = task.runner.step()
            with self._lock:
                self._busy -= 1
                task.stepping = False
                kind = yielded[0]
                if kind == "pause":
                    # state already PAUSED; agent (this worker) is free again.
                    # A resume that raced with the pause is applied now.
                    if task.resume_pending:
                        task.resume_pending = False
                        self._make_ready(task)
                elif kind == "done":
                    self._trace_evt("body_end", task.id)
                    if task.event_count > 0:
                        task.state = TaskState.EVENTS_PENDING
                    else:
                        self._complete(task)
                elif kind == "error":
                    self._incomplete -= 1
                    if self._body_error is None:
                        self._body_error = TaskBodyError(task.id, yielded[1])
                    self._stop = True
                self._ready_cond.notify_all()

    def _poller_loop(self) -> None:
        while not self._stop:
            now = time.monotonic_ns() - self._real_t0
            next_due = None
            for svc in list(self._services.values()):
                if not svc.active:
                    continue
                if svc.next_due_ns <= now:
                    self._run_service(svc)
                    svc.next_due_ns = now + svc.period_ns
                due = svc.next_due_ns
                if next_due is None or due < next_due:
                    next_due = due
            if next_due is None:
                time.sleep(0.001)
            else:
                delay = (next_due - (time.monotonic_ns() - self._real_t0)) / SEC_NS
                if delay > 0:
                    time.sleep(min(delay, 0.001))
