"""Task-aware storage I/O layer.

Bridges the asynchronous I/O contexts and the task runtime:

* blocking wrappers (``*_blocking``) submit asynchronously and pause the
  calling task until the request completes, freeing its agent;
* non-blocking calls (``ta_pread`` and friends) register an external
  event on the calling task and return immediately -- dependents of the
  task are gated on the completion, so the data is consumed in a
  dependent task, never in the submitting one;
* a polling function registered with the runtime reaps completions and
  performs the matching wake action (resume, or event-counter decrement),
  and drives deferred queue-full retries.

When the in-flight cap is reached the request is retried every
``retry_sleep`` (1 ms by default) instead of surfacing an error.
"""

from __future__ import annotations

import os
import threading
import warnings
from dataclasses import dataclass, field
from typing import Optional

from .device import DeviceModel
from .iocontext import (
    QUEUE_FULL,
    Completed,
    InFlight,
    IoRequest,
    PoolContext,
    SimulatedContext,
    context_create,
)
from .runtime import Runtime, ResumeHandle, SEC_NS

DEFAULT_MAX_IN_FLIGHT = 1000
DEFAULT_RETRY_SLEEP_S = 0.001

#: Batch cap per polling invocation, to bound time inside the callback.
POLL_BATCH = 64

ENV_MAX_INFLIGHT = "TASIO_MAX_INFLIGHT"
ENV_RETRY_US = "TASIO_RETRY_US"


class TasioError(Exception):
    pass


@dataclass
class TasioConfig:
    max_in_flight: int = DEFAULT_MAX_IN_FLIGHT
    retry_sleep_s: float = DEFAULT_RETRY_SLEEP_S
    backend: str = "simulated"
    model: Optional[DeviceModel] = None
    pool_workers: int = 4
    strict_metadata: bool = False
    direct: bool = False

    def __post_init__(self):
        if self.max_in_flight < 1:
            raise ValueError("max_in_flight must be >= 1")
        if self.retry_sleep_s <= 0:
            raise ValueError("retry_sleep must be positive")

    def with_env_overrides(self) -> "TasioConfig":
        """Apply TASIO_MAX_INFLIGHT / TASIO_RETRY_US, read at init time."""
        cfg = TasioConfig(**self.__dict__)
        if ENV_MAX_INFLIGHT in os.environ:
            cfg.max_in_flight = int(os.environ[ENV_MAX_INFLIGHT])
        if ENV_RETRY_US in os.environ:
            cfg.retry_sleep_s = float(os.environ[ENV_RETRY_US]) / 1e6
        return cfg


@dataclass
class OpRecord:
    """Lifecycle of one wrapped I/O operation (kept for audits)."""

    request_id: int
    mode: str  # "blocking" | "nonblocking"
    task: int
    created_ns: int
    submitted_ns: int = -1
    completed_ns: int = -1
    attempts: int = 1
    bytes_transferred: int = -1
    error: Optional[Exception] = None

    @property
    def retried(self) -> bool:
        return self.attempts > 1


class _PendingOp:
    __slots__ = ("record", "handle", "result")

    def __init__(self, record: OpRecord, handle: Optional[ResumeHandle]):
        self.record = record
        self.handle = handle  # blocking mode only
        self.result = None


class _Deferred:
    __slots__ = ("req", "record", "next_attempt_ns")

    def __init__(self, req: IoRequest, record: OpRecord, next_attempt_ns: int):
        self.req = req
        self.record = record
        self.next_attempt_ns = next_attempt_ns


class TasioLayer:
    def __init__(self, runtime: Runtime, config: Optional[TasioConfig] = None):
        config = (config or TasioConfig()).with_env_overrides()
        self.config = config
        self._rt = runtime
        self.ctx = context_create(
            config.max_in_flight,
            config.backend,
            model=config.model,
            pool_workers=config.pool_workers,
            strict_metadata=config.strict_metadata,
        )
        runtime.attach_io_context(self.ctx)
        self._lock = threading.RLock()
        self._retry_ns = int(config.retry_sleep_s * SEC_NS)
        self._pending: dict[int, _PendingOp] = {}
        self._deferred: list[_Deferred] = []
        self._task_errors: dict[int, list[tuple[int, Exception]]] = {}
        self.completed_ops: list[OpRecord] = []
        self._in_poll = False
        self._poll_reentered = False
        self._service_id = runtime.register_polling_service("tasio", self.poll)
        self._shut = False

    # ------------------------------------------------------------------
    # blocking API (pause/resume)

    def pread_blocking(self, file, buffer, count: int, offset: int) -> int:
        return self._blocking(self._req("read", file, offset, ((buffer, count),)))

    def pwrite_blocking(self, file, buffer, count: int, offset: int) -> int:
        return self._blocking(self._req("write", file, offset, ((buffer, count),)))

    def preadv_blocking(self, file, segments, offset: int) -> int:
        return self._blocking(self._req("read", file, offset, tuple(segments)))

    def pwritev_blocking(self, file, segments, offset: int) -> int:
        return self._blocking(self._req("write", file, offset, tuple(segments)))

    # ------------------------------------------------------------------
    # non-blocking API (external events)

    def pread(self, file, buffer, count: int, offset: int) -> None:
        self._nonblocking(self._req("read", file, offset, ((buffer, count),)))

    def pwrite(self, file, buffer, count: int, offset: int) -> None:
        self._nonblocking(self._req("write", file, offset, ((buffer, count),)))

    def preadv(self, file, segments, offset: int) -> None:
        self._nonblocking(self._req("read", file, offset, tuple(segments)))

    def pwritev(self, file, segments, offset: int) -> None:
        self._nonblocking(self._req("write", file, offset, tuple(segments)))

    def last_errors(self, task_id: int) -> list[tuple[int, Exception]]:
        """Submission/completion errors of non-blocking ops of one task."""
        with self._lock:
            return list(self._task_errors.get(task_id, ()))

    # ------------------------------------------------------------------

    def _req(self, kind: str, file, offset: int, segments) -> IoRequest:
        return IoRequest(kind, file, offset, tuple(segments), direct=self.config.direct)

    def _blocking(self, req: IoRequest) -> int:
        task_id = self._rt.current_task()
        record = OpRecord(-1, "blocking", task_id, self._rt.now_ns())
        while True:
            with self._lock:
                res = self.ctx.submit(req)
                if isinstance(res, InFlight):
                    record.request_id = res.request_id
                    record.submitted_ns = self._rt.now_ns()
                    handle = self._rt.create_resume_handle(task_id)
                    self._pending[res.request_id] = _PendingOp(record, handle)
                    break
            if isinstance(res, Completed):
                # zero-length probes complete at submission
                record.submitted_ns = record.completed_ns = self._rt.now_ns()
                record.bytes_transferred = res.bytes_transferred
                self.completed_ops.append(record)
                return res.bytes_transferred
            assert res is QUEUE_FULL
            record.attempts += 1
            self._rt.task_sleep(self._retry_ns)
        op = self._pending[record.request_id]
        self._rt.pause_current_task(op.handle)
        rec = op.result
        assert rec is not None, "resumed without a completion record"
        if rec.error is not None:
            raise rec.error
        return rec.bytes_transferred

    def _nonblocking(self, req: IoRequest) -> None:
        task_id = self._rt.current_task()
        self._rt.increase_event_counter(task_id, 1)
        record = OpRecord(-1, "nonblocking", task_id, self._rt.now_ns())
        with self._lock:
            res = self.ctx.submit(req)
            if isinstance(res, InFlight):
                record.request_id = res.request_id
                record.submitted_ns = self._rt.now_ns()
                self._pending[res.request_id] = _PendingOp(record, None)
                return
            if res is QUEUE_FULL:
                record.attempts += 1
                self._deferred.append(
                    _Deferred(req, record, self._rt.now_ns() + self._retry_ns)
                )
                return
        assert isinstance(res, Completed)
        record.submitted_ns = record.completed_ns = self._rt.now_ns()
        record.bytes_transferred = res.bytes_transferred
        self.completed_ops.append(record)
        self._rt.decrease_event_counter(task_id, 1)

    # ------------------------------------------------------------------
    # polling function (runs from the runtime's polling machinery)

    def poll(self) -> int:
        if self._in_poll:
            # the runtime serializes a service with itself; this trips only
            # if that contract is broken
            self._poll_reentered = True
            raise TasioError("tasio poll reentered")
        self._in_poll = True
        try:
            return self._poll_impl(self._rt.now_ns())
        finally:
            self._in_poll = False

    def _poll_impl(self, now_ns: int) -> int:
        recs = self.ctx.poll_completions(POLL_BATCH)
        return self._process_records(recs, now_ns)

    def _process_records(self, recs, now_ns: int) -> int:
        progress = 0
        with self._lock:
            finished = []
            for rec in recs:
                op = self._pending.pop(rec.request_id)
                op.result = rec
                op.record.completed_ns = now_ns
                op.record.bytes_transferred = rec.bytes_transferred
                op.record.error = rec.error
                self.completed_ops.append(op.record)
                if rec.error is not None and op.handle is None:
                    self._task_errors.setdefault(op.record.task, []).append(
                        (rec.request_id, rec.error)
                    )
                finished.append(op)
        for op in finished:
            if op.handle is not None:
                self._rt.resume_task(op.handle)
            else:
                self._rt.decrease_event_counter(op.record.task, 1)
            progress += 1
        # deferred queue-full retries, 1 ms cadence
        with self._lock:
            due = [d for d in self._deferred if d.next_attempt_ns <= now_ns]
            for d in due:
                res = self.ctx.submit(d.req)
                if isinstance(res, InFlight):
                    d.record.request_id = res.request_id
                    d.record.submitted_ns = now_ns
                    self._pending[res.request_id] = _PendingOp(d.record, None)
                    self._deferred.remove(d)
                    progress += 1
                elif res is QUEUE_FULL:
                    d.record.attempts += 1
                    d.next_attempt_ns = now_ns + self._retry_ns
                else:  # zero-length cannot be deferred; defensive
                    d.record.completed_ns = now_ns
                    self.completed_ops.append(d.record)
                    self._deferred.remove(d)
                    self._rt.decrease_event_counter(d.record.task, 1)
                    progress += 1
        return progress

    # ------------------------------------------------------------------

    @property
    def pending_count(self) -> int:
        with self._lock:
            return len(self._pending) + len(self._deferred)

    def shutdown(self) -> None:
        """Drain outstanding operations, then unregister the poller."""
        if self._shut:
            return
        if self.pending_count:
            warnings.warn("tasio shutdown with operations still in flight; draining")
        self._drain()
        self._rt.unregister_polling_service(self._service_id)
        if isinstance(self.ctx, PoolContext):
            self.ctx.shutdown()
        self._shut = True

    def _drain(self) -> None:
        if isinstance(self.ctx, SimulatedContext):
            now = max(self._rt.now_ns(), self.ctx.now_ns)
            while self.pending_count:
                nxt = self.ctx.next_event_ns()
                if nxt is not None:
                    self.ctx.advance_to(nxt)
                    now = max(now, nxt)
                else:
                    now += self._retry_ns
                self._poll_impl(now)
        else:
            while self.pending_count:
                recs, _ = self.ctx.wait_completions(1, 0.05)
                self._process_records(recs, self._rt.now_ns())


# ----------------------------------------------------------------------
# module-level singleton, mirroring the C-style interface

_layer: Optional[TasioLayer] = None


def tasio_init(runtime: Runtime, config: Optional[TasioConfig] = None) -> TasioLayer:
    global _layer
    if _layer is not None:
        raise TasioError("tasio already initialized")
    _layer = TasioLayer(runtime, config)
    return _layer


def tasio_shutdown() -> None:
    global _layer
    if _layer is None:
        raise TasioError("tasio not initialized")
    _layer.shutdown()
    _layer = None


def _require_layer() -> TasioLayer:
    if _layer is None:
        raise TasioError("tasio not initialized")
    return _layer


def ta_pread_blocking(file, buffer, count, offset):
    return _require_layer().pread_blocking(file, buffer, count, offset)


def ta_pwrite_blocking(file, buffer, count, offset):
    return _require_layer().pwrite_blocking(file, buffer, count, offset)


def ta_preadv_blocking(file, segments, offset):
    return _require_layer().preadv_blocking(file, segments, offset)


def ta_pwritev_blocking(file, segments, offset):
    return _require_layer().pwritev_blocking(file, segments, offset)


def ta_pread(file, buffer, count, offset):
    _require_layer().pread(file, buffer, count, offset)


def ta_pwrite(file, buffer, count, offset):
    _require_layer().pwrite(file, buffer, count, offset)


def ta_preadv(file, segments, offset):
    _require_layer().preadv(file, segments, offset)


def ta_pwritev(file, segments, offset):
    _require_layer().pwritev(file, segments, offset)


def ta_last_errors(task_id):
    return _require_layer().last_errors(task_id)
