"""Asynchronous storage-I/O contexts.

Two backends share one submit/poll/wait surface:

* ``simulated`` -- a deterministic shared-rate device driven by a virtual
  clock.  Up to ``max_depth`` requests are serviced concurrently at the
  model's aggregate bandwidth, split evenly among the active requests;
  completion times are computed event by event.
* ``pool`` -- positional reads/writes on ordinary files delegated to a
  worker thread pool (POSIX-AIO style).

Requests never complete inline at submission, except zero-length probes;
when the queue is at capacity, ``submit`` returns ``QUEUE_FULL`` and the
caller owns the retry policy.
"""

from __future__ import annotations

import itertools
import math
import os
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

from .device import DeviceModel

#: Alignment unit (bytes) enforced for direct-I/O requests.
DIRECT_ALIGNMENT = 512

SEC_NS = 1_000_000_000


class IoError(Exception):
    pass


class AlignmentError(IoError):
    """Offset or segment length violates the direct-I/O alignment unit."""


class InvalidRequestError(IoError):
    pass


@dataclass(frozen=True)
class IoRequest:
    kind: str  # "read" | "write"
    file: object  # fd, file-like, or None for the simulated backend
    offset: int
    segments: tuple[tuple[object, int], ...]  # (buffer, length) pairs
    direct: bool = False

    @property
    def total_length(self) -> int:
        return sum(length for _, length in self.segments)

    def validate(self) -> None:
        if self.kind not in ("read", "write"):
            raise InvalidRequestError(f"unknown kind {self.kind!r}")
        if self.offset < 0:
            raise InvalidRequestError("negative offset")
        if any(length < 0 for _, length in self.segments):
            raise InvalidRequestError("negative segment length")
        if self.direct:
            if self.offset % DIRECT_ALIGNMENT:
                raise AlignmentError(f"offset {self.offset} not {DIRECT_ALIGNMENT}-aligned")
            for _, length in self.segments:
                if length % DIRECT_ALIGNMENT:
                    raise AlignmentError(f"segment length {length} not {DIRECT_ALIGNMENT}-aligned")


def make_request(kind: str, file: object, offset: int, buffer: object, length: int, direct: bool = False) -> IoRequest:
    """Single-segment request (pread/pwrite shape)."""
    return IoRequest(kind, file, offset, ((buffer, length),), direct)


@dataclass
class CompletionRecord:
    request_id: int
    bytes_transferred: int
    completion_time_ns: int
    error: Optional[Exception] = None


@dataclass(frozen=True)
class Completed:
    bytes_transferred: int


@dataclass(frozen=True)
class InFlight:
    request_id: int


class _QueueFull:
    def __repr__(self):
        return "QUEUE_FULL"


QUEUE_FULL = _QueueFull()


class IoContextBase:
    """Capacity bookkeeping shared by both backends."""

    backend = "?"

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self._lock = threading.RLock()
        self._ids = itertools.count(1)
        self._outstanding = 0

    @property
    def outstanding(self) -> int:
        """Submitted requests not yet reaped."""
        with self._lock:
            return self._outstanding

    def submit(self, req: IoRequest):
        raise NotImplementedError

    def poll_completions(self, max_records: int) -> list[CompletionRecord]:
        raise NotImplementedError

    def wait_completions(self, min_records: int, timeout_s: float) -> tuple[list[CompletionRecord], bool]:
        """Block the caller until >= min records are available or timeout.

        Returns (records, timed_out).
        """
        raise NotImplementedError

    def shutdown(self) -> None:
        """Release backend resources; the simulated backend has none."""


class _SimActive:
    __slots__ = ("rid", "kind", "total", "remaining")

    def __init__(self, rid: int, req: IoRequest):
        self.rid = rid
        self.kind = req.kind
        self.total = req.total_length
        self.remaining = float(self.total)


class SimulatedContext(IoContextBase):
    """Deterministic virtual-time device, processor-sharing discipline.

    The context owns a virtual clock (``now_ns``).  Standalone users call
    :meth:`wait_completions`, which advances the clock; an external driver
    (the task runtime) instead calls :meth:`advance_to`.
    """

    backend = "simulated"

    def __init__(self, capacity: int, model: DeviceModel):
        super().__init__(capacity)
        self.model = model
        self.now_ns = 0
        self._waiting: list[tuple[int, _SimActive]] = []  # beyond max_depth, FIFO
        self._latency: list[tuple[int, _SimActive]] = []  # (enter_service_ns, req)
        self._active: list[_SimActive] = []
        self._last_update_ns = 0
        self._finished: list[CompletionRecord] = []
        self._claims: dict[int, CompletionRecord] = {}

    # -- submission ----------------------------------------------------

    def submit(self, req: IoRequest):
        req.validate()
        if req.total_length == 0:
            return Completed(0)
        with self._lock:
            if self._outstanding >= self.capacity:
                return QUEUE_FULL
            self._outstanding += 1
            rid = next(self._ids)
            entry = _SimActive(rid, req)
            if len(self._latency) + len(self._active) < self.model.max_depth:
                self._admit(entry)
            else:
                self._waiting.append((rid, entry))
            return InFlight(rid)

    def _admit(self, entry: _SimActive) -> None:
        lat_ns = int(self.model.base_latency_us * 1000)
        if lat_ns > 0:
            self._latency.append((self.now_ns + lat_ns, entry))
        else:
            self._advance_active(self.now_ns)
            self._active.append(entry)

    # -- event machinery -----------------------------------------------

    def _advance_active(self, t_ns: int) -> None:
        """Drain service progress of the active set up to t_ns."""
        dt = (t_ns - self._last_update_ns) / SEC_NS
        if dt > 0 and self._active:
            n = len(self._active)
            for entry in self._active:
                rate = self.model.class_bw_bytes_s(entry.kind, entry.total) / n
                entry.remaining -= rate * dt
        self._last_update_ns = t_ns

    def _finish_time_ns(self, entry: _SimActive) -> float:
        n = len(self._active)
        rate = self.model.class_bw_bytes_s(entry.kind, entry.total) / n
        return self._last_update_ns + entry.remaining / rate * SEC_NS

    def next_event_ns(self) -> Optional[int]:
        with self._lock:
            times = [t for t, _ in self._latency]
            if self._active:
                # ceil so that advancing to the event time fully drains the
                # finishing request despite float rounding
                times.append(max(self.now_ns, math.ceil(min(self._finish_time_ns(e) for e in self._active))))
            return min(times) if times else None

    def advance_to(self, t_ns: int) -> None:
        """Advance the virtual clock, materializing due completions."""
        with self._lock:
            while True:
                nxt = None
                lat_t = min((t for t, _ in self._latency), default=None)
                act_t = None
                if self._active:
                    act_t = max(self.now_ns, math.ceil(min(self._finish_time_ns(e) for e in self._active)))
                for cand in (lat_t, act_t):
                    if cand is not None and (nxt is None or cand < nxt):
                        nxt = cand
                if nxt is None or nxt > t_ns:
                    break
                self._step_to(nxt)
            if t_ns > self.now_ns:
                self._advance_active(t_ns)
                self.now_ns = t_ns

    def _step_to(self, t_ns: int) -> None:
        self._advance_active(t_ns)
        self.now_ns = max(self.now_ns, t_ns)
        # latency stage expiries join the active set
        due = [e for (te, e) in self._latency if te <= t_ns]
        self._latency = [(te, e) for (te, e) in self._latency if te > t_ns]
        for entry in due:
            self._active.append(entry)
        # completions (remaining drained within float epsilon)
        done = [e for e in self._active if e.remaining <= 1e-3]
        if done:
            self._active = [e for e in self._active if e not in done]
            done.sort(key=lambda e: e.rid)
            for entry in done:
                self._finished.append(CompletionRecord(entry.rid, entry.total, self.now_ns))
            while self._waiting and len(self._latency) + len(self._active) < self.model.max_depth:
                _, entry = self._waiting.pop(0)
                self._admit(entry)

    # -- reaping -------------------------------------------------------

    def poll_completions(self, max_records: int) -> list[CompletionRecord]:
        with self._lock:
            out = self._finished[:max_records]
            del self._finished[: len(out)]
            self._outstanding -= len(out)
            return out

    def take_completion(self, request_id: int) -> Optional[CompletionRecord]:
        """Reap one specific finished request (used by synchronous waiters)."""
        with self._lock:
            for i, rec in enumerate(self._finished):
                if rec.request_id == request_id:
                    del self._finished[i]
                    self._outstanding -= 1
                    return rec
            return None

    def wait_completions(self, min_records: int, timeout_s: float) -> tuple[list[CompletionRecord], bool]:
        deadline_ns = self.now_ns + int(timeout_s * SEC_NS)
        with self._lock:
            while len(self._finished) < min_records:
                nxt = self.next_event_ns()
                if nxt is None or nxt > deadline_ns:
                    self.advance_to(deadline_ns)
                    return self.poll_completions(len(self._finished)), True
                self.advance_to(nxt)
            return self.poll_completions(len(self._finished)), False


class PoolContext(IoContextBase):
    """Delegates positional file I/O to a pool of worker threads."""

    backend = "pool"

    def __init__(self, capacity: int, workers: int = 4, strict_metadata: bool = False):
        super().__init__(capacity)
        self._pool = ThreadPoolExecutor(max_workers=workers, thread_name_prefix="iopool")
        self._strict_metadata = strict_metadata
        self._cond = threading.Condition(self._lock)
        self._finished: list[CompletionRecord] = []

    @staticmethod
    def _fd(file: object) -> int:
        if isinstance(file, int):
            return file
        if hasattr(file, "fileno"):
            return file.fileno()
        raise InvalidRequestError(f"not a file handle: {file!r}")

    def submit(self, req: IoRequest):
        req.validate()
        fd = self._fd(req.file)
        if req.total_length == 0:
            return Completed(0)
        with self._lock:
            if self._outstanding >= self.capacity:
                return QUEUE_FULL
            self._outstanding += 1
            rid = next(self._ids)
        if (
            self._strict_metadata
            and req.kind == "write"
            and req.offset + req.total_length > os.fstat(fd).st_size
        ):
            # Writes that would extend the file change its metadata, which
            # some filesystems refuse to do asynchronously; do them inline.
            self._run(rid, fd, req)
        else:
            self._pool.submit(self._run, rid, fd, req)
        return InFlight(rid)

    def _run(self, rid: int, fd: int, req: IoRequest) -> None:
        total = 0
        error: Optional[Exception] = None
        try:
            offset = req.offset
            for buf, length in req.segments:
                if req.kind == "read":
                    data = os.pread(fd, length, offset)
                    mv = memoryview(buf)
                    mv[: len(data)] = data
                    total += len(data)
                    if len(data) < length:  # short read at EOF
                        break
                else:
                    total += os.pwrite(fd, bytes(memoryview(buf)[:length]), offset)
                offset += length
        except OSError as exc:
            error = exc
        rec = CompletionRecord(rid, total, time.monotonic_ns(), error)
        with self._cond:
            self._finished.append(rec)
            self._cond.notify_all()

    def poll_completions(self, max_records: int) -> list[CompletionRecord]:
        with self._lock:
            out = self._finished[:max_records]
            del self._finished[: len(out)]
            self._outstanding -= len(out)
            return out

    def take_completion(self, request_id: int) -> Optional[CompletionRecord]:
        with self._lock:
            for i, rec in enumerate(self._finished):
                if rec.request_id == request_id:
                    del self._finished[i]
                    self._outstanding -= 1
                    return rec
            return None

    def wait_completions(self, min_records: int, timeout_s: float) -> tuple[list[CompletionRecord], bool]:
        deadline = time.monotonic() + timeout_s
        with self._cond:
            while len(self._finished) < min_records:
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    return self.poll_completions(len(self._finished)), True
                self._cond.wait(remaining)
            return self.poll_completions(len(self._finished)), False

    def wait_for(self, request_id: int, timeout_s: float = 60.0) -> CompletionRecord:
        """Block until one specific request finishes."""
        deadline = time.monotonic() + timeout_s
        with self._cond:
            while True:
                rec = self.take_completion(request_id)
                if rec is not None:
                    return rec
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    raise IoError(f"timed out waiting for request {request_id}")
                self._cond.wait(remaining)

    def shutdown(self) -> None:
        self._pool.shutdown(wait=True)


def context_create(
    capacity: int,
    backend: str,
    model: Optional[DeviceModel] = None,
    pool_workers: int = 4,
    strict_metadata: bool = False,
) -> IoContextBase:
    if backend == "simulated":
        if model is None:
            raise ValueError("simulated backend requires a DeviceModel")
        return SimulatedContext(capacity, model)
    if backend == "pool":
        return PoolContext(capacity, workers=pool_workers, strict_metadata=strict_metadata)
    raise ValueError(f"unknown backend {backend!r}")


def simulated_completion_time(model: DeviceModel, req: IoRequest, depth_at_submit: int) -> float:
    """Analytic completion-time estimate in seconds.

    Assumes the request shares the device with ``depth_at_submit`` active
    requests for its whole service (the event-driven context is exact; this
    is the closed form used by callers that only need an estimate).
    """
    active = max(1, min(depth_at_submit, model.max_depth))
    total = req.total_length
    latency = model.base_latency_us / 1e6
    if total == 0:
        return latency
    share = model.class_bw_bytes_s(req.kind, total) / active
    return latency + total / share


def device_profile(
    ctx: IoContextBase,
    block_sizes: Sequence[int],
    depths: Sequence[int],
    duration_s: float,
    pattern: str = "rand",
    kind: str = "read",
    file: object = None,
    file_size: int = 1 << 30,
    seed: int = 0,
) -> dict[tuple[int, int], float]:
    """Sustained throughput (MiB/s) per (block_size, depth) cell.

    Each cell keeps ``depth`` requests in flight for ``duration_s`` by
    resubmitting as completions are reaped (the fio-style measurement loop).
    """
    import random as _random

    if pattern not in ("seq", "rand"):
        raise ValueError(f"unknown pattern {pattern!r}")
    results: dict[tuple[int, int], float] = {}
    for block in block_sizes:
        for depth in depths:
            if depth < 1:
                raise ValueError("depth must be >= 1")
            if depth > ctx.capacity:
                raise ValueError("depth exceeds context capacity")
            rng = _random.Random(seed)
            nblocks = max(1, file_size // block)

            def next_offset(i=[0]):
                if pattern == "seq":
                    off = (i[0] % nblocks) * block
                    i[0] += 1
                else:
                    off = rng.randrange(nblocks) * block
                return off

            def new_request():
                buf = bytearray(block)
                return make_request(kind, file, next_offset(), buf, block)

            if isinstance(ctx, SimulatedContext):
                results[(block, depth)] = _profile_simulated(ctx, new_request, depth, duration_s)
            else:
                results[(block, depth)] = _profile_pool(ctx, new_request, depth, duration_s)
    return results


def _profile_simulated(ctx: SimulatedContext, new_request, depth: int, duration_s: float) -> float:
    t0 = ctx.now_ns
    window_ns = int(duration_s * SEC_NS)
    inflight = 0
    for _ in range(depth):
        res = ctx.submit(new_request())
        assert isinstance(res, InFlight)
        inflight += 1
    done_bytes = 0
    t_last = t0
    while ctx.now_ns - t0 < window_ns:
        nxt = ctx.next_event_ns()
        if nxt is None:
            break
        ctx.advance_to(nxt)
        for rec in ctx.poll_completions(inflight):
            inflight -= 1
            if ctx.now_ns - t0 <= window_ns:
                done_bytes += rec.bytes_transferred
                t_last = rec.completion_time_ns
        while inflight < depth and ctx.now_ns - t0 < window_ns:
            res = ctx.submit(new_request())
            assert isinstance(res, InFlight)
            inflight += 1
    # drain leftovers so the context is clean for the next cell
    while inflight > 0:
        nxt = ctx.next_event_ns()
        if nxt is None:
            break
        ctx.advance_to(nxt)
        inflight -= len(ctx.poll_completions(inflight))
    elapsed = (t_last - t0) / SEC_NS
    return (done_bytes / (1024 * 1024)) / elapsed if elapsed > 0 else 0.0


def _profile_pool(ctx: IoContextBase, new_request, depth: int, duration_s: float) -> float:
    t0 = time.monotonic()
    inflight = 0
    for _ in range(depth):
        res = ctx.submit(new_request())
        assert isinstance(res, InFlight)
        inflight += 1
    done_bytes = 0
    t_last = t0
    while time.monotonic() - t0 < duration_s:
        recs, _ = ctx.wait_completions(1, 1.0)
        for rec in recs:
            inflight -= 1
            done_bytes += rec.bytes_transferred
            t_last = time.monotonic()
        while inflight < depth and time.monotonic() - t0 < duration_s:
            res = ctx.submit(new_request())
            if res is QUEUE_FULL:
                break
            inflight += 1
    while inflight > 0:
        recs, timed_out = ctx.wait_completions(1, 5.0)
        inflight -= len(recs)
        if timed_out and not recs:
            break
    elapsed = t_last - t0
    return (done_bytes / (1024 * 1024)) / elapsed if elapsed > 0 else 0.0
