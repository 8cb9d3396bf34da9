"""Independent discrete-event makespan predictor.

Re-simulates a benchmark task graph from first principles, separate from
the task runtime: agents pick ready tasks FIFO (ties by spawn id), the
device is a shared-rate server admitting up to ``max_depth`` requests at
the model's aggregate bandwidth.  Synchronous I/O occupies the agent for
the device duration; blocking/non-blocking wrapped I/O occupies only the
device and frees the agent, with dependents gated on the completion.

Used as the verification baseline for the runtime's virtual-clock
elapsed times; it shares nothing with the runtime's scheduler or the
I/O contexts beyond the device-model parameters.
"""

from __future__ import annotations

import heapq
import itertools
from typing import Optional

from .device import DeviceModel
from .tiom import GraphSpec


class OracleError(Exception):
    pass


class _Req:
    __slots__ = ("task_idx", "kind", "total", "remaining", "hold_agent")

    def __init__(self, task_idx: int, kind: str, total: int, hold_agent: bool):
        self.task_idx = task_idx
        self.kind = kind
        self.total = total
        self.remaining = float(total)
        self.hold_agent = hold_agent


class _Device:
    """Processor-sharing storage device over a float-seconds clock."""

    def __init__(self, model: DeviceModel):
        self.model = model
        self.active: list[_Req] = []
        self.waiting: list[_Req] = []
        self.latency_s = model.base_latency_us / 1e6
        self.entering: list[tuple[float, _Req]] = []  # latency stage
        self.last_t = 0.0

    def submit(self, req: _Req, now: float) -> None:
        self._drain(now)
        if len(self.active) + len(self.entering) < self.model.max_depth:
            self._admit(req, now)
        else:
            self.waiting.append(req)

    def _admit(self, req: _Req, now: float) -> None:
        if self.latency_s > 0:
            self.entering.append((now + self.latency_s, req))
        else:
            self.active.append(req)

    def _rate(self, req: _Req) -> float:
        bw = self.model.class_bw_bytes_s(req.kind, req.total)
        return bw / len(self.active)

    def _drain(self, now: float) -> None:
        dt = now - self.last_t
        if dt > 0 and self.active:
            for req in self.active:
                req.remaining -= self._rate(req) * dt
        self.last_t = now

    def next_event(self) -> Optional[float]:
        times = [t for t, _ in self.entering]
        if self.active:
            times.append(self.last_t + min(r.remaining / self._rate(r) for r in self.active))
        return min(times) if times else None

    def pop_completed(self, now: float) -> list[_Req]:
        self._drain(now)
        due = [r for (t, r) in self.entering if t <= now + 1e-15]
        if due:
            self.entering = [(t, r) for (t, r) in self.entering if t > now + 1e-15]
            self.active.extend(due)
        eps = 1e-9 * max((r.total for r in self.active), default=1)
        done = [r for r in self.active if r.remaining <= eps]
        if done:
            self.active = [r for r in self.active if r not in done]
            done.sort(key=lambda r: r.task_idx)
            while self.waiting and len(self.active) + len(self.entering) < self.model.max_depth:
                self._admit(self.waiting.pop(0), now)
        return done


def oracle_makespan(graph: GraphSpec, workers: int, model: DeviceModel, api: str) -> float:
    """Predicted makespan in seconds for running the graph."""
    if api not in ("standalone", "bq", "nb"):
        raise OracleError(f"unknown api {api!r}")
    tasks = graph.tasks
    n = len(tasks)
    indeg = [len(t.deps) for t in tasks]
    dependents: list[list[int]] = [[] for _ in range(n)]
    for t in tasks:
        for d in t.deps:
            dependents[d].append(t.idx)

    # cycle guard (graphs are builder-generated, but the oracle stands alone)
    seen = sum(1 for d in indeg if d == 0)
    deg = list(indeg)
    frontier = [i for i, d in enumerate(deg) if d == 0]
    while frontier:
        i = frontier.pop()
        for j in dependents[i]:
            deg[j] -= 1
            if deg[j] == 0:
                seen += 1
                frontier.append(j)
    if seen != n:
        raise OracleError("cyclic task graph")

    device = _Device(model)
    ready: list[tuple[float, int]] = [(0.0, i) for i, d in enumerate(indeg) if d == 0]
    heapq.heapify(ready)
    events: list[tuple[float, int, str, int]] = []  # (time, seq, kind, task_idx)
    seq = itertools.count()
    free = workers
    t = 0.0
    remaining_tasks = n
    makespan = 0.0

    def complete(idx: int, now: float) -> None:
        nonlocal remaining_tasks, makespan
        remaining_tasks -= 1
        makespan = max(makespan, now)
        for j in sorted(dependents[idx]):
            indeg[j] -= 1
            if indeg[j] == 0:
                heapq.heappush(ready, (now, j))

    while remaining_tasks > 0:
        # dispatch ready tasks onto free agents
        while ready and free > 0 and ready[0][0] <= t + 1e-15:
            _, idx = heapq.heappop(ready)
            free -= 1
            heapq.heappush(events, (t + tasks[idx].compute_ns / 1e9, next(seq), "body_end", idx))

        cand = []
        if events:
            cand.append(events[0][0])
        dn = device.next_event()
        if dn is not None:
            cand.append(dn)
        if ready and free > 0:
            cand.append(ready[0][0])
        if not cand:
            raise OracleError("oracle stalled: no events with tasks remaining")
        t = max(t, min(cand))

        for req in device.pop_completed(t):
            if req.hold_agent:
                free += 1
            complete(req.task_idx, t)

        while events and events[0][0] <= t + 1e-15:
            _, _, kind, idx = heapq.heappop(events)
            ts = tasks[idx]
            if ts.io is None:
                free += 1
                complete(idx, t)
            else:
                _, length, io_kind = ts.io
                hold = api == "standalone"
                if not hold:
                    free += 1
                device.submit(_Req(idx, io_kind, length, hold), t)

    return makespan
