"""Task I/O meter benchmark.

Interleaves busy-wait computation and block I/O wrapped in tasks.  Four
graph shapes are supported, each built from independent "task series"
(dependency chains that can run in parallel with one another):

* ``mix``   -- every task computes, then performs one block of I/O;
* ``1to1``  -- compute and I/O split into separate, alternating tasks;
* ``fjio``  -- each compute task depends on four I/O tasks, each I/O task
  on a single compute task (fork-join over I/O);
* ``fjc``   -- the converse: each I/O task depends on four compute tasks.

The same graph can be driven through three I/O call styles: synchronous
calls inline in the task body (``standalone``), blocking pause/resume
wrappers (``bq``), or non-blocking event-counter calls (``nb``).
"""

from __future__ import annotations

import os
import random
from dataclasses import dataclass, field
from typing import Optional

from .device import DeviceModel
from .iocontext import (
    QUEUE_FULL,
    Completed,
    InFlight,
    IoContextBase,
    PoolContext,
    make_request,
    context_create,
)
from .runtime import Runtime, MS_NS, SEC_NS
from .tasio import TasioConfig, TasioLayer

MODES = ("mix", "1to1", "fjio", "fjc")
APIS = ("standalone", "bq", "nb")
PATTERNS = ("seq_read", "seq_write", "rand_read", "rand_write")

_PATTERN_ALIASES = {
    "sr": "seq_read",
    "sw": "seq_write",
    "rr": "rand_read",
    "rw": "rand_write",
}

#: Per-series parallel width used to derive the series count from the
#: parallel-task cap: chains are width 1, the fork-join fan stages width 4.
MODE_WIDTH = {"mix": 1, "1to1": 1, "fjio": 4, "fjc": 4}


class TiomConfigError(ValueError):
    pass


def canonical_pattern(pattern: str) -> str:
    pattern = _PATTERN_ALIASES.get(pattern, pattern)
    if pattern not in PATTERNS:
        raise TiomConfigError(f"unknown pattern {pattern!r}")
    return pattern


@dataclass
class TiomConfig:
    mode: str = "mix"
    block_size: int = 64 * 1024
    compute_ms: float = 1.0
    pattern: str = "rand_read"
    max_parallel: int = 128
    file_size: int = 256 * 1024 * 1024
    api: str = "standalone"
    time_limit_s: Optional[float] = None
    seed: int = 0
    workers: int = 4
    clock_mode: str = "virtual"
    backend: str = "simulated"
    model: Optional[DeviceModel] = None
    file_path: Optional[str] = None
    pool_workers: int = 4
    poll_period_us: float = 100.0
    max_in_flight: int = 1000

    def __post_init__(self):
        if self.mode not in MODES:
            raise TiomConfigError(f"unknown mode {self.mode!r}")
        if self.api not in APIS:
            raise TiomConfigError(f"unknown api {self.api!r}")
        self.pattern = canonical_pattern(self.pattern)
        if self.block_size <= 0 or self.file_size % self.block_size:
            raise TiomConfigError("block_size must divide file_size")
        if self.compute_ms < 0:
            raise TiomConfigError("compute_time must be >= 0")
        if self.max_parallel < 1:
            raise TiomConfigError("max_parallel must be >= 1")
        if self.backend == "simulated" and self.model is None:
            self.model = DeviceModel.optane_905p()

    @property
    def nblocks(self) -> int:
        return self.file_size // self.block_size

    @property
    def io_kind(self) -> str:
        return "read" if self.pattern.endswith("read") else "write"

    @property
    def compute_ns(self) -> int:
        return int(self.compute_ms * MS_NS)


@dataclass(frozen=True)
class TaskSpec:
    idx: int
    series: int
    kind: str  # "mix" | "compute" | "io"
    compute_ns: int
    io: Optional[tuple[int, int, str]]  # (offset, length, "read"|"write")
    deps: tuple[int, ...]


@dataclass
class GraphSpec:
    config: TiomConfig
    tasks: list[TaskSpec]
    series_count: int

    @property
    def io_tasks(self) -> list[TaskSpec]:
        return [t for t in self.tasks if t.io is not None]

    @property
    def edges(self) -> list[tuple[int, int]]:
        return [(d, t.idx) for t in self.tasks for d in t.deps]

    def total_compute_ns(self) -> int:
        return sum(t.compute_ns for t in self.tasks)

    def total_io_bytes(self) -> int:
        return sum(t.io[1] for t in self.tasks if t.io is not None)


def resolve_series(config: TiomConfig) -> int:
    """Series count: the parallel-task cap divided by the per-series width,
    reduced until the block count splits evenly over the series (and, for
    fjio, into whole fan-in-4 stages)."""
    width = MODE_WIDTH[config.mode]
    nblocks = config.nblocks
    series = max(1, config.max_parallel // width)
    series = min(series, nblocks)

    def fits(s: int) -> bool:
        if nblocks % s:
            return False
        if config.mode == "fjio" and (nblocks // s) % 4:
            return False
        return True

    while series > 1 and not fits(series):
        series -= 1
    if not fits(series):
        raise TiomConfigError(
            f"{config.nblocks} blocks cannot be arranged into {config.mode} series"
        )
    return series


def io_offsets(config: TiomConfig, series_count: int) -> list[list[tuple[int, int]]]:
    """(offset, length) per I/O slot, per series.

    Each series owns a contiguous partition of the file; sequential
    patterns walk it in order, random patterns use a seeded permutation.
    Offsets form an exact partition of [0, file_size): every block is
    touched exactly once and write series never overlap.
    """
    block = config.block_size
    per_series = config.nblocks // series_count
    rng = random.Random(config.seed)
    out = []
    for s in range(series_count):
        base = s * per_series
        blocks = list(range(base, base + per_series))
        if config.pattern.startswith("rand"):
            rng.shuffle(blocks)
        out.append([(b * block, block) for b in blocks])
    return out


def build_task_graph(config: TiomConfig) -> GraphSpec:
    series_count = resolve_series(config)
    offsets = io_offsets(config, series_count)
    kind = config.io_kind
    c_ns = config.compute_ns
    tasks: list[TaskSpec] = []

    def add(series, tkind, compute_ns, io, deps) -> int:
        idx = len(tasks)
        tasks.append(TaskSpec(idx, series, tkind, compute_ns, io, tuple(deps)))
        return idx

    for s in range(series_count):
        blocks = offsets[s]
        if config.mode == "mix":
            prev = None
            for off, length in blocks:
                prev = add(s, "mix", c_ns, (off, length, kind), [prev] if prev is not None else [])
        elif config.mode == "1to1":
            prev = None
            for off, length in blocks:
                c = add(s, "compute", c_ns, None, [prev] if prev is not None else [])
                prev = add(s, "io", 0, (off, length, kind), [c])
        elif config.mode == "fjio":
            prev_compute = None
            for stage in range(len(blocks) // 4):
                ios = []
                for off, length in blocks[stage * 4 : stage * 4 + 4]:
                    deps = [prev_compute] if prev_compute is not None else []
                    ios.append(add(s, "io", 0, (off, length, kind), deps))
                # one compute task carries the four tasks' worth of busy-wait,
                # preserving the aggregate compute:I/O ratio of mix
                prev_compute = add(s, "compute", 4 * c_ns, None, ios)
        else:  # fjc
            prev_io = None
            for off, length in blocks:
                comps = []
                for _ in range(4):
                    deps = [prev_io] if prev_io is not None else []
                    comps.append(add(s, "compute", c_ns, None, deps))
                prev_io = add(s, "io", 0, (off, length, kind), comps)

    return GraphSpec(config, tasks, series_count)


@dataclass
class BenchResult:
    elapsed_s: float
    bytes_processed: int
    bandwidth_mib_s: float
    tasks_executed: int
    completed_fully: bool
    call_bytes: dict[int, int] = field(default_factory=dict)  # io task idx -> bytes


def block_content(seed: int, offset: int, length: int) -> bytes:
    """Seeded pseudo-random fill so content checks are meaningful."""
    return random.Random((seed << 34) ^ offset).randbytes(length)


def preallocate_file(path: str, size: int) -> None:
    """Create and pre-touch the benchmark file so writes during the timed
    run never extend it (metadata stays fixed)."""
    chunk = b"\0" * (1 << 20)
    with open(path, "wb") as fh:
        remaining = size
        while remaining > 0:
            n = min(remaining, len(chunk))
            fh.write(chunk[:n])
            remaining -= n
        fh.flush()
        os.fsync(fh.fileno())


class _BenchDriver:
    def __init__(self, config: TiomConfig, graph: GraphSpec, runtime: Runtime):
        self.config = config
        self.graph = graph
        self.rt = runtime
        self.call_bytes: dict[int, int] = {}
        self.fd: Optional[int] = None
        self.layer: Optional[TasioLayer] = None
        self.ctx: Optional[IoContextBase] = None
        self._task_to_io: dict[int, int] = {}
        self._zero_buf = bytearray(config.block_size)

        if config.backend == "pool":
            if config.file_path is None:
                raise TiomConfigError("pool backend requires a file path")
            if not os.path.exists(config.file_path) or os.path.getsize(config.file_path) < config.file_size:
                preallocate_file(config.file_path, config.file_size)
            self.fd = os.open(config.file_path, os.O_RDWR)

        if config.api in ("bq", "nb"):
            self.layer = TasioLayer(
                runtime,
                TasioConfig(
                    max_in_flight=config.max_in_flight,
                    backend=config.backend,
                    model=config.model,
                    pool_workers=config.pool_workers,
                ),
            )
            self.ctx = self.layer.ctx
        else:
            self.ctx = context_create(
                config.max_in_flight,
                config.backend,
                model=config.model,
                pool_workers=config.pool_workers,
            )
            runtime.attach_io_context(self.ctx)

    def close(self) -> None:
        if self.layer is not None:
            self.layer.shutdown()
        elif isinstance(self.ctx, PoolContext):
            self.ctx.shutdown()
        if self.fd is not None:
            os.close(self.fd)

    def _buffer_for(self, ts: TaskSpec) -> bytearray | bytes:
        off, length, kind = ts.io
        if kind == "read":
            return bytearray(length)
        if self.config.backend == "pool":
            return block_content(self.config.seed, off, length)
        return self._zero_buf  # simulated device moves no data

    def make_body(self, ts: TaskSpec):
        rt = self.rt
        config = self.config

        def body():
            if ts.compute_ns:
                rt.busy_wait(ts.compute_ns)
            if ts.io is None:
                return
            off, length, kind = ts.io
            buf = self._buffer_for(ts)
            if config.api == "standalone":
                n = self._sync_io(kind, off, buf, length)
                self.call_bytes[ts.idx] = n
            elif config.api == "bq":
                if kind == "read":
                    n = self.layer.pread_blocking(self.fd, buf, length, off)
                else:
                    n = self.layer.pwrite_blocking(self.fd, buf, length, off)
                self.call_bytes[ts.idx] = n
            else:  # nb: completion bytes recorded by the polling layer
                self._task_to_io[rt.current_task()] = ts.idx
                if kind == "read":
                    self.layer.pread(self.fd, buf, length, off)
                else:
                    self.layer.pwrite(self.fd, buf, length, off)

        return body

    def _sync_io(self, kind: str, off: int, buf, length: int) -> int:
        req = make_request(kind, self.fd, off, buf, length)
        while True:
            res = self.ctx.submit(req)
            if isinstance(res, InFlight):
                rec = self.rt.block_on_request(self.ctx, res.request_id)
                if rec.error is not None:
                    raise rec.error
                return rec.bytes_transferred
            if isinstance(res, Completed):
                return res.bytes_transferred
            assert res is QUEUE_FULL
            self.rt.task_sleep(MS_NS)

    def collect_nb_bytes(self) -> None:
        if self.layer is None:
            return
        for op in self.layer.completed_ops:
            if op.mode != "nonblocking":
                continue
            idx = self._task_to_io.get(op.task)
            if idx is not None:
                if op.error is not None:
                    raise op.error
                self.call_bytes[idx] = op.bytes_transferred


def run_benchmark(config: TiomConfig, runtime: Optional[Runtime] = None) -> BenchResult:
    graph = build_task_graph(config)
    rt = runtime or Runtime(
        workers=config.workers,
        clock_mode=config.clock_mode,
        poll_period_us=config.poll_period_us,
    )
    driver = _BenchDriver(config, graph, rt)
    try:
        resources = [rt.register_resource() for _ in graph.tasks]
        for ts in graph.tasks:
            rt.spawn_task(
                driver.make_body(ts),
                reads=[resources[d] for d in ts.deps],
                writes=[resources[ts.idx]],
            )
        stats = rt.run_to_completion(config.time_limit_s)
        driver.collect_nb_bytes()
    finally:
        driver.close()

    bytes_processed = sum(driver.call_bytes.values())
    elapsed_s = stats.elapsed_s
    bandwidth = (bytes_processed / (1024 * 1024)) / elapsed_s if elapsed_s > 0 else 0.0
    return BenchResult(
        elapsed_s=elapsed_s,
        bytes_processed=bytes_processed,
        bandwidth_mib_s=bandwidth,
        tasks_executed=stats.tasks_executed,
        completed_fully=stats.completed_all and bytes_processed == config.file_size,
        call_bytes=driver.call_bytes,
    )


CSV_HEADER = "mode,api,pattern,block_kib,compute_ms,max_parallel,rep,elapsed_s,bytes,bandwidth_mibs,completed"


def result_row(config: TiomConfig, rep: int, result: BenchResult) -> str:
    return ",".join(
        str(v)
        for v in (
            config.mode,
            config.api,
            config.pattern,
            config.block_size // 1024,
            config.compute_ms,
            config.max_parallel,
            rep,
            f"{result.elapsed_s:.6f}",
            result.bytes_processed,
            f"{result.bandwidth_mib_s:.3f}",
            int(result.completed_fully),
        )
    )
