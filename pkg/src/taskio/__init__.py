"""Task runtime with dependency scheduling and asynchronous storage I/O.

The package bundles four layers:

- :mod:`taskio.runtime` -- a task runtime with data-dependency
  scheduling, pause/resume, external event counters, polling services,
  and a deterministic virtual clock.
- :mod:`taskio.iocontext` / :mod:`taskio.device` -- I/O contexts over a
  simulated shared-rate device or a thread-pool file backend.
- :mod:`taskio.tasio` -- task-aware blocking and non-blocking I/O
  wrappers that overlap storage operations with computation.
- :mod:`taskio.tiom` / :mod:`taskio.sweep` / :mod:`taskio.oracle` -- the
  I/O-mix benchmark, parameter-sweep harness, and the independent
  discrete-event makespan oracle.
"""

from __future__ import annotations

from .device import DeviceModel, DeviceModelError
from .iocontext import (
    Completed,
    CompletionRecord,
    InFlight,
    IoRequest,
    PoolContext,
    QUEUE_FULL,
    SimulatedContext,
    context_create,
    device_profile,
    make_request,
    simulated_completion_time,
)
from .oracle import OracleError, oracle_makespan
from .runtime import (
    DependencyCycleError,
    ResumeHandle,
    RunStats,
    Runtime,
    TaskBodyError,
    TaskRuntimeError,
    TaskState,
)
from .sweep import (
    SpeedupCell,
    SpeedupGrid,
    SweepGrid,
    bandwidth_surface,
    compute_speedup,
    emit_plot_data,
    render_heatmap,
    run_sweep,
)
from .tasio import (
    OpRecord,
    TasioConfig,
    TasioLayer,
    ta_pread,
    ta_pread_blocking,
    ta_pwrite,
    ta_pwrite_blocking,
    tasio_init,
    tasio_shutdown,
)
from .tiom import (
    BenchResult,
    GraphSpec,
    TaskSpec,
    TiomConfig,
    build_task_graph,
    run_benchmark,
)

__version__ = "0.1.0"

__all__ = [
    "BenchResult",
    "Completed",
    "CompletionRecord",
    "DependencyCycleError",
    "DeviceModel",
    "DeviceModelError",
    "GraphSpec",
    "InFlight",
    "IoRequest",
    "OpRecord",
    "OracleError",
    "PoolContext",
    "QUEUE_FULL",
    "ResumeHandle",
    "RunStats",
    "Runtime",
    "SimulatedContext",
    "SpeedupCell",
    "SpeedupGrid",
    "SweepGrid",
    "TaskBodyError",
    "TaskRuntimeError",
    "TaskSpec",
    "TaskState",
    "TasioConfig",
    "TasioLayer",
    "TiomConfig",
    "bandwidth_surface",
    "build_task_graph",
    "compute_speedup",
    "context_create",
    "device_profile",
    "emit_plot_data",
    "make_request",
    "oracle_makespan",
    "render_heatmap",
    "run_benchmark",
    "run_sweep",
    "simulated_completion_time",
    "ta_pread",
    "ta_pread_blocking",
    "ta_pwrite",
    "ta_pwrite_blocking",
    "tasio_init",
    "tasio_shutdown",
]
