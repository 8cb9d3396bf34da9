"""Parameter-sweep harness, speedup grids, and plot-data emission.

A sweep runs every cell of a (compute time x block size x pattern x mode
x api x parallelism) grid through the benchmark, appending one CSV row
per repetition.  Speedup grids compare two apis cell by cell using the
per-cell median, and the plot writers emit both a gnuplot-compatible
whitespace matrix and a CSV twin, plus an optional PNG heatmap.
"""

from __future__ import annotations

import csv
import statistics
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterator, Optional, Sequence

from .device import DeviceModel
from .tiom import CSV_HEADER, TiomConfig, result_row, run_benchmark

KIB = 1024
MIB = 1024 * 1024


class SweepError(Exception):
    pass


@dataclass
class SweepGrid:
    """Axes of a benchmark sweep. Sizes are KiB / ms to match the CSV."""

    compute_times_ms: Sequence[float] = (1.0, 4.0, 16.0, 64.0)
    block_sizes_kib: Sequence[int] = (4, 64, 1024, 8192)
    patterns: Sequence[str] = ("rand_read",)
    modes: Sequence[str] = ("mix",)
    apis: Sequence[str] = ("standalone", "nb")
    max_parallel: Sequence[int] = (128,)
    reps: int = 4
    workers: int = 64
    clock_mode: str = "virtual"
    backend: str = "simulated"
    model: Optional[DeviceModel] = None
    seed: int = 1
    time_limit_s: Optional[float] = None
    file_size: Optional[int] = None  # bytes; default scales with block size
    blocks_per_file: int = 1024

    def __post_init__(self):
        for name in ("compute_times_ms", "block_sizes_kib", "patterns",
                     "modes", "apis", "max_parallel"):
            if not getattr(self, name):
                raise SweepError(f"empty sweep axis: {name}")
        if self.reps < 1:
            raise SweepError("reps must be >= 1")

    def cell_count(self) -> int:
        return (len(self.compute_times_ms) * len(self.block_sizes_kib)
                * len(self.patterns) * len(self.modes) * len(self.apis)
                * len(self.max_parallel))

    def configs(self) -> Iterator[TiomConfig]:
        model = self.model
        if model is None and self.backend == "simulated":
            model = DeviceModel.optane_905p()
        for mode in self.modes:
            for api in self.apis:
                for pattern in self.patterns:
                    for mp in self.max_parallel:
                        for block_kib in self.block_sizes_kib:
                            for cms in self.compute_times_ms:
                                block = block_kib * KIB
                                fsize = self.file_size or self.blocks_per_file * block
                                yield TiomConfig(
                                    mode=mode,
                                    block_size=block,
                                    compute_ms=cms,
                                    pattern=pattern,
                                    max_parallel=mp,
                                    file_size=fsize,
                                    api=api,
                                    time_limit_s=self.time_limit_s,
                                    seed=self.seed,
                                    workers=self.workers,
                                    clock_mode=self.clock_mode,
                                    backend=self.backend,
                                    model=model,
                                )


def run_sweep(grid: SweepGrid, out: Path | str, quiet: bool = True) -> int:
    """Execute every grid cell x rep, appending CSV rows; returns row count.

    A failed repetition is recorded as a row with ``completed`` set to
    ``error`` and the sweep keeps going.
    """
    out = Path(out)
    new_file = not out.exists() or out.stat().st_size == 0
    rows = 0
    with out.open("a", newline="") as fh:
        if new_file:
            fh.write(CSV_HEADER + "\n")
        for config in grid.configs():
            for rep in range(grid.reps):
                cfg = replace(config, seed=grid.seed + rep)
                try:
                    result = run_benchmark(cfg)
                    fh.write(result_row(cfg, rep, result) + "\n")
                except Exception as exc:  # keep sweeping past bad cells
                    fh.write(",".join([
                        cfg.mode, cfg.api, cfg.pattern,
                        str(cfg.block_size // KIB), f"{cfg.compute_ms:g}",
                        str(cfg.max_parallel), str(rep),
                        "", "0", "", "error",
                    ]) + "\n")
                    if not quiet:
                        print(f"sweep cell failed: {cfg.mode}/{cfg.api} "
                              f"{cfg.block_size // KIB}KiB/{cfg.compute_ms}ms: {exc}",
                              file=sys.stderr)
                fh.flush()
                rows += 1
    return rows


@dataclass(frozen=True)
class SpeedupCell:
    compute_ms: float
    block_kib: int
    speedup_percent: Optional[float]  # None when either api's rows are missing
    t_baseline: Optional[float] = None
    t_variant: Optional[float] = None

    @property
    def absent(self) -> bool:
        return self.speedup_percent is None


@dataclass
class SpeedupGrid:
    baseline_api: str
    variant_api: str
    mode: str
    pattern: str
    max_parallel: int
    cells: dict[tuple[float, int], SpeedupCell] = field(default_factory=dict)

    @property
    def compute_axis(self) -> list[float]:
        return sorted({c for c, _ in self.cells})

    @property
    def block_axis(self) -> list[int]:
        return sorted({b for _, b in self.cells})


def read_rows(path: Path | str) -> list[dict[str, str]]:
    with Path(path).open(newline="") as fh:
        return list(csv.DictReader(fh))


def _median_elapsed(rows: list[dict[str, str]]) -> Optional[float]:
    vals = [float(r["elapsed_s"]) for r in rows
            if r["completed"] in ("1", "True") and r["elapsed_s"]]
    return statistics.median(vals) if vals else None


def compute_speedup(csv_path: Path | str, baseline_api: str,
                    variant_api: str) -> list[SpeedupGrid]:
    """Per-cell median speedup grids: 100 x (t_baseline / t_variant - 1).

    One grid is produced per (mode, pattern, max_parallel) combination
    present in the CSV; cells missing either api are marked absent.
    """
    rows = read_rows(csv_path)
    by_cell: dict[tuple, dict[str, list[dict[str, str]]]] = {}
    for r in rows:
        key = (r["mode"], r["pattern"], int(r["max_parallel"]),
               float(r["compute_ms"]), int(r["block_kib"]))
        by_cell.setdefault(key, {}).setdefault(r["api"], []).append(r)

    grids: dict[tuple, SpeedupGrid] = {}
    for (mode, pattern, mp, cms, bkib), per_api in sorted(by_cell.items()):
        gkey = (mode, pattern, mp)
        grid = grids.setdefault(gkey, SpeedupGrid(
            baseline_api=baseline_api, variant_api=variant_api,
            mode=mode, pattern=pattern, max_parallel=mp))
        t_base = _median_elapsed(per_api.get(baseline_api, []))
        t_var = _median_elapsed(per_api.get(variant_api, []))
        if t_base is None or t_var is None or t_var <= 0:
            cell = SpeedupCell(cms, bkib, None)
        else:
            cell = SpeedupCell(cms, bkib, 100.0 * (t_base / t_var - 1.0),
                               t_base, t_var)
        grid.cells[(cms, bkib)] = cell
    return list(grids.values())


def bandwidth_surface(csv_path: Path | str, api: str, mode: str,
                      pattern: str) -> dict[tuple[float, int], float]:
    """Median bandwidth (MiB/s) per (compute_ms, block_kib) cell."""
    surface: dict[tuple[float, int], list[float]] = {}
    for r in read_rows(csv_path):
        if (r["api"], r["mode"], r["pattern"]) != (api, mode, pattern):
            continue
        if r["completed"] not in ("1", "True") or not r["bandwidth_mibs"]:
            continue
        key = (float(r["compute_ms"]), int(r["block_kib"]))
        surface.setdefault(key, []).append(float(r["bandwidth_mibs"]))
    return {k: statistics.median(v) for k, v in surface.items()}


def emit_plot_data(cells: dict[tuple[float, int], Optional[float]],
                   out: Path | str) -> None:
    """Write gnuplot splot data (x=compute ms, y=block KiB, z=value).

    Scan rows share an x value and are separated by blank lines; absent
    cells emit ``nan``.  A CSV twin with the same triples is written next
    to the matrix with a ``.csv`` suffix.  Output is deterministic for a
    given input.
    """
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    xs = sorted({c for c, _ in cells})
    ys = sorted({b for _, b in cells})
    with out.open("w") as fh:
        for i, x in enumerate(xs):
            if i:
                fh.write("\n")
            for y in ys:
                z = cells.get((x, y))
                fh.write(f"{x:g} {y} {'nan' if z is None else format(z, '.6g')}\n")
    with out.with_suffix(out.suffix + ".csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["compute_ms", "block_kib", "value"])
        for x in xs:
            for y in ys:
                z = cells.get((x, y))
                writer.writerow([f"{x:g}", y, "" if z is None else f"{z:.6g}"])


def render_heatmap(cells: dict[tuple[float, int], Optional[float]],
                   out: Path | str, title: str = "",
                   value_label: str = "speedup (%)") -> None:
    """Render the cell grid as a PNG heatmap alongside the plot data."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    import numpy as np

    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    xs = sorted({c for c, _ in cells})
    ys = sorted({b for _, b in cells})
    grid = np.full((len(ys), len(xs)), np.nan)
    for (x, y), z in cells.items():
        if z is not None:
            grid[ys.index(y), xs.index(x)] = z

    fig, ax = plt.subplots(figsize=(1.2 + 0.9 * len(xs), 1.0 + 0.7 * len(ys)))
    limit = max(1.0, float(np.nanmax(np.abs(grid))) if not np.isnan(grid).all() else 1.0)
    im = ax.imshow(grid, origin="lower", aspect="auto", cmap="RdYlGn",
                   vmin=-limit, vmax=limit)
    ax.set_xticks(range(len(xs)), [f"{x:g}" for x in xs])
    ax.set_yticks(range(len(ys)), [str(y) for y in ys])
    ax.set_xlabel("compute time (ms)")
    ax.set_ylabel("block size (KiB)")
    if title:
        ax.set_title(title)
    for (x, y), z in cells.items():
        if z is not None:
            ax.text(xs.index(x), ys.index(y), f"{z:.0f}",
                    ha="center", va="center", fontsize=8)
    fig.colorbar(im, ax=ax, label=value_label)
    fig.tight_layout()
    fig.savefig(out, dpi=120)
    plt.close(fig)
