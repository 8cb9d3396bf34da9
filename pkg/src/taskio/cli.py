"""Command-line interface.

Subcommands:
    run      -- run one benchmark configuration, print CSV rows
    sweep    -- run a parameter grid, append rows to a CSV file
    speedup  -- per-cell median speedup grid from a sweep CSV
    plot     -- gnuplot matrix + CSV twin + PNG heatmap from a sweep CSV
    oracle   -- discrete-event makespan prediction for a configuration
    profile  -- sustained-throughput profile of an I/O backend
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .device import DeviceModel
from .iocontext import context_create, device_profile
from .oracle import oracle_makespan
from .sweep import (SweepGrid, bandwidth_surface, compute_speedup,
                    emit_plot_data, render_heatmap, run_sweep)
from .tiom import (APIS, CSV_HEADER, MODES, TiomConfig, build_task_graph,
                   result_row, run_benchmark)

KIB = 1024
MIB = 1024 * 1024

PATTERN_CHOICES = ("sr", "sw", "rr", "rw",
                   "seq_read", "seq_write", "rand_read", "rand_write")


def _add_common(parser: argparse.ArgumentParser, sweep_axes: bool = False) -> None:
    parser.add_argument("--mode", choices=MODES, default="mix")
    if sweep_axes:
        parser.add_argument("--block-size", default="4,64,1024,8192",
                            metavar="KIB[,KIB...]",
                            help="comma-separated block sizes in KiB")
        parser.add_argument("--compute-ms", default="1,4,16,64",
                            metavar="MS[,MS...]",
                            help="comma-separated compute times in ms")
        parser.add_argument("--file-size", type=int, default=0, metavar="MIB",
                            help="fixed file size in MiB "
                                 "(default: 1024 blocks per file)")
    else:
        parser.add_argument("--block-size", type=int, default=64, metavar="KIB",
                            help="block size in KiB (default 64)")
        parser.add_argument("--compute-ms", type=float, default=1.0)
        parser.add_argument("--file-size", type=int, default=64, metavar="MIB",
                            help="file size in MiB (default 64)")
        parser.add_argument("--api", choices=APIS, default="standalone")
    parser.add_argument("--pattern", choices=PATTERN_CHOICES, default="rr")
    parser.add_argument("--max-parallel", type=int, default=128)
    parser.add_argument("--backend", choices=("sim", "pool"), default="sim")
    parser.add_argument("--device-model", type=Path, default=None,
                        help="device model config file (sim backend)")
    parser.add_argument("--clock", choices=("real", "virtual"), default="virtual")
    parser.add_argument("--workers", type=int, default=4)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--time-limit", type=float, default=None, metavar="S")
    parser.add_argument("--reps", type=int, default=1)


def _load_model(args) -> DeviceModel:
    if args.device_model is not None:
        return DeviceModel.from_file(args.device_model)
    return DeviceModel.optane_905p()


def _config_from_args(args, seed_offset: int = 0) -> TiomConfig:
    backend = "simulated" if args.backend == "sim" else "pool"
    return TiomConfig(
        mode=args.mode,
        block_size=args.block_size * KIB,
        compute_ms=args.compute_ms,
        pattern=args.pattern,
        max_parallel=args.max_parallel,
        file_size=args.file_size * MIB,
        api=args.api,
        time_limit_s=args.time_limit,
        seed=args.seed + seed_offset,
        workers=args.workers,
        clock_mode=args.clock,
        backend=backend,
        model=_load_model(args) if backend == "simulated" else None,
        file_path=getattr(args, "file", None),
    )


def cmd_run(args) -> int:
    print(CSV_HEADER)
    for rep in range(args.reps):
        config = _config_from_args(args, seed_offset=rep)
        result = run_benchmark(config)
        print(result_row(config, rep, result))
    return 0


def _int_list(text: str) -> list[int]:
    return [int(v) for v in text.split(",") if v]


def _float_list(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v]


def cmd_sweep(args) -> int:
    grid = SweepGrid(
        compute_times_ms=_float_list(args.compute_ms),
        block_sizes_kib=_int_list(args.block_size),
        patterns=[args.pattern],
        modes=[args.mode],
        apis=args.apis.split(","),
        max_parallel=_int_list(str(args.max_parallel)),
        reps=args.reps,
        workers=args.workers,
        clock_mode=args.clock,
        backend="simulated" if args.backend == "sim" else "pool",
        model=_load_model(args) if args.backend == "sim" else None,
        seed=args.seed,
        time_limit_s=args.time_limit,
        file_size=args.file_size * MIB if args.file_size else None,
    )
    rows = run_sweep(grid, args.out, quiet=False)
    print(f"wrote {rows} rows to {args.out}")
    return 0


def cmd_speedup(args) -> int:
    grids = compute_speedup(args.csv, args.baseline, args.variant)
    if not grids:
        print("no matching rows", file=sys.stderr)
        return 1
    out = Path(args.out) if args.out else None
    for grid in grids:
        tag = f"{grid.mode}_{grid.pattern}_{grid.max_parallel}"
        print(f"# {grid.variant_api} vs {grid.baseline_api}: {tag}")
        print("compute_ms,block_kib,speedup_pct")
        for (cms, bkib), cell in sorted(grid.cells.items()):
            pct = "" if cell.absent else f"{cell.speedup_percent:.2f}"
            print(f"{cms:g},{bkib},{pct}")
        if out is not None:
            cells = {k: c.speedup_percent for k, c in grid.cells.items()}
            emit_plot_data(cells, out.with_name(f"{out.name}_{tag}.dat"))
    return 0


def cmd_plot(args) -> int:
    out = Path(args.out)
    if args.surface == "speedup":
        grids = compute_speedup(args.csv, args.baseline, args.variant)
        if not grids:
            print("no matching rows", file=sys.stderr)
            return 1
        for grid in grids:
            tag = f"{grid.variant_api}_vs_{grid.baseline_api}_{grid.mode}_{grid.pattern}_{grid.max_parallel}"
            cells = {k: c.speedup_percent for k, c in grid.cells.items()}
            dat = out.with_name(f"{out.name}_{tag}.dat")
            emit_plot_data(cells, dat)
            png = out.with_name(f"{out.name}_{tag}.png")
            render_heatmap(cells, png, title=tag.replace("_", " "))
            print(f"wrote {dat}, {dat}.csv, {png}")
    else:
        surface = bandwidth_surface(args.csv, args.api, args.mode, args.pattern)
        if not surface:
            print("no matching rows", file=sys.stderr)
            return 1
        tag = f"bw_{args.api}_{args.mode}_{args.pattern}"
        dat = out.with_name(f"{out.name}_{tag}.dat")
        emit_plot_data(surface, dat)
        png = out.with_name(f"{out.name}_{tag}.png")
        render_heatmap(surface, png, title=tag.replace("_", " "),
                       value_label="bandwidth (MiB/s)")
        print(f"wrote {dat}, {dat}.csv, {png}")
    return 0


def cmd_oracle(args) -> int:
    config = _config_from_args(args)
    graph = build_task_graph(config)
    makespan = oracle_makespan(graph, args.workers, _load_model(args), args.api)
    print(f"{makespan:.9f}")
    return 0


def cmd_profile(args) -> int:
    model = _load_model(args)
    backend = "simulated" if args.backend == "sim" else "pool"
    ctx = context_create(capacity=max(args.depths_list), backend=backend,
                         model=model if backend == "simulated" else None)
    file = None
    if backend == "pool":
        import os
        file = os.open(args.file, os.O_RDWR | os.O_CREAT)
        os.ftruncate(file, args.file_size * MIB)
    try:
        results = device_profile(
            ctx,
            block_sizes=[b * KIB for b in args.blocks_list],
            depths=args.depths_list,
            duration_s=args.duration,
            pattern="rand" if args.pattern.startswith("r") else "seq",
            kind="write" if args.pattern in ("sw", "rw") else "read",
            file=file,
            file_size=args.file_size * MIB,
            seed=args.seed,
        )
    finally:
        ctx.shutdown()
        if file is not None:
            import os
            os.close(file)
    print("block_kib,depth,bandwidth_mibs")
    for (block, depth), bw in sorted(results.items()):
        print(f"{block // KIB},{depth},{bw:.1f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="taskio",
        description="Task runtime with asynchronous storage I/O: benchmark, "
                    "sweep, and device-profiling tools.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one benchmark configuration")
    _add_common(p)
    p.add_argument("--file", help="backing file path (pool backend)")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="run a parameter grid")
    _add_common(p, sweep_axes=True)
    p.add_argument("--apis", default="standalone,nb",
                   help="comma-separated api list")
    p.add_argument("--out", required=True, help="output CSV path")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("speedup", help="median speedup grid from a sweep CSV")
    p.add_argument("--csv", required=True)
    p.add_argument("--baseline", default="standalone")
    p.add_argument("--variant", default="nb")
    p.add_argument("--out", help="also write gnuplot data with this prefix")
    p.set_defaults(func=cmd_speedup)

    p = sub.add_parser("plot", help="plot data + heatmap PNG from a sweep CSV")
    p.add_argument("--csv", required=True)
    p.add_argument("--surface", choices=("speedup", "bandwidth"),
                   default="speedup")
    p.add_argument("--baseline", default="standalone")
    p.add_argument("--variant", default="nb")
    p.add_argument("--api", default="standalone",
                   help="api for the bandwidth surface")
    p.add_argument("--mode", default="mix")
    p.add_argument("--pattern", default="rand_read")
    p.add_argument("--out", required=True, help="output path prefix")
    p.set_defaults(func=cmd_plot)

    p = sub.add_parser("oracle", help="predicted makespan for a configuration")
    _add_common(p)
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("profile", help="throughput profile of an I/O backend")
    p.add_argument("--backend", choices=("sim", "pool"), default="sim")
    p.add_argument("--device-model", type=Path, default=None)
    p.add_argument("--blocks", dest="blocks_list", type=_int_list,
                   default=[4, 64, 1024], help="block sizes in KiB")
    p.add_argument("--depths", dest="depths_list", type=_int_list,
                   default=[1, 2, 4], help="queue depths")
    p.add_argument("--pattern", choices=("sr", "sw", "rr", "rw"), default="rr")
    p.add_argument("--duration", type=float, default=0.5,
                   help="seconds per cell")
    p.add_argument("--file", help="backing file (pool backend)")
    p.add_argument("--file-size", type=int, default=256, metavar="MIB")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_profile)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
