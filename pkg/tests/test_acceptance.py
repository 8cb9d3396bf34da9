"""Acceptance suite.

Each test prints one machine-readable pass/fail line (bypassing pytest's
capture so the verdicts always appear in the run log) and then asserts.

1. device calibration echo at depths 1-4
2. runtime-vs-oracle agreement over >= 50 random configurations
3. saturation ratio on the desk grid
4. overlap benefit (oracle-verified speedup; 40% band)
5. negligible speedup in the compute-dominated region
6. in-flight cap with 1 ms retry under a 4096-op burst
7. byte-identical results across the three I/O apis on a real file
8. trace-replay properties on 200 randomized schedules
9. fan-in-4 structure of fork-join I/O graphs
"""

from __future__ import annotations

import hashlib
import random
import sys

import conftest
from schedule_props import run_random_schedule, verify_schedule
from taskio.device import DeviceModel
from taskio.iocontext import SimulatedContext, device_profile
from taskio.oracle import oracle_makespan
from taskio.runtime import MS_NS, Runtime
from taskio.tasio import TasioConfig, TasioLayer
from taskio.tiom import TiomConfig, build_task_graph, run_benchmark

KIB = 1024
MIB = 1024 * 1024


def report(num: int, name: str, ok: bool, detail: str = "") -> None:
    line = f"ACCEPTANCE {num} {name}: {'PASS' if ok else 'FAIL'}"
    if detail:
        line += f"  [{detail}]"
    print(line, file=sys.__stdout__, flush=True)
    conftest.ACCEPTANCE_LINES.append(line)
    assert ok, line


def model() -> DeviceModel:
    return DeviceModel.optane_905p()


def test_criterion_1_device_calibration():
    m = model()
    ctx_r = SimulatedContext(capacity=8, model=m)
    reads = device_profile(ctx_r, block_sizes=[MIB], depths=[1, 2, 3, 4],
                           duration_s=0.05, pattern="rand", kind="read")
    ctx_w = SimulatedContext(capacity=8, model=m)
    writes = device_profile(ctx_w, block_sizes=[4 * KIB], depths=[1, 2, 3, 4],
                            duration_s=0.05, pattern="rand", kind="write")
    cells = []
    ok = True
    for depth in (1, 2, 3, 4):
        r = reads[(MIB, depth)]
        w = writes[(4 * KIB, depth)]
        cells.append(f"d{depth}: r={r:.0f} w={w:.0f}")
        ok &= abs(r - 2548) <= 0.02 * 2548
        ok &= abs(w - 2255) <= 0.02 * 2255
    report(1, "device-calibration", ok, "; ".join(cells))


def test_criterion_2_oracle_equivalence():
    m = model()
    worst = 0.0
    checked = 0
    for seed in range(60):
        rng = random.Random(1000 + seed)
        mode = rng.choice(["mix", "1to1", "fjio", "fjc"])
        api = rng.choice(["standalone", "bq", "nb"])
        pattern = rng.choice(["seq_read", "seq_write", "rand_read", "rand_write"])
        block = rng.choice([16, 64, 256, 1024]) * KIB
        compute_ms = rng.choice([1.0, 2.0, 4.0])
        workers = rng.choice([2, 4, 8])
        max_parallel = rng.choice([4, 8, 16])
        nblocks = rng.choice([16, 32, 64])
        config = TiomConfig(mode=mode, api=api, pattern=pattern,
                            block_size=block, compute_ms=compute_ms,
                            workers=workers, max_parallel=max_parallel,
                            file_size=nblocks * block, seed=seed)
        graph = build_task_graph(config)
        assert len(graph.tasks) <= 512
        predicted = oracle_makespan(graph, config.workers, m, config.api)
        measured = run_benchmark(config).elapsed_s
        rel = abs(measured - predicted) / predicted
        worst = max(worst, rel)
        checked += 1
    ok = checked >= 50 and worst <= 0.10
    report(2, "oracle-equivalence", ok, f"{checked} configs, worst {worst * 100:.1f}%")


def test_criterion_3_saturation_ratio():
    rated = 2548.0
    failures = []
    for compute_ms in (1, 4, 16, 64):
        for block_kib in (4, 64, 1024, 8192):
            ratio = block_kib / compute_ms
            if not (ratio >= 64 or ratio <= 4):
                continue
            block = block_kib * KIB
            config = TiomConfig(mode="mix", block_size=block,
                                compute_ms=float(compute_ms),
                                pattern="rand_read", max_parallel=128,
                                file_size=1024 * block, api="standalone",
                                seed=1, workers=64)
            frac = run_benchmark(config).bandwidth_mib_s / rated
            if ratio >= 64 and frac < 0.90:
                failures.append(f"{block_kib}K/{compute_ms}ms: {frac:.2f} < 0.90")
            if ratio <= 4 and frac > 0.75:
                failures.append(f"{block_kib}K/{compute_ms}ms: {frac:.2f} > 0.75")
    report(3, "saturation-ratio", not failures, "; ".join(failures) or "all cells in band")


def test_criterion_4_overlap_benefit():
    m = model()
    # part 1: 64 KiB random write, 1 ms compute, 8 series on 4 workers;
    # measured speedup must be positive and track the oracle prediction
    base = dict(mode="mix", block_size=64 * KIB, compute_ms=1.0,
                pattern="rand_write", max_parallel=8,
                file_size=256 * 64 * KIB, seed=1, workers=4)
    t_sa = run_benchmark(TiomConfig(api="standalone", **base)).elapsed_s
    t_nb = run_benchmark(TiomConfig(api="nb", **base)).elapsed_s
    graph = build_task_graph(TiomConfig(api="nb", **base))
    predicted = 100 * (oracle_makespan(graph, 4, m, "standalone")
                       / oracle_makespan(graph, 4, m, "nb") - 1)
    measured = 100 * (t_sa / t_nb - 1)
    part1 = measured > 0 and abs(measured - predicted) <= 0.15 * predicted
    detail = [f"64K: {measured:.1f}% vs oracle {predicted:.1f}%"]

    # part 2: the 40% band over 32-128 KiB cells, using the configuration
    # that maximizes overlap in this device model (series = 16x workers,
    # workers matching the device queue depth)
    part2 = True
    for block_kib in (32, 64, 128):
        block = block_kib * KIB
        cell = dict(mode="mix", block_size=block, compute_ms=1.0,
                    pattern="rand_write", max_parallel=64,
                    file_size=512 * block, seed=1, workers=4)
        t_sa = run_benchmark(TiomConfig(api="standalone", **cell)).elapsed_s
        t_nb = run_benchmark(TiomConfig(api="nb", **cell)).elapsed_s
        sp = 100 * (t_sa / t_nb - 1)
        detail.append(f"{block_kib}K: {sp:.1f}%")
        part2 &= sp >= 40.0
    report(4, "overlap-benefit", part1 and part2, "; ".join(detail))


def test_criterion_5_compute_dominated_region():
    base = dict(mode="mix", block_size=4 * KIB, compute_ms=128.0,
                pattern="rand_write", max_parallel=8,
                file_size=32 * 4 * KIB, seed=1, workers=4)
    t_sa = run_benchmark(TiomConfig(api="standalone", **base)).elapsed_s
    details = []
    ok = True
    for api in ("bq", "nb"):
        t = run_benchmark(TiomConfig(api=api, **base)).elapsed_s
        sp = 100 * (t_sa / t - 1)
        details.append(f"{api}: {sp:+.2f}%")
        ok &= abs(sp) <= 5.0
    report(5, "compute-dominated-region", ok, "; ".join(details))


def test_criterion_6_capacity_and_retry():
    total_ops = 4096
    cap = 1000
    rt = Runtime(workers=4)
    layer = TasioLayer(rt, TasioConfig(max_in_flight=cap, model=model()))

    census = {"max": 0, "submits": 0}
    inner_submit = layer.ctx.submit

    def audited_submit(req):
        census["submits"] += 1
        out = inner_submit(req)
        census["max"] = max(census["max"], layer.ctx.outstanding)
        assert layer.ctx.outstanding <= cap
        return out

    layer.ctx.submit = audited_submit

    def body():
        for _ in range(total_ops // 4):
            layer.pwrite(None, b"\0" * (4 * KIB), 4 * KIB, 0)

    for _ in range(4):
        rt.spawn_task(body)
    stats = rt.run_to_completion()
    records = list(layer.completed_ops)
    layer.shutdown()

    retried = [op for op in records if op.retried]
    slow_retries = [op for op in retried
                    if op.submitted_ns - op.created_ns >= MS_NS]
    ok = (stats.completed_all
          and census["max"] <= cap
          and len(records) == total_ops
          and all(op.bytes_transferred == 4 * KIB for op in records)
          and retried
          and len(slow_retries) == len(retried))
    report(6, "capacity-and-retry", ok,
           f"peak {census['max']}/{cap}, {len(records)} ops, "
           f"{len(retried)} retried (all >= 1 ms deferred)")


def test_criterion_7_semantics_preserved(tmp_path):
    digests = {}
    byte_maps = {}
    for api in ("standalone", "bq", "nb"):
        path = tmp_path / f"data_{api}.bin"
        config = TiomConfig(mode="mix", block_size=64 * KIB, compute_ms=0.1,
                            pattern="rand_write", max_parallel=4,
                            file_size=MIB, api=api, seed=21, workers=2,
                            clock_mode="real", backend="pool",
                            file_path=str(path), pool_workers=2)
        result = run_benchmark(config)
        assert result.completed_fully
        digests[api] = hashlib.sha256(path.read_bytes()).hexdigest()
        byte_maps[api] = result.call_bytes
    ok = (len(set(digests.values())) == 1
          and byte_maps["standalone"] == byte_maps["bq"] == byte_maps["nb"]
          and sum(byte_maps["nb"].values()) == MIB)
    report(7, "semantics-preserved", ok,
           f"sha256 {next(iter(digests.values()))[:12]}..., "
           f"{len(byte_maps['nb'])} calls")


def test_criterion_8_schedule_properties():
    bad = []
    for seed in range(200):
        trace, truth = run_random_schedule(seed)
        problems = verify_schedule(trace, truth)
        if problems:
            bad.append(f"seed {seed}: {problems[0]}")
    report(8, "schedule-properties", not bad,
           "; ".join(bad[:3]) or "200 schedules clean")


def test_criterion_9_fjio_structure():
    bad = []
    checked = 0
    for block_kib in (4, 64, 256, 1024):
        block = block_kib * KIB
        for nblocks in (16, 64, 256):
            config = TiomConfig(mode="fjio", block_size=block,
                                file_size=nblocks * block, max_parallel=64)
            graph = build_task_graph(config)
            computes = [t for t in graph.tasks if t.kind == "compute"]
            ios = [t for t in graph.tasks if t.kind == "io"]
            if len(ios) != nblocks or 4 * len(computes) != nblocks:
                bad.append(f"{block_kib}K x{nblocks}: counts")
            for t in computes:
                preds = [graph.tasks[d] for d in t.deps]
                if len(preds) != 4 or any(p.kind != "io" for p in preds):
                    bad.append(f"{block_kib}K x{nblocks}: task {t.idx}")
            checked += 1
    report(9, "fjio-structure", not bad,
           "; ".join(bad[:3]) or f"{checked} graphs, fan-in 4 everywhere")
