"""I/O backend tests: device model arithmetic, the simulated shared-rate
context, the thread-pool backend, and the throughput profiler."""

from __future__ import annotations

import os

import pytest

from taskio.device import DeviceModel, DeviceModelError
from taskio.iocontext import (
    AlignmentError,
    Completed,
    InFlight,
    InvalidRequestError,
    IoRequest,
    QUEUE_FULL,
    SimulatedContext,
    context_create,
    device_profile,
    make_request,
    simulated_completion_time,
)

MIB = 1024 * 1024
SEC_NS = 1_000_000_000


@pytest.fixture
def model():
    return DeviceModel.optane_905p()


# -- device model -------------------------------------------------------


def test_calibrated_rates(model):
    assert model.read_bw_mib_s == 2548
    assert model.write_bw_mib_s == 2255
    assert model.max_depth == 4


def test_write_multiplier_piecewise(model):
    assert model.write_multiplier(1024 * 1024) == pytest.approx(1.0)
    assert model.write_multiplier(8192 * 1024) == pytest.approx(0.6)
    assert model.write_multiplier(4 * 1024) == pytest.approx(1.0)  # below the knee
    assert model.write_multiplier(16384 * 1024) == pytest.approx(0.6)  # past the tail
    # halfway between the knees in KiB: linear interpolation
    mid_kib = (1024 + 8192) / 2
    assert model.write_multiplier(int(mid_kib * 1024)) == pytest.approx(0.8)


def test_class_bandwidth(model):
    assert model.class_bw_bytes_s("read", 4096) == pytest.approx(2548 * MIB)
    assert model.class_bw_bytes_s("write", 4096) == pytest.approx(2255 * MIB)
    assert model.class_bw_bytes_s("write", 8192 * 1024) == pytest.approx(0.6 * 2255 * MIB)


def test_model_config_roundtrip(tmp_path, model):
    path = tmp_path / "device.conf"
    model.to_file(str(path))
    loaded = DeviceModel.from_file(str(path))
    assert loaded == model


def test_model_config_rejects_garbage(tmp_path):
    path = tmp_path / "bad.conf"
    path.write_text("read_bw_mib_s=not-a-number\n")
    with pytest.raises(DeviceModelError):
        DeviceModel.from_file(str(path))


def test_model_validation():
    with pytest.raises(DeviceModelError):
        DeviceModel(read_bw_mib_s=0, write_bw_mib_s=2255)
    with pytest.raises(DeviceModelError):
        DeviceModel(read_bw_mib_s=2548, write_bw_mib_s=2255, max_depth=0)


# -- request validation -------------------------------------------------


def test_request_negative_offset_rejected():
    req = make_request("read", None, -1, bytearray(4096), 4096)
    with pytest.raises(InvalidRequestError):
        req.validate()


def test_request_unknown_kind_rejected():
    req = IoRequest(kind="append", file=None, offset=0,
                    segments=((bytearray(512), 512),))
    with pytest.raises(InvalidRequestError):
        req.validate()


def test_direct_alignment_enforced():
    ok = make_request("read", None, 512, bytearray(512), 512, direct=True)
    ok.validate()
    bad_offset = make_request("read", None, 100, bytearray(512), 512, direct=True)
    with pytest.raises(AlignmentError):
        bad_offset.validate()
    bad_length = make_request("read", None, 0, bytearray(100), 100, direct=True)
    with pytest.raises(AlignmentError):
        bad_length.validate()


# -- simulated context --------------------------------------------------


def read_req(nbytes: int) -> IoRequest:
    return make_request("read", None, 0, bytearray(nbytes), nbytes)


def write_req(nbytes: int) -> IoRequest:
    return make_request("write", None, 0, bytes(nbytes), nbytes)


def test_single_read_duration_matches_rated_bandwidth(model):
    # 1 MiB at 2548 MiB/s: (1/2548) s
    ctx = SimulatedContext(capacity=8, model=model)
    res = ctx.submit(read_req(MIB))
    assert isinstance(res, InFlight)
    recs, timed_out = ctx.wait_completions(1, timeout_s=1.0)
    assert not timed_out
    expected_ns = MIB / (2548 * MIB) * SEC_NS
    assert recs[0].completion_time_ns == pytest.approx(expected_ns, abs=1)
    assert recs[0].bytes_transferred == MIB


def test_small_write_duration(model):
    ctx = SimulatedContext(capacity=8, model=model)
    ctx.submit(write_req(4096))
    recs, _ = ctx.wait_completions(1, timeout_s=1.0)
    expected_ns = 4096 / (2255 * MIB) * SEC_NS  # ~1.73 us
    assert recs[0].completion_time_ns == pytest.approx(expected_ns, abs=1)


def test_two_concurrent_reads_share_bandwidth(model):
    ctx = SimulatedContext(capacity=8, model=model)
    ctx.submit(read_req(MIB))
    ctx.submit(read_req(MIB))
    recs, _ = ctx.wait_completions(2, timeout_s=1.0)
    expected_ns = 2 * MIB / (2548 * MIB) * SEC_NS
    for rec in recs:
        assert rec.completion_time_ns == pytest.approx(expected_ns, abs=2)


def test_analytic_completion_time_agrees_with_simulation(model):
    for nbytes, depth in [(4096, 1), (MIB, 1), (MIB, 2), (64 * 1024, 4)]:
        ctx = SimulatedContext(capacity=16, model=model)
        for _ in range(depth):
            ctx.submit(read_req(nbytes))
        recs, _ = ctx.wait_completions(depth, timeout_s=1.0)
        analytic_s = simulated_completion_time(model, read_req(nbytes), depth)
        last = max(r.completion_time_ns for r in recs)
        # completion stamps are integer nanoseconds (rounded up)
        assert last == pytest.approx(analytic_s * SEC_NS, abs=1)


def test_queue_beyond_depth_is_serviced_fifo(model):
    # 8 equal reads through a depth-4 device: two full service rounds
    ctx = SimulatedContext(capacity=16, model=model)
    rids = [ctx.submit(read_req(MIB)).request_id for _ in range(8)]
    recs, _ = ctx.wait_completions(8, timeout_s=1.0)
    finish = {r.request_id: r.completion_time_ns for r in recs}
    round_ns = 4 * MIB / (2548 * MIB) * SEC_NS
    for rid in rids[:4]:
        assert finish[rid] == pytest.approx(round_ns, abs=2)
    for rid in rids[4:]:
        assert finish[rid] == pytest.approx(2 * round_ns, abs=4)


def test_capacity_limit_returns_queue_full(model):
    ctx = SimulatedContext(capacity=2, model=model)
    assert isinstance(ctx.submit(read_req(4096)), InFlight)
    assert isinstance(ctx.submit(read_req(4096)), InFlight)
    assert ctx.submit(read_req(4096)) is QUEUE_FULL
    ctx.wait_completions(2, timeout_s=1.0)
    assert ctx.outstanding == 0
    assert isinstance(ctx.submit(read_req(4096)), InFlight)


def test_zero_length_completes_inline(model):
    ctx = SimulatedContext(capacity=2, model=model)
    res = ctx.submit(read_req(0))
    assert isinstance(res, Completed)
    assert res.bytes_transferred == 0
    assert ctx.outstanding == 0


def test_bytes_conserved_across_mixed_burst(model):
    ctx = SimulatedContext(capacity=64, model=model)
    sizes = [4096, 64 * 1024, MIB, 4096, 512 * 1024]
    total = 0
    for i, n in enumerate(sizes):
        ctx.submit(read_req(n) if i % 2 else write_req(n))
        total += n
    recs, _ = ctx.wait_completions(len(sizes), timeout_s=5.0)
    assert sum(r.bytes_transferred for r in recs) == total


def test_simulation_is_deterministic(model):
    def run():
        ctx = SimulatedContext(capacity=32, model=model)
        for i in range(12):
            ctx.submit(read_req(4096 * (i + 1)) if i % 3 else write_req(8192))
        recs, _ = ctx.wait_completions(12, timeout_s=5.0)
        return [(r.request_id, r.completion_time_ns) for r in recs]

    assert run() == run()


def test_aggregate_throughput_never_exceeds_rated(model):
    # sustained depth-4 reads: total bytes / elapsed must not beat the device
    ctx = SimulatedContext(capacity=8, model=model)
    inflight = [ctx.submit(read_req(MIB)).request_id for _ in range(4)]
    done_bytes = 0
    while ctx.now_ns < int(0.05 * SEC_NS):
        recs, _ = ctx.wait_completions(1, timeout_s=0.05)
        for rec in recs:
            done_bytes += rec.bytes_transferred
            inflight.remove(rec.request_id)
        while len(inflight) < 4:
            inflight.append(ctx.submit(read_req(MIB)).request_id)
    assert done_bytes / (ctx.now_ns / SEC_NS) <= 2548 * MIB * 1.0001


# -- pool backend -------------------------------------------------------


def test_pool_write_read_roundtrip(tmp_path):
    path = tmp_path / "data.bin"
    path.write_bytes(b"\0" * 8192)
    fd = os.open(path, os.O_RDWR)
    ctx = context_create(capacity=8, backend="pool", pool_workers=2)
    try:
        payload = bytes(range(256)) * 16  # 4096 bytes
        res = ctx.submit(make_request("write", fd, 4096, payload, len(payload)))
        assert isinstance(res, InFlight)
        recs, timed_out = ctx.wait_completions(1, timeout_s=5.0)
        assert not timed_out and recs[0].error is None
        assert recs[0].bytes_transferred == len(payload)

        buf = bytearray(len(payload))
        ctx.submit(make_request("read", fd, 4096, buf, len(buf)))
        recs, _ = ctx.wait_completions(1, timeout_s=5.0)
        assert recs[0].bytes_transferred == len(payload)
        assert bytes(buf) == payload
    finally:
        ctx.shutdown()
        os.close(fd)


def test_pool_vectored_request(tmp_path):
    path = tmp_path / "vec.bin"
    path.write_bytes(bytes(range(200)))
    fd = os.open(path, os.O_RDONLY)
    ctx = context_create(capacity=4, backend="pool", pool_workers=1)
    try:
        a, b = bytearray(50), bytearray(50)
        req = IoRequest(kind="read", file=fd, offset=100,
                        segments=((a, 50), (b, 50)))
        ctx.submit(req)
        recs, _ = ctx.wait_completions(1, timeout_s=5.0)
        assert recs[0].bytes_transferred == 100
        assert bytes(a) == bytes(range(100, 150))
        assert bytes(b) == bytes(range(150, 200))
    finally:
        ctx.shutdown()
        os.close(fd)


def test_pool_short_read_at_eof(tmp_path):
    path = tmp_path / "short.bin"
    path.write_bytes(b"x" * 100)
    fd = os.open(path, os.O_RDONLY)
    ctx = context_create(capacity=4, backend="pool", pool_workers=1)
    try:
        buf = bytearray(4096)
        ctx.submit(make_request("read", fd, 0, buf, 4096))
        recs, _ = ctx.wait_completions(1, timeout_s=5.0)
        assert recs[0].error is None
        assert recs[0].bytes_transferred == 100
    finally:
        ctx.shutdown()
        os.close(fd)


def test_pool_error_reported_not_raised(tmp_path):
    path = tmp_path / "ro.bin"
    path.write_bytes(b"\0" * 512)
    fd = os.open(path, os.O_RDONLY)
    ctx = context_create(capacity=4, backend="pool", pool_workers=1)
    try:
        ctx.submit(make_request("write", fd, 0, b"y" * 512, 512))
        recs, _ = ctx.wait_completions(1, timeout_s=5.0)
        assert isinstance(recs[0].error, OSError)
    finally:
        ctx.shutdown()
        os.close(fd)


def test_context_create_rejects_unknown_backend():
    with pytest.raises(ValueError):
        context_create(capacity=1, backend="uring")


def test_context_create_simulated_needs_model():
    with pytest.raises(ValueError):
        context_create(capacity=1, backend="simulated")


# -- profiler -----------------------------------------------------------


def test_profile_simulated_reports_rated_bandwidth(model):
    ctx = SimulatedContext(capacity=8, model=model)
    cells = device_profile(ctx, block_sizes=[MIB], depths=[1, 2, 4],
                           duration_s=0.05, pattern="rand", kind="read")
    for depth in (1, 2, 4):
        assert cells[(MIB, depth)] == pytest.approx(2548, rel=0.02)


def test_profile_pool_runs(tmp_path):
    path = tmp_path / "prof.bin"
    path.write_bytes(b"\0" * (4 * MIB))
    fd = os.open(path, os.O_RDONLY)
    ctx = context_create(capacity=8, backend="pool", pool_workers=2)
    try:
        cells = device_profile(ctx, block_sizes=[64 * 1024], depths=[2],
                               duration_s=0.05, pattern="rand", kind="read",
                               file=fd, file_size=4 * MIB)
        assert cells[(64 * 1024, 2)] > 0
    finally:
        ctx.shutdown()
        os.close(fd)
