import heapq

import pytest
from hypothesis import given, settings, strategies as st

from refsim.core import (
    Core, CoreConfig, TraceParseError, TraceRecord, TraceSpec, generate_trace, ipc, parse_trace_line,
    read_trace, trace_mpki, write_trace,
)
from refsim.dram import DramOrg, decode_address

ORG = DramOrg()


class Req:
    __slots__ = ("done", "addr")

    def __init__(self, addr, done=False):
        self.addr = addr
        self.done = done


class FixedLatencyPort:
    """Memory that answers every read after ``latency`` controller cycles."""

    def __init__(self, latency=0, write_ok=True):
        self.latency = latency
        self.write_ok = write_ok
        self.core = None
        self.pending = []
        self.sent = []
        self.seq = 0

    def send_read(self, core, addr, now):
        r = Req(addr, done=self.latency == 0)
        self.sent.append((now, addr))
        if not r.done:
            self.seq += 1
            heapq.heappush(self.pending, (now + self.latency, self.seq, r))
        return r

    def send_write(self, core, addr, now):
        return self.write_ok

    def deliver(self, now):
        while self.pending and self.pending[0][0] <= now:
            _, _, r = heapq.heappop(self.pending)
            self.core.complete(r, now)


def run_core(trace, cycles, latency, cfg=CoreConfig()):
    port = FixedLatencyPort(latency)
    core = Core(0, trace, cfg, port)
    port.core = core
    core.end_cc = cycles * cfg.clock_ratio
    now = 0
    while now < cycles:
        port.deliver(now)
        if core.wake <= now:
            core.tick(now)
        nxt = min(core.wake, port.pending[0][0] if port.pending else cycles, cycles)
        now = nxt if nxt > now else now + 1
    return core, port


def run_core_reference(trace, cycles, latency, cfg=CoreConfig()):
    """Plain cycle-by-cycle stepping, no skipping or sleeping."""
    port = FixedLatencyPort(latency)
    core = Core(0, trace, cfg, port)
    port.core = core
    for now in range(cycles):
        port.deliver(now)
        for _ in range(cfg.clock_ratio):
            core.step(now)
    return core, port


# ------------------------------------------------------------------ traces


def test_parse_read_only():
    assert parse_trace_line("7 0x1a2b40") == TraceRecord(7, 0x1A2B40, None)


def test_parse_with_writeback():
    assert parse_trace_line("0 4096 8192") == TraceRecord(0, 4096, 8192)


@pytest.mark.parametrize("line", ["", "   ", "# comment"])
def test_parse_skips_blank_and_comments(line):
    assert parse_trace_line(line) is None


@pytest.mark.parametrize("line", ["abc", "1", "1 2 3 4", "-1 0x40", "5 0xZZ"])
def test_parse_errors_carry_line_number(line):
    with pytest.raises(TraceParseError, match="line 12"):
        parse_trace_line(line, 12)


def test_read_trace_reports_line(tmp_path):
    p = tmp_path / "t.trace"
    p.write_text("# header\n3 0x40\n\nabc\n")
    with pytest.raises(TraceParseError, match="line 4"):
        read_trace(p)


def test_trace_round_trip(tmp_path):
    recs = generate_trace(TraceSpec(length=300, seed=3), ORG)
    p = tmp_path / "t.trace"
    write_trace(p, recs)
    assert read_trace(p) == recs


def test_empty_trace_file_rejected(tmp_path):
    p = tmp_path / "t.trace"
    p.write_text("# nothing\n")
    with pytest.raises(TraceParseError):
        read_trace(p)


@pytest.mark.parametrize("mpki", [1.0, 10.0, 40.0])
def test_generator_hits_target_mpki(mpki):
    recs = generate_trace(TraceSpec(mpki=mpki, length=20000, seed=1), ORG)
    assert trace_mpki(recs) == pytest.approx(mpki, rel=0.05)


def test_generator_deterministic_and_seeded():
    a = generate_trace(TraceSpec(seed=4, length=500), ORG)
    assert a == generate_trace(TraceSpec(seed=4, length=500), ORG)
    assert a != generate_trace(TraceSpec(seed=5, length=500), ORG)


def test_generator_bank_locality():
    recs = generate_trace(TraceSpec(bank_locality=1.0, length=200, seed=2), ORG)
    banks = {decode_address(r.read_addr, ORG)[:3] for r in recs}
    assert len(banks) == 1
    spread = generate_trace(TraceSpec(bank_locality=0.0, length=2000, seed=2), ORG)
    assert len({decode_address(r.read_addr, ORG)[:3] for r in spread}) == 32


def test_generator_footprint():
    spec = TraceSpec(footprint_bytes=1 << 20, length=2000, seed=9)
    addrs = [r.read_addr for r in generate_trace(spec, ORG)]
    assert max(addrs) - min(addrs) < 1 << 20


def test_intensity_label():
    assert TraceSpec(mpki=10).intensive and not TraceSpec(mpki=9.9).intensive


# -------------------------------------------------------------------- core


def test_read_emitted_on_third_cycle():
    seen = []

    class Port(FixedLatencyPort):
        def send_read(self, core, addr, now):
            seen.append(c.cc - 1)          # core cycle being simulated (0-based)
            return super().send_read(core, addr, now)

    port = Port(latency=100)
    c = Core(0, [TraceRecord(6, 0x40)], CoreConfig(), port)
    port.core = c
    for _ in range(3):
        c.step(0)
    assert seen == [2]


def test_mshr_bound():
    port = FixedLatencyPort(latency=10 ** 9)
    c = Core(0, [TraceRecord(0, 0x40 * i) for i in range(1, 20)], CoreConfig(), port)
    port.core = c
    for _ in range(20):
        c.step(0)
    assert c.outstanding == 8 and len(port.sent) == 8
    _, _, first = heapq.heappop(port.pending)
    c.complete(first, 1)
    c.step(1)
    assert len(port.sent) == 9 and c.outstanding == 8


def test_window_bound():
    port = FixedLatencyPort(latency=10 ** 9)
    c = Core(0, [TraceRecord(500, 0x40)], CoreConfig(), port)
    port.core = c
    for _ in range(400):
        c.step(0)
    # the unanswered read sits at the head; the window fills up behind it
    assert c.occupancy == 128 and len(port.sent) == 1


def test_stalled_core_sleeps_until_completion():
    core, port = run_core([TraceRecord(0, 0x40 * i) for i in range(1, 50)], 50, latency=10 ** 6)
    assert core.stalled and core.wake == float("inf") and len(port.sent) == 8


def test_write_queue_full_polls():
    port = FixedLatencyPort(latency=0, write_ok=False)
    c = Core(0, [TraceRecord(0, 0x40, 0x80)], CoreConfig(), port)
    port.core = c
    c.tick(0)
    assert c.polling and c.wake == 1 and c.writes_sent == 0


@pytest.mark.parametrize("bubble", [0, 2, 5, 49])
def test_ideal_memory_ipc(bubble):
    trace = [TraceRecord(bubble, 0x40), TraceRecord(bubble, 0x80, 0xC0)]
    core, _ = run_core(trace, 2000, latency=0)
    ratio = core.cfg.clock_ratio
    assert core.ipc(2000) == pytest.approx(3.0, rel=1e-3)
    assert core.retired <= 3 * 2000 * ratio


def test_ipc_function():
    assert ipc(300, 100) == 3.0
    with pytest.raises(ValueError):
        ipc(1, 0)


trace_strategy = st.lists(
    st.builds(TraceRecord, st.integers(0, 80), st.integers(1, 4000).map(lambda x: x * 64),
              st.one_of(st.none(), st.integers(1, 4000).map(lambda x: x * 64))),
    min_size=1, max_size=12)


@settings(max_examples=60, deadline=None)
@given(trace_strategy, st.integers(0, 60))
def test_skipping_matches_cycle_by_cycle(trace, latency):
    fast, fp = run_core(trace, 300, latency)
    slow, sp = run_core_reference(trace, 300, latency)
    assert fast.retired == slow.retired
    assert fp.sent == sp.sent


@settings(max_examples=30, deadline=None)
@given(trace_strategy)
def test_ipc_non_increasing_in_latency(trace):
    last = None
    for lat in (0, 5, 20, 80, 300):
        core, _ = run_core(trace, 600, lat)
        if last is not None:
            assert core.retired <= last
        last = core.retired
