"""Trace-driven out-of-order core approximation and trace utilities.

A trace record is ``<bubble> <read_addr> [<writeback_addr>]``: the number of
non-memory instructions preceding a last-level-cache read miss, the miss
address, and optionally the address of a dirty line written back with it.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Optional, Protocol, Sequence

import numpy as np

from .dram import DramOrg, decode_address, encode_address

INTENSIVE_MPKI = 10.0


class TraceRecord(NamedTuple):
    bubble_count: int
    read_addr: int
    writeback_addr: Optional[int] = None


class TraceParseError(ValueError):
    pass


def parse_trace_line(text: str, lineno: int = 0) -> Optional[TraceRecord]:
    """Parse one trace line; returns None for blank or ``#`` comment lines."""
    body = text.split("#", 1)[0].strip()
    if not body:
        return None
    parts = body.split()
    try:
        if len(parts) not in (2, 3):
            raise ValueError("expected 2 or 3 fields")
        bubble = int(parts[0], 0)
        if bubble < 0:
            raise ValueError("negative bubble count")
        read = int(parts[1], 0)
        write = int(parts[2], 0) if len(parts) == 3 else None
    except ValueError as e:
        raise TraceParseError(f"line {lineno}: {e}: {text.strip()!r}") from None
    return TraceRecord(bubble, read, write)


def read_trace(path) -> list[TraceRecord]:
    recs = []
    with open(path) as fh:
        for i, line in enumerate(fh, 1):
            rec = parse_trace_line(line, i)
            if rec is not None:
                recs.append(rec)
    if not recs:
        raise TraceParseError(f"{path}: trace has no records")
    return recs


def write_trace(path, records: Iterable[TraceRecord]) -> None:
    with open(path, "w") as fh:
        for r in records:
            if r.writeback_addr is None:
                fh.write(f"{r.bubble_count} {r.read_addr:#x}\n")
            else:
                fh.write(f"{r.bubble_count} {r.read_addr:#x} {r.writeback_addr:#x}\n")


def trace_mpki(records: Sequence[TraceRecord]) -> float:
    """Read misses per thousand instructions over the whole trace."""
    insts = sum(r.bubble_count + 1 + (r.writeback_addr is not None) for r in records)
    return 1000.0 * len(records) / insts


@dataclass(frozen=True)
class TraceSpec:
    """Parameters of a synthetic trace."""

    mpki: float = 20.0
    footprint_bytes: int = 256 << 20
    bank_locality: float = 0.0
    write_fraction: float = 0.3
    length: int = 20000
    seed: int = 0

    @property
    def intensive(self) -> bool:
        return self.mpki >= INTENSIVE_MPKI


def generate_trace(spec: TraceSpec, org: DramOrg) -> list[TraceRecord]:
    """Synthetic miss stream with a target MPKI.

    Bubbles are geometric with the mean that yields ``spec.mpki`` reads per
    thousand instructions (the read and any writeback count as instructions).
    With probability ``bank_locality`` a read stays in the previous read's
    bank at a fresh row, otherwise it lands uniformly in the footprint.
    """
    rng = np.random.default_rng(spec.seed)
    n = spec.length
    mean_bubble = max(0.0, 1000.0 / spec.mpki - 1.0 - spec.write_fraction)
    if mean_bubble > 0:
        bubbles = rng.geometric(1.0 / (mean_bubble + 1.0), size=n) - 1
    else:
        bubbles = np.zeros(n, dtype=np.int64)
    line = org.column_width_bytes
    footprint = min(spec.footprint_bytes, org.capacity_bytes)
    lines = footprint // line
    base = int(rng.integers(0, max(1, (org.capacity_bytes - footprint) // line + 1))) * line
    reads = rng.integers(0, lines, size=n) * line + base
    stay = rng.random(n) < spec.bank_locality
    has_wb = rng.random(n) < spec.write_fraction
    wbs = rng.integers(0, lines, size=n) * line + base
    out = []
    prev_addr: Optional[int] = None
    for i in range(n):
        addr = int(reads[i])
        if stay[i] and prev_addr is not None:
            prev = decode_address(prev_addr, org)
            d = decode_address(addr, org)
            addr = encode_address(d._replace(channel=prev.channel, rank=prev.rank, bank=prev.bank), org)
        prev_addr = addr
        out.append(TraceRecord(int(bubbles[i]), addr, int(wbs[i]) if has_wb[i] else None))
    return out


# --------------------------------------------------------------------------
# core


@dataclass(frozen=True)
class CoreConfig:
    issue_width: int = 3
    window: int = 128
    mshrs: int = 8
    clock_ratio: int = 6   # core cycles per controller cycle (4 GHz : 666.7 MHz)

    def __post_init__(self):
        if min(self.issue_width, self.window, self.mshrs, self.clock_ratio) < 1:
            raise ValueError("core parameters must be positive")


class MemoryPort(Protocol):
    def send_read(self, core: int, addr: int, now: int):
        """Returns a request object with a ``done`` flag, or None when the queue is full."""
    def send_write(self, core: int, addr: int, now: int) -> bool:
        """False when the write queue is full."""


class Core:
    """Out-of-order core approximation: ``issue_width``-wide dispatch and
    in-order retirement through a ``window``-entry instruction window.

    Non-memory instructions are ready as soon as they are dispatched; a read
    holds its window slot (and an MSHR) until its data returns; a writeback
    retires immediately once the write queue accepts it.  The trace loops.

    The core keeps its own clock ``cc`` in core cycles.  Stretches where the
    outcome is fully determined (bubble-only dispatch) are skipped in one
    step, and a core blocked on an outstanding read sleeps until
    :meth:`complete` wakes it.
    """

    def __init__(self, cid: int, trace: Sequence[TraceRecord], cfg: CoreConfig, port: MemoryPort,
                 capacity: Optional[int] = None):
        if not trace:
            raise ValueError("empty trace")
        self.id = cid
        self.trace = trace
        self.cfg = cfg
        self.port = port
        self.capacity = capacity
        self.window: deque = deque()   # ints = runs of ready instructions; objects = reads
        self.occupancy = 0
        self.outstanding = 0
        self.retired = 0
        self.cursor = 0
        self.bubbles_left = trace[0].bubble_count
        self.phase = 0           # 0 bubbles, 1 read, 2 writeback
        self.cc = 0              # next core cycle to simulate
        self.end_cc = float("inf")
        self.stalled = False
        self.polling = False
        self.wake = 0
        self.reads_sent = 0
        self.writes_sent = 0

    def _addr(self, a: int) -> int:
        return a % self.capacity if self.capacity else a

    # ----------------------------------------------------------------- cycle

    def step(self, now: int) -> bool:
        """Simulate one core cycle at controller cycle ``now``; True if anything moved."""
        cfg = self.cfg
        width = cfg.issue_width
        win = self.window
        self.cc += 1
        progress = False
        budget = width
        while budget and win:
            h = win[0]
            if h.__class__ is int:
                take = h if h <= budget else budget
                budget -= take
                self.occupancy -= take
                self.retired += take
                if take == h:
                    win.popleft()
                else:
                    win[0] = h - take
                progress = True
            elif h.done:
                win.popleft()
                self.occupancy -= 1
                self.retired += 1
                budget -= 1
                progress = True
            else:
                break
        budget = width
        cap = cfg.window
        self.polling = False
        while budget and self.occupancy < cap:
            if self.phase == 0:
                if self.bubbles_left:
                    n = min(self.bubbles_left, budget, cap - self.occupancy)
                    self._push_ready(n)
                    self.bubbles_left -= n
                    budget -= n
                    progress = True
                    continue
                self.phase = 1
            rec = self.trace[self.cursor]
            if self.phase == 1:
                if self.outstanding >= cfg.mshrs:
                    break
                req = self.port.send_read(self.id, self._addr(rec.read_addr), now)
                if req is None:
                    self.polling = True
                    break
                if not req.done:
                    self.outstanding += 1
                self.reads_sent += 1
                win.append(req)
                self.occupancy += 1
                budget -= 1
                progress = True
                if rec.writeback_addr is None:
                    self._next_record()
                else:
                    self.phase = 2
                continue
            if not self.port.send_write(self.id, self._addr(rec.writeback_addr), now):
                self.polling = True
                break
            self.writes_sent += 1
            self._push_ready(1)
            budget -= 1
            progress = True
            self._next_record()
        assert self.outstanding <= cfg.mshrs and self.occupancy <= cap
        return progress

    def _skip(self, limit: int) -> bool:
        """Jump over cycles that only dispatch and retire bubbles; True if it jumped."""
        w = self.cfg.issue_width
        if self.phase != 0 or self.bubbles_left < w:
            return False
        win = self.window
        h = win[0] if win else 0
        if h.__class__ is int and len(win) <= 1:
            # only ready bubbles in flight: each cycle retires w (or what is
            # left of the first run) and dispatches w more
            k = min(self.bubbles_left // w, self.end_cc - self.cc)
            if k < 2:
                return False
            if h >= w:
                self.retired += k * w
            else:
                self.retired += h + (k - 1) * w
                win.clear()
                win.append(w)
                self.occupancy = w
        elif h.__class__ is int:
            # a ready run at the head covers the next k retire slots; reads
            # behind it cannot influence those cycles, whenever they complete
            k = min(h // w, self.bubbles_left // w, self.end_cc - self.cc)
            if k < 1:
                return False
            if h == k * w:
                win.popleft()
            else:
                win[0] = h - k * w
            self.retired += k * w
            self.occupancy -= k * w
            self._push_ready(k * w)
        else:
            if h.done:
                return False
            # head read outstanding: nothing retires, bubbles fill the window
            k = min(limit - self.cc, self.bubbles_left // w, (self.cfg.window - self.occupancy) // w)
            if k < 1:
                return False
            self._push_ready(k * w)
        self.bubbles_left -= k * w
        self.cc += k
        return True

    def tick(self, now: int) -> None:
        """Simulate the core cycles belonging to controller cycle ``now`` and set ``wake``."""
        ratio = self.cfg.clock_ratio
        limit = (now + 1) * ratio
        if self.cc < now * ratio:
            self.cc = now * ratio        # slept through stalled cycles
        self.stalled = False
        while self.cc < limit:
            if self._skip(limit):
                continue
            if not self.step(now):
                if self.polling:
                    self.cc = limit
                    break
                self.stalled = True
                self.wake = float("inf")
                return
        self.wake = max(now + 1, self.cc // ratio)

    # -------------------------------------------------------------- helpers

    def _push_ready(self, n: int) -> None:
        win = self.window
        if win and win[-1].__class__ is int:
            win[-1] += n
        else:
            win.append(n)
        self.occupancy += n

    def _next_record(self) -> None:
        self.cursor += 1
        if self.cursor == len(self.trace):
            self.cursor = 0
        self.bubbles_left = self.trace[self.cursor].bubble_count
        self.phase = 0

    def complete(self, req, now: int) -> None:
        """Data for outstanding read ``req`` returned at controller cycle ``now``."""
        req.done = True
        self.outstanding -= 1
        if now < self.wake:
            self.wake = now

    def ipc(self, controller_cycles: int) -> float:
        return ipc(self.retired, controller_cycles * self.cfg.clock_ratio)


def ipc(retired: int, core_cycles: int) -> float:
    if core_cycles <= 0:
        raise ValueError("elapsed cycles must be positive")
    return retired / core_cycles
