"""Multi-core, multi-channel system loop.

Components expose a ``wake`` cycle; the loop jumps straight to the earliest
one, so idle stretches cost nothing.  Within a cycle the order is fixed:
read completions, then cores (which may enqueue requests), then channel
controllers (which may issue one command each).
"""
from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from typing import Optional, Sequence

from .controller import ChannelController, QueueConfig, Request
from .core import Core, CoreConfig, TraceRecord
from .dram import DramOrg, TimingParams, decode_address
from .policies import PolicySpec


@dataclass
class SimResult:
    cycles: int
    retired: list[int]
    ipc: list[float]
    channels: list[ChannelController] = field(repr=False)
    cores: list[Core] = field(repr=False)

    @property
    def reads_served(self) -> int:
        return sum(c.reads_served + c.forwarded for c in self.channels)

    @property
    def writes_served(self) -> int:
        return sum(c.writes_served for c in self.channels)


class System:
    def __init__(self, org: DramOrg, t: TimingParams, spec: PolicySpec,
                 traces: Sequence[Sequence[TraceRecord]], seed: int = 0,
                 core_cfg: CoreConfig = CoreConfig(), queues: QueueConfig = QueueConfig(),
                 record: bool = True, record_latency: bool = False, refresh_phase: Optional[int] = None):
        self.org = org
        self.t = t
        self.spec = spec
        self._events: list[tuple[int, int, Request]] = []
        self._seq = 0
        self.channels = [ChannelController(i, org, t, spec, seed, queues, self._read_done,
                                           record, record_latency, refresh_phase)
                         for i in range(org.channels)]
        self.cores = [Core(i, tr, core_cfg, self, org.capacity_bytes) for i, tr in enumerate(traces)]
        self._now = 0

    # ----------------------------------------------------------- memory port

    def send_read(self, core: int, addr: int, now: int) -> Optional[Request]:
        d = decode_address(addr, self.org)
        req = Request(core, False, addr, d, now)
        return req if self.channels[d.channel].enqueue(req, now) else None

    def send_write(self, core: int, addr: int, now: int) -> bool:
        d = decode_address(addr, self.org)
        return self.channels[d.channel].enqueue(Request(core, True, addr, d, now), now)

    def _read_done(self, cycle: int, req: Request) -> None:
        self._seq += 1
        heapq.heappush(self._events, (cycle, self._seq, req))

    # ------------------------------------------------------------------ loop

    def run(self, cycles: int) -> SimResult:
        if cycles <= 0:
            raise ValueError("cycles must be positive")
        cores, channels, events = self.cores, self.channels, self._events
        for c in cores:
            c.end_cc = cycles * c.cfg.clock_ratio
        now = 0
        while now < cycles:
            while events and events[0][0] <= now:
                _, _, req = heapq.heappop(events)
                cores[req.core].complete(req, now)
            for c in cores:
                if c.wake <= now:
                    c.tick(now)
            for ch in channels:
                if ch.wake <= now:
                    ch.tick(now)
            nxt = cycles
            for c in cores:
                if c.wake < nxt:
                    nxt = c.wake
            for ch in channels:
                if ch.wake < nxt:
                    nxt = ch.wake
            if events and events[0][0] < nxt:
                nxt = events[0][0]
            now = nxt if nxt > now else now + 1
        for ch in channels:
            ch.finish(cycles)
        self._now = cycles
        ratio = cores[0].cfg.clock_ratio if cores else 1
        return SimResult(cycles, [c.retired for c in cores],
                         [c.retired / (cycles * ratio) for c in cores], channels, cores)


def simulate(org: DramOrg, t: TimingParams, spec: PolicySpec, traces: Sequence[Sequence[TraceRecord]],
             cycles: int, seed: int = 0, **kw) -> SimResult:
    return System(org, t, spec, traces, seed, **kw).run(cycles)
