"""Per-channel memory controller: request queues, FR-FCFS with write
batching, closed-row command generation, and refresh orchestration."""
from __future__ import annotations

import random
from dataclasses import dataclass
from typing import Callable, Optional

from .dram import (
    ChannelState, CmdKind, Command, DramOrg, ShadowCounters, TimingParams, apply_command,
    command_legal, refresh_start_rows, rows_per_refresh, subarray_of,
)
from .metrics import RankStats
from .policies import BLOCK_BANK, PolicySpec, RankContext, RefreshAction
from .verify import RefreshRecord

NEVER = float("inf")
COMPACT_EVERY = 4096


@dataclass(frozen=True)
class QueueConfig:
    read_capacity: int = 64
    write_capacity: int = 64
    high_watermark: int = 48
    low_watermark: int = 32
    forward_writes: bool = True


class Request:
    __slots__ = ("core", "is_write", "addr", "channel", "rank", "bank", "row", "column", "subarray",
                 "arrival", "issue", "completion", "done")

    def __init__(self, core: int, is_write: bool, addr: int, decoded, arrival: int):
        self.core = core
        self.is_write = is_write
        self.addr = addr
        self.channel, self.rank, self.bank, self.row, self.column, self.subarray = decoded
        self.arrival = arrival
        self.issue = -1
        self.completion = -1
        self.done = False

    @property
    def kind(self) -> str:
        return "W" if self.is_write else "R"

    def __repr__(self) -> str:
        return (f"Request(core={self.core}, {self.kind}, ch{self.channel} r{self.rank} b{self.bank} "
                f"row{self.row}, arrival={self.arrival})")


class IntervalUnion:
    """Length of the union of [start, end) spans, folded incrementally.

    Spans are buffered and merged; :meth:`compact` finalizes everything that
    ends before ``horizon``, the earliest cycle a future span may start at.
    """

    __slots__ = ("spans", "closed", "closed_end")

    def __init__(self):
        self.spans: list[tuple[int, int]] = []
        self.closed = 0            # cycles in finalized segments
        self.closed_end = -1       # end of the last finalized segment

    def add(self, start: int, end: int) -> None:
        if end > start:
            self.spans.append((start, end))

    def _merged(self) -> list[list[int]]:
        out: list[list[int]] = []
        for s, e in sorted(self.spans):
            s = max(s, self.closed_end)
            if e <= s:
                continue
            if out and s <= out[-1][1]:
                if e > out[-1][1]:
                    out[-1][1] = e
            else:
                out.append([s, e])
        return out

    def compact(self, horizon: int) -> None:
        keep = []
        for s, e in self._merged():
            if e <= horizon:
                self.closed += e - s
                self.closed_end = e
            else:
                keep.append((s, e))
        self.spans = keep

    def total(self, end: int) -> int:
        """Covered cycles in [0, end)."""
        total = self.closed
        for s, e in self._merged():
            if s >= end:
                break
            total += min(e, end) - s
        return total


class RankCounters:
    __slots__ = ("act", "rd", "wr", "refab", "refpb", "busy", "refreshing")

    def __init__(self):
        self.act = self.rd = self.wr = self.refab = self.refpb = 0
        self.busy = IntervalUnion()         # some bank open or refreshing
        self.refreshing = IntervalUnion()   # some refresh in progress


def update_drain_mode(drain: bool, writes: int, cfg: QueueConfig) -> bool:
    """Write-drain hysteresis: on above the high watermark, off at or below the low one."""
    if not drain and writes > cfg.high_watermark:
        return True
    if drain and writes <= cfg.low_watermark:
        return False
    return drain


def sarp_conflict(req: Request, ch: ChannelState, now: int) -> bool:
    """True when ``req`` targets the subarray its bank is refreshing right now."""
    bank = ch.ranks[req.rank].banks[req.bank]
    return bank.refresh_until > now and bank.refreshing_subarray == req.subarray


def next_command(req: Request, ch: ChannelState, now: int) -> Command:
    """Next closed-row command for ``req``: ACT, then RD/WR with auto-precharge."""
    bank = ch.ranks[req.rank].banks[req.bank]
    if bank.open_row is None:
        kind = CmdKind.ACT
    else:
        assert bank.open_row == req.row, "closed-row policy never leaves a foreign row open"
        kind = CmdKind.WR if req.is_write else CmdKind.RD
    return Command(kind, req.channel, req.rank, req.bank, req.row, req.subarray, now)


class ChannelController:
    """Controller for one channel.

    ``on_read_done(cycle, request)`` is called when a read's data returns.
    """

    def __init__(self, index: int, org: DramOrg, t: TimingParams, spec: PolicySpec, seed: int = 0,
                 queues: QueueConfig = QueueConfig(),
                 on_read_done: Optional[Callable[[int, Request], None]] = None,
                 record: bool = True, record_latency: bool = False, refresh_phase: Optional[int] = None):
        self.index = index
        self.org = org
        self.t = t
        self.spec = spec
        self.cfg = queues
        self.sarp = spec.sarp and org.subarrays_per_bank > 1
        start_rows = refresh_start_rows(org, index, refresh_phase)
        self.dram = ChannelState(org, start_rows)
        nr, nb = org.ranks_per_channel, org.banks_per_rank
        self.shadow = [ShadowCounters.for_rank(org, row) for row in start_rows]
        self.policy = spec.cls(org, t, sarp=self.sarp, seed=seed, shadow=self.shadow, **spec.kwargs) \
            if spec.name != "norefresh" else spec.cls(org, t)
        self.rng = random.Random(f"{seed}:{index}")
        self.rq = [[[] for _ in range(nb)] for _ in range(nr)]
        self.wq = [[[] for _ in range(nb)] for _ in range(nr)]
        self.owner: list[list[Optional[Request]]] = [[None] * nb for _ in range(nr)]
        self.pending = [[0] * nb for _ in range(nr)]
        self.n_reads = 0
        self.n_writes = 0
        self.write_lines: dict[int, int] = {}
        self.drain = False
        self.on_read_done = on_read_done or (lambda cycle, req: None)
        self.record = record
        self.record_latency = record_latency
        self.cmd_log: list[Command] = []
        self.refresh_log: list[RefreshRecord] = []
        self.latencies: list[tuple[int, str, int, int]] = []
        self.counters = [RankCounters() for _ in range(nr)]
        self.reads_served = 0
        self.writes_served = 0
        self.forwarded = 0
        self.drain_cycles = 0
        self._drain_since = 0
        self.wake = 0
        self._deadline = self.policy.next_event(0)
        self._rows_per_ref = rows_per_refresh(org, t)
        self._observe = hasattr(self.policy, "predictors")
        self._now = 0
        self._refresh_trrd = t.tRRD if (spec.mode == "perbank" or not self.sarp) else 0
        self._ctx = [RankContext(r, self.pending[r], self._legal(r), False, False, False, self.rng)
                     for r in range(nr)]

    # ------------------------------------------------------------------ queues

    def can_accept(self, is_write: bool) -> bool:
        if is_write:
            return self.n_writes < self.cfg.write_capacity
        return self.n_reads < self.cfg.read_capacity

    def enqueue(self, req: Request, now: int) -> bool:
        """Queue a request; False means the queue is full and the core must stall."""
        line = req.addr // self.org.column_width_bytes
        if req.is_write:
            if self.n_writes >= self.cfg.write_capacity:
                return False
            self.wq[req.rank][req.bank].append(req)
            self.n_writes += 1
            self.write_lines[line] = self.write_lines.get(line, 0) + 1
        else:
            if self.n_reads >= self.cfg.read_capacity:
                return False
            if self.cfg.forward_writes and line in self.write_lines:
                req.issue = now
                req.completion = now + 1
                self.forwarded += 1
                self.on_read_done(now + 1, req)
                return True
            self.rq[req.rank][req.bank].append(req)
            self.n_reads += 1
        self.pending[req.rank][req.bank] += 1
        if now < self.wake:
            self.wake = now
        return True

    @property
    def read_occupancy(self) -> int:
        return self.n_reads

    @property
    def write_occupancy(self) -> int:
        return self.n_writes

    # -------------------------------------------------------------- scheduling

    def frfcfs_pick(self, now: int) -> Optional[Request]:
        """Oldest request whose next command is legal now (first-ready, first-come).

        Reads are the active class unless the channel is draining writes or
        has no reads queued.  A request that already holds an open row may
        always finish its column command.
        """
        t = self.t
        dram = self.dram
        sarp = self.sarp
        writes = self.drain or self.n_reads == 0
        rd_ok = now + t.tCL >= dram.bus_free and now >= dram.last_wr_end + t.tWTR
        wr_ok = now + t.tCWL >= dram.bus_free and now + t.tCWL >= dram.last_rd_end + t.tRTW
        best = None
        best_arr = NEVER
        queues = self.wq if writes else self.rq
        blocks = self.policy.act_block
        for r, rank in enumerate(dram.ranks):
            trrd, tfaw = rank.act_limits(now, t, sarp)
            hist = rank.act_history
            act_ok = now - rank.last_rrd_cycle >= trrd and (len(hist) < 4 or now - hist[-4] >= tfaw)
            owners = self.owner[r]
            qs = queues[r]
            blk_row = blocks[r]
            for b, bank in enumerate(rank.banks):
                o = owners[b]
                if o is not None:
                    if o.arrival < best_arr and now >= bank.act_cycle + t.tRCD \
                            and (wr_ok if o.is_write else rd_ok):
                        best, best_arr = o, o.arrival
                    continue
                if not act_ok:
                    continue
                q = qs[b]
                if not q or now < bank.next_act or q[0].arrival >= best_arr:
                    continue
                blk = blk_row[b]
                if blk == BLOCK_BANK:
                    continue
                refreshing = bank.refresh_until > now
                if refreshing and not sarp:
                    continue
                busy_sub = bank.refreshing_subarray if refreshing else -1
                for req in q:
                    if req.arrival >= best_arr:
                        break
                    if req.subarray == blk or req.subarray == busy_sub:
                        continue
                    best, best_arr = req, req.arrival
                    break
        return best

    def _legal(self, r: int) -> Callable[[CmdKind, int], bool]:
        """Legality probe for refreshes to rank ``r`` at the cycle being evaluated."""
        dram, t, org, sarp, ch = self.dram, self.t, self.org, self.sarp, self.index

        def legal(kind: CmdKind, bank: int) -> bool:
            now = self._now
            return command_legal(Command(kind, ch, r, bank, -1, -1, now), dram, t, now, org, sarp) is None
        return legal

    def tick(self, now: int) -> Optional[Command]:
        """Advance one cycle; issues at most one command on the command bus."""
        policy = self.policy
        if now >= self._deadline:
            for r in range(self.org.ranks_per_channel):
                policy.advance(now, r, self.pending[r])
            self._deadline = policy.next_event(now)
        drain = update_drain_mode(self.drain, self.n_writes, self.cfg)
        if drain != self.drain:
            if drain:
                self._drain_since = now
            else:
                self.drain_cycles += now - self._drain_since
            self.drain = drain

        cand = self.frfcfs_pick(now)
        issued = None
        nr = self.org.ranks_per_channel
        self._now = now
        trrd = self._refresh_trrd
        for i in range(nr):
            r = (now + i) % nr
            rank = self.dram.ranks[r]
            # No refresh can start while one is running in the rank, nor within
            # tRRD of the last ACT/REFpb (REFpb obeys tRRD; without SARP an ACT
            # that recent also leaves a bank open, which rules out REFab).
            if rank.refpb_until > now or rank.refab_until > now or now - rank.last_rrd_cycle < trrd:
                continue
            if not policy.may_refresh(r):
                continue
            ctx = self._ctx[r]
            ctx.drain = self.drain
            ctx.demand_ready = cand is not None
            action = policy.decide(now, ctx)
            if action is not None:
                issued = self._issue_refresh(action, now)
                break
        if issued is None and cand is not None:
            issued = self._issue_demand(cand, now)
        if self._observe:
            for r in range(nr):
                policy.observe(now, r, sum(self.pending[r]))
        if issued is not None:
            self.wake = now + 1
        else:
            self.wake = self._next_wake(now)
        return issued

    # ------------------------------------------------------------------ issue

    def _issue_demand(self, req: Request, now: int) -> Command:
        cmd = next_command(req, self.dram, now)
        done = apply_command(cmd, self.dram, self.t, now, self.org, self.sarp)
        r, b = req.rank, req.bank
        cnt = self.counters[r]
        if cmd.kind is CmdKind.ACT:
            q = (self.wq if req.is_write else self.rq)[r][b]
            q.remove(req)
            self.owner[r][b] = req
            req.issue = now
            cnt.act += 1
        else:
            bank = self.dram.ranks[r].banks[b]
            cnt.busy.add(bank.act_cycle, bank.next_act)
            if len(cnt.busy.spans) >= COMPACT_EVERY:
                self._compact(r, now)
            self.owner[r][b] = None
            self.pending[r][b] -= 1
            req.completion = done.data_end
            if req.is_write:
                cnt.wr += 1
                self.n_writes -= 1
                self.writes_served += 1
                line = req.addr // self.org.column_width_bytes
                left = self.write_lines[line] - 1
                if left:
                    self.write_lines[line] = left
                else:
                    del self.write_lines[line]
            else:
                cnt.rd += 1
                self.n_reads -= 1
                self.reads_served += 1
                self.on_read_done(done.data_end, req)
            if self.record_latency:
                self.latencies.append((req.core, req.kind, req.arrival, req.completion))
        if self.record:
            self.cmd_log.append(cmd)
        return cmd

    def _issue_refresh(self, action: RefreshAction, now: int) -> Command:
        r = action.rank
        rank = self.dram.ranks[r]
        shadow = self.shadow[r]
        step = self._rows_per_ref
        cnt = self.counters[r]
        if action.kind is CmdKind.REFPB:
            b = action.bank
            row = rank.banks[b].refresh_row_counter
            cmd = Command(CmdKind.REFPB, self.index, r, b, row, subarray_of(row, self.org), now)
            done = apply_command(cmd, self.dram, self.t, now, self.org, self.sarp)
            shadow.advance(b, step)
            assert shadow.row(b) == rank.banks[b].refresh_row_counter
            cnt.refpb += 1
        else:
            row = rank.banks[0].refresh_row_counter
            cmd = Command(CmdKind.REFAB, self.index, r, -1, -1, -1, now)
            done = apply_command(cmd, self.dram, self.t, now, self.org, self.sarp)
            for b, bank in enumerate(rank.banks):
                shadow.advance(b, step)
                assert shadow.row(b) == bank.refresh_row_counter
            cnt.refab += 1
        cnt.busy.add(now, done.data_end)
        cnt.refreshing.add(now, done.data_end)
        self.policy.issued(now, action)
        if self.record:
            self.cmd_log.append(cmd)
            self.refresh_log.append(RefreshRecord(now, cmd.kind, self.index, r, cmd.bank, row,
                                                  subarray_of(row, self.org), done.data_end))
        return cmd

    def _next_wake(self, now: int) -> float:
        """Earliest future cycle at which any timing threshold expires.

        Legality only changes when a threshold passes or a command/arrival
        happens, so sleeping until then cannot miss an issue opportunity.
        """
        t = self.t
        dram = self.dram
        nxt = self._deadline
        if self._observe:
            v = self.policy.next_event(now)
            if v < nxt:
                nxt = v
        for v in (dram.bus_free - t.tCL, dram.bus_free - t.tCWL, dram.last_wr_end + t.tWTR,
                  dram.last_rd_end + t.tRTW - t.tCWL):
            if now < v < nxt:
                nxt = v
        trcd = t.tRCD
        for rank in dram.ranks:
            lr = rank.last_rrd_cycle
            hist = rank.act_history
            for v in (lr + t.tRRD, lr + t.tRRD_ref_ab, lr + t.tRRD_ref_pb, rank.refpb_until,
                      rank.refab_until):
                if now < v < nxt:
                    nxt = v
            if len(hist) >= 4:
                h = hist[-4]
                for v in (h + t.tFAW, h + t.tFAW_ref_ab, h + t.tFAW_ref_pb):
                    if now < v < nxt:
                        nxt = v
            for bank in rank.banks:
                v = bank.next_act
                if now < v < nxt:
                    nxt = v
                v = bank.act_cycle + trcd
                if now < v < nxt:
                    nxt = v
                v = bank.refresh_until
                if now < v < nxt:
                    nxt = v
        return nxt

    def _compact(self, r: int, now: int) -> None:
        # open banks may still add spans starting at their ACT cycle
        horizon = min([now] + [b.act_cycle for b in self.dram.ranks[r].banks if b.open_row is not None])
        cnt = self.counters[r]
        cnt.busy.compact(horizon)
        cnt.refreshing.compact(horizon)

    def rank_stats(self, end: int) -> list[RankStats]:
        """Per-rank activity counters over [0, end)."""
        out = []
        for c in self.counters:
            active = c.busy.total(end)
            out.append(RankStats(c.act, c.rd, c.wr, c.refab, c.refpb, active, end - active,
                                 c.refreshing.total(end)))
        return out

    def finish(self, now: int) -> None:
        if self.drain:
            self.drain_cycles += now - self._drain_since
            self._drain_since = now
