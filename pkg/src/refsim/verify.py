"""Command/refresh log formats and offline protocol and retention checks."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import IO, Iterable, NamedTuple, Optional, Sequence

from .dram import (
    MALFORMED, MAX_REFRESH_SLACK, ChannelState, CmdKind, Command, DramOrg, TimingParams,
    apply_command, command_legal, mutate_state, refresh_start_rows, rows_per_refresh, subarray_of,
)

REFRESH_COUNTER = "refresh-counter"
ORDER = "order"


@dataclass(frozen=True)
class LogHeader:
    """Run parameters carried at the top of every exported log as ``# key=value`` lines."""

    org: DramOrg
    timing: TimingParams
    sarp: bool = False
    refresh_mode: str = "perbank"   # perbank | allbank | none
    retention_ms: int = 32
    cycles: Optional[int] = None    # simulated length, when known
    refresh_phase: Optional[int] = None   # seeds the refresh counters' start rows

    def lines(self) -> list[str]:
        out = [f"# sarp={int(self.sarp)}", f"# refresh_mode={self.refresh_mode}",
               f"# retention_ms={self.retention_ms}"]
        if self.cycles is not None:
            out.append(f"# cycles={self.cycles}")
        if self.refresh_phase is not None:
            out.append(f"# refresh_phase={self.refresh_phase}")
        out += [f"# org.{k}={v}" for k, v in dataclasses.asdict(self.org).items()]
        out += [f"# timing.{k}={v!r}" for k, v in dataclasses.asdict(self.timing).items()]
        return out

    @classmethod
    def parse(cls, lines: Iterable[str]) -> "LogHeader":
        org, timing, top = {}, {}, {}
        for line in lines:
            key, _, value = line.lstrip("#").strip().partition("=")
            if key.startswith("org."):
                org[key[4:]] = int(value)
            elif key.startswith("timing."):
                name = key[7:]
                timing[name] = float(value) if name in _FLOAT_TIMING else int(value)
            elif key:
                top[key] = value
        return cls(DramOrg(**org), TimingParams(**timing), sarp=bool(int(top.get("sarp", 0))),
                   refresh_mode=top.get("refresh_mode", "perbank"),
                   retention_ms=int(top.get("retention_ms", 32)),
                   cycles=int(top["cycles"]) if "cycles" in top else None,
                   refresh_phase=int(top["refresh_phase"]) if "refresh_phase" in top else None)


_FLOAT_TIMING = {f.name for f in dataclasses.fields(TimingParams) if f.type in ("float", float)}


class RefreshRecord(NamedTuple):
    cycle: int
    kind: CmdKind
    channel: int
    rank: int
    bank: int          # -1 for REFab
    row: int           # first refreshed row (per bank)
    subarray: int
    end: int           # completion cycle


class Violation(NamedTuple):
    cycle: int
    rule: str
    channel: int = -1
    rank: int = -1
    bank: int = -1
    detail: str = ""

    def __str__(self) -> str:
        return f"{self.rule}@{self.cycle} ch{self.channel} rank{self.rank} bank{self.bank} {self.detail}".rstrip()


class RetentionViolation(NamedTuple):
    channel: int
    rank: int
    bank: int
    rows: tuple[int, int]   # half-open row range
    gap: int                # cycles since the rows were last refreshed
    cycle: int
    rule: str


# --------------------------------------------------------------------------
# text formats


def format_command(c: Command) -> str:
    return f"{c.issue_cycle} {c.kind.value} {c.channel} {c.rank} {c.bank} {c.row} {c.subarray}"


def format_refresh(r: RefreshRecord) -> str:
    return f"{r.cycle} {r.kind.value} {r.channel} {r.rank} {r.bank} {r.row} {r.subarray} {r.end}"


def write_log(fh: IO[str], header: LogHeader, lines: Iterable[str]) -> None:
    for line in header.lines():
        fh.write(line + "\n")
    for line in lines:
        fh.write(line + "\n")


def _split_header(lines: Sequence[str]) -> tuple[Optional[LogHeader], list[tuple[int, str]]]:
    head = [ln for ln in lines if ln.startswith("#")]
    body = [(i + 1, ln) for i, ln in enumerate(lines) if ln.strip() and not ln.startswith("#")]
    return (LogHeader.parse(head) if head else None), body


_KINDS = {k.value: k for k in CmdKind}


def read_command_log(text: str) -> tuple[Optional[LogHeader], list[Command], list[Violation]]:
    """Parse a command log; malformed lines come back as violations rather than errors."""
    header, body = _split_header(text.splitlines())
    cmds, bad = [], []
    for lineno, line in body:
        parts = line.split()
        try:
            cycle, kind, ch, rank, bank, row, sub = parts
            cmds.append(Command(_KINDS[kind], int(ch), int(rank), int(bank), int(row), int(sub), int(cycle)))
        except (ValueError, KeyError):
            bad.append(Violation(-1, MALFORMED, detail=f"line {lineno}: {line.strip()!r}"))
    return header, cmds, bad


def read_refresh_log(text: str) -> tuple[Optional[LogHeader], list[RefreshRecord]]:
    header, body = _split_header(text.splitlines())
    recs = []
    for lineno, line in body:
        parts = line.split()
        if len(parts) != 8 or parts[1] not in _KINDS:
            raise ValueError(f"refresh log line {lineno}: {line.strip()!r}")
        cycle, kind, *rest = parts
        ch, rank, bank, row, sub, end = map(int, rest)
        recs.append(RefreshRecord(int(cycle), _KINDS[kind], ch, rank, bank, row, sub, end))
    return header, recs


# --------------------------------------------------------------------------
# protocol replay


def verify_command_log(log: Sequence[Command], t: TimingParams, org: DramOrg,
                       sarp: bool = False, refresh_phase: Optional[int] = None) -> list[Violation]:
    """Replay ``log`` against fresh DRAM state and report every rule broken.

    A violating command is still applied (when its shape allows) so one bad
    timestamp does not cascade into spurious follow-on violations.
    ``refresh_phase`` must match the run's so refresh counters start alike.
    """
    channels = [ChannelState(org, refresh_start_rows(org, c, refresh_phase)) for c in range(org.channels)]
    out: list[Violation] = []
    last = -1
    step = rows_per_refresh(org, t)
    for cmd in log:
        now = cmd.issue_cycle
        if now < last:
            out.append(Violation(now, ORDER, cmd.channel, cmd.rank, cmd.bank))
        last = max(last, now)
        if not 0 <= cmd.channel < org.channels:
            out.append(Violation(now, MALFORMED, cmd.channel, cmd.rank, cmd.bank, "channel"))
            continue
        ch = channels[cmd.channel]
        reason = command_legal(cmd, ch, t, now, org, sarp)
        if reason == MALFORMED:
            out.append(Violation(now, reason, cmd.channel, cmd.rank, cmd.bank))
            continue
        if cmd.kind is CmdKind.REFPB and cmd.row >= 0:
            expect = ch.ranks[cmd.rank].banks[cmd.bank].refresh_row_counter
            if cmd.row != expect or cmd.subarray != subarray_of(expect, org):
                out.append(Violation(now, REFRESH_COUNTER, cmd.channel, cmd.rank, cmd.bank,
                                     f"row {cmd.row} expected {expect}"))
        if reason is not None:
            out.append(Violation(now, reason, cmd.channel, cmd.rank, cmd.bank))
            _force_apply(cmd, ch, t, now, org, sarp, step)
        else:
            apply_command(cmd, ch, t, now, org, sarp)
    return out


def _force_apply(cmd, ch, t, now, org, sarp, step):
    """Apply the state change of an illegal command, skipping the legality check."""
    if cmd.kind in (CmdKind.RD, CmdKind.WR) and ch.ranks[cmd.rank].banks[cmd.bank].open_row is None:
        return
    mutate_state(cmd, ch, t, now, org, sarp)


# --------------------------------------------------------------------------
# retention


def bank_deadlines(bank: int, t: TimingParams, refresh_mode: str, start: int, end: int) -> range:
    """Nominal per-bank refresh due times in [start, end).

    Per-bank refresh slots come every tREFIpb in round-robin order, so bank
    ``b`` is due at (b+1)*tREFIpb + j*tREFI.  All-bank refresh is due at
    j*tREFI for every bank.
    """
    first = (bank + 1) * t.tREFIpb if refresh_mode == "perbank" else t.tREFI
    if first < start:
        first += -(-(start - first) // t.tREFI) * t.tREFI
    return range(first, end, t.tREFI)


def retention_audit(refresh_log: Sequence[RefreshRecord], org: DramOrg, retention_ms: float,
                    sim_start: int, sim_end: int, t: TimingParams,
                    refresh_mode: str = "perbank") -> list[RetentionViolation]:
    """Check that no row goes unrefreshed for too long.

    Two checks per bank: (1) the refresh debt, nominal deadlines passed minus
    refreshes received, stays within [-8, +8]; (2) each row group's gap
    between refreshes (with a virtual refresh of everything at ``sim_start``)
    stays within the retention time plus the slack those debt bounds allow.
    """
    out: list[RetentionViolation] = []
    step = rows_per_refresh(org, t)
    retention_cycles = int(retention_ms * 1e6 / t.tCK)
    allowance = retention_cycles + (2 * MAX_REFRESH_SLACK + 1) * t.tREFI
    per_bank: dict[tuple[int, int, int], list[tuple[int, int]]] = {}
    for rec in refresh_log:
        banks = range(org.banks_per_rank) if rec.bank < 0 else (rec.bank,)
        for b in banks:
            per_bank.setdefault((rec.channel, rec.rank, b), []).append((rec.cycle, rec.row))
    for ch in range(org.channels):
        for rank in range(org.ranks_per_channel):
            for b in range(org.banks_per_rank):
                refs = sorted(per_bank.get((ch, rank, b), []))
                out += _audit_bank(ch, rank, b, refs, t, refresh_mode, sim_start, sim_end,
                                   step, org, allowance)
    return out


def _audit_bank(ch, rank, b, refs, t, refresh_mode, sim_start, sim_end, step, org, allowance):
    out = []
    events = [(d, 0) for d in bank_deadlines(b, t, refresh_mode, sim_start, sim_end + 1)]
    events += [(cyc, 1) for cyc, _ in refs]
    events.sort()
    debt = 0
    last_ref = sim_start
    counter = refs[0][1] if refs else 0
    flagged = False
    for cyc, is_ref in events:
        if is_ref:
            debt -= 1
            last_ref = cyc
            flagged = False
            if debt < -MAX_REFRESH_SLACK:
                out.append(RetentionViolation(ch, rank, b, (counter, counter + step), 0, cyc, "pull-in-bound"))
            counter = (counter + step) % org.rows_per_bank
        else:
            debt += 1
            if debt > MAX_REFRESH_SLACK and not flagged:
                overdue = (debt - MAX_REFRESH_SLACK) * step
                out.append(RetentionViolation(ch, rank, b, (counter, counter + overdue),
                                              cyc - last_ref, cyc, "postpone-bound"))
                flagged = True
    # literal row-gap check
    last_seen: dict[int, int] = {}
    for cyc, row in refs:
        prev = last_seen.get(row, sim_start)
        if cyc - prev > allowance:
            out.append(RetentionViolation(ch, rank, b, (row, row + step), cyc - prev, cyc, "retention"))
        last_seen[row] = cyc
    if sim_end - sim_start > allowance:
        groups = org.rows_per_bank // step
        for g in range(groups):
            row = g * step
            prev = last_seen.get(row, sim_start)
            if sim_end - prev > allowance:
                out.append(RetentionViolation(ch, rank, b, (row, row + step), sim_end - prev, sim_end,
                                              "retention"))
    return out


def debt_trace(refresh_log: Sequence[RefreshRecord], org: DramOrg, t: TimingParams,
               refresh_mode: str, sim_end: int) -> dict[tuple[int, int, int], tuple[int, int]]:
    """(min, max) debt seen per (channel, rank, bank) over the run."""
    spans = {}
    per_bank: dict[tuple[int, int, int], list[int]] = {}
    for rec in refresh_log:
        for b in (range(org.banks_per_rank) if rec.bank < 0 else (rec.bank,)):
            per_bank.setdefault((rec.channel, rec.rank, b), []).append(rec.cycle)
    for ch in range(org.channels):
        for rank in range(org.ranks_per_channel):
            for b in range(org.banks_per_rank):
                ev = [(d, 1) for d in bank_deadlines(b, t, refresh_mode, 0, sim_end + 1)]
                ev += [(c, -1) for c in per_bank.get((ch, rank, b), [])]
                ev.sort(key=lambda e: (e[0], -e[1]))
                debt = lo = hi = 0
                for _, delta in ev:
                    debt += delta
                    lo, hi = min(lo, debt), max(hi, debt)
                spans[(ch, rank, b)] = (lo, hi)
    return spans
