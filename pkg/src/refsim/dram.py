"""DRAM organization, timing derivation, and command legality.

All times inside the simulator are controller clock cycles.  Commands
use closed-row semantics: RD and WR carry an implicit auto-precharge, so
a bank returns to idle on its own once the access completes.
"""
from __future__ import annotations

import math
import random
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import NamedTuple, Optional, Sequence

ROWS_PER_REFRESH_WINDOW = 8192  # refresh commands per retention window
REFPB_PER_REFAB = 8
TRFC_AB_NS = {8: 350.0, 16: 530.0, 32: 890.0}
TRFC_PB_RATIO = 2.3
FGR_TRFC_DIVISOR = {1: 1.0, 2: 1.35, 4: 1.63}
SUPPORTED_RETENTION_MS = (32, 64)
MAX_REFRESH_SLACK = 8  # JEDEC postpone / pull-in allowance per bank


class ConfigError(ValueError):
    """Raised for unsupported or inconsistent configuration values."""


class RefreshMode(str, Enum):
    ALL_BANK = "allbank"
    PER_BANK = "perbank"


class FgrMode(Enum):
    OFF = 1
    X2 = 2
    X4 = 4


class CmdKind(str, Enum):
    ACT = "ACT"
    RD = "RD"
    WR = "WR"
    PRE = "PRE"
    REFAB = "REFab"
    REFPB = "REFpb"


@dataclass(frozen=True)
class DramOrg:
    channels: int = 2
    ranks_per_channel: int = 2
    banks_per_rank: int = 8
    subarrays_per_bank: int = 8
    rows_per_bank: int = 65536
    columns_per_row: int = 128
    column_width_bytes: int = 64
    density_gbit: int = 8

    def __post_init__(self):
        for name in ("channels", "ranks_per_channel", "banks_per_rank", "subarrays_per_bank",
                     "rows_per_bank", "columns_per_row", "column_width_bytes"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.density_gbit not in TRFC_AB_NS:
            raise ConfigError(f"unsupported density {self.density_gbit} Gb")
        if self.rows_per_bank % self.subarrays_per_bank:
            raise ConfigError("rows_per_bank must be divisible by subarrays_per_bank")
        if self.rows_per_bank % ROWS_PER_REFRESH_WINDOW:
            raise ConfigError(f"rows_per_bank must be divisible by {ROWS_PER_REFRESH_WINDOW}")

    @property
    def rows_per_subarray(self) -> int:
        return self.rows_per_bank // self.subarrays_per_bank

    @property
    def row_bytes(self) -> int:
        return self.columns_per_row * self.column_width_bytes

    @property
    def capacity_bytes(self) -> int:
        return (self.channels * self.ranks_per_channel * self.banks_per_rank
                * self.rows_per_bank * self.row_bytes)


@dataclass(frozen=True)
class TimingParams:
    """DDR timing constraints in controller cycles.

    The ``*_ns`` fields keep the unrounded refresh values so that derived
    quantities can be checked without cycle quantization.
    """

    tCK: float = 1.5
    tRCD: int = 9
    tRP: int = 9
    tCL: int = 9
    tCWL: int = 7
    tRAS: int = 24
    tRC: int = 33
    tWR: int = 10
    tWTR: int = 5
    tRTP: int = 5
    tBURST: int = 4
    tRTW: int = 2
    tRRD: int = 4
    tFAW: int = 20
    tREFI: int = 2604
    tREFIpb: int = 325
    tRFCab: int = 234
    tRFCpb: int = 102
    tRRD_ref_ab: int = 4
    tFAW_ref_ab: int = 20
    tRRD_ref_pb: int = 4
    tFAW_ref_pb: int = 20
    trefi_ns: float = 3906.25
    trfc_ab_ns: float = 350.0
    trfc_pb_ns: float = 350.0 / TRFC_PB_RATIO
    fgr: int = 1

    @property
    def rows_per_refresh_divisor(self) -> int:
        """Refresh commands per retention window (8192, doubled/quadrupled by FGR)."""
        return ROWS_PER_REFRESH_WINDOW * self.fgr

    def with_act_limits(self, tfaw: int, trrd: int) -> "TimingParams":
        """Copy with new base tFAW/tRRD; refresh-scaled values are reset to the base."""
        return replace(self, tFAW=tfaw, tRRD=trrd, tFAW_ref_ab=tfaw, tRRD_ref_ab=trrd,
                       tFAW_ref_pb=tfaw, tRRD_ref_pb=trrd)


@dataclass(frozen=True)
class CurrentParams:
    """Activation and refresh currents (mA) used to scale tFAW/tRRD under SARP.

    The refresh currents are expressed relative to one activation so that
    the all-bank overhead is 2.1x and the per-bank overhead 13.8%.
    """

    I_ACT: float = 50.0
    I_REF_ab: float = 220.0
    I_REF_pb: float = 27.6

    def __post_init__(self):
        if min(self.I_ACT, self.I_REF_ab, self.I_REF_pb) < 0 or self.I_ACT <= 0:
            raise ConfigError("currents must be positive")


def ns_to_cycles(ns: float, tck_ns: float) -> int:
    """Round a latency up to whole cycles (FP noise below 1e-9 cycles is ignored)."""
    return math.ceil(ns / tck_ns - 1e-9)


def derive_timing(density_gbit: int = 8, retention_ms: int = 32,
                  refresh_mode: RefreshMode = RefreshMode.PER_BANK,
                  fgr_mode: FgrMode = FgrMode.OFF, tck_ns: float = 1.5,
                  currents: Optional[CurrentParams] = None,
                  base: Optional[TimingParams] = None) -> TimingParams:
    """Build the timing set for a density / retention / refresh-mode combination.

    Latencies are rounded up to cycles; the refresh interval is rounded
    down, so both roundings err towards refreshing early and waiting long.
    """
    if density_gbit not in TRFC_AB_NS:
        raise ConfigError(f"unsupported density {density_gbit} Gb (expected 8, 16 or 32)")
    if retention_ms not in SUPPORTED_RETENTION_MS:
        raise ConfigError(f"unsupported retention {retention_ms} ms (expected 32 or 64)")
    refresh_mode = RefreshMode(refresh_mode)
    fgr_mode = FgrMode(fgr_mode)
    if fgr_mode is not FgrMode.OFF and refresh_mode is not RefreshMode.ALL_BANK:
        raise ConfigError("fine-granularity refresh is only defined for all-bank refresh")

    base = base or TimingParams()
    factor = fgr_mode.value
    trefi_ns = retention_ms * 1e6 / ROWS_PER_REFRESH_WINDOW / factor
    trfc_ab_ns = TRFC_AB_NS[density_gbit] / FGR_TRFC_DIVISOR[factor]
    trfc_pb_ns = TRFC_AB_NS[density_gbit] / TRFC_PB_RATIO
    trefi = int(trefi_ns / tck_ns + 1e-9)
    t = replace(
        base,
        tCK=tck_ns,
        tREFI=trefi,
        tREFIpb=trefi // REFPB_PER_REFAB,
        tRFCab=ns_to_cycles(trfc_ab_ns, tck_ns),
        tRFCpb=ns_to_cycles(trfc_pb_ns, tck_ns),
        trefi_ns=trefi_ns,
        trfc_ab_ns=trfc_ab_ns,
        trfc_pb_ns=trfc_pb_ns,
        fgr=factor,
    )
    return apply_sarp_scaling(t, currents or CurrentParams())


def sarp_scaled_constraints(t: TimingParams, c: CurrentParams, refresh_kind: CmdKind) -> tuple[int, int]:
    """(tFAW, tRRD) to enforce while a refresh of ``refresh_kind`` is running.

    The extra refresh current is charged against a four-activate window:
    overhead = (4 I_ACT + I_REF) / (4 I_ACT), applied to both limits.
    """
    i_ref = c.I_REF_ab if CmdKind(refresh_kind) is CmdKind.REFAB else c.I_REF_pb
    overhead = (4 * c.I_ACT + i_ref) / (4 * c.I_ACT)
    return math.ceil(t.tFAW * overhead - 1e-9), math.ceil(t.tRRD * overhead - 1e-9)


def apply_sarp_scaling(t: TimingParams, c: CurrentParams) -> TimingParams:
    faw_ab, rrd_ab = sarp_scaled_constraints(t, c, CmdKind.REFAB)
    faw_pb, rrd_pb = sarp_scaled_constraints(t, c, CmdKind.REFPB)
    return replace(t, tFAW_ref_ab=faw_ab, tRRD_ref_ab=rrd_ab, tFAW_ref_pb=faw_pb, tRRD_ref_pb=rrd_pb)


# --------------------------------------------------------------------------
# addressing

DEFAULT_MAPPING = ("offset", "channel", "bank", "rank", "column", "row")


class DecodedAddr(NamedTuple):
    channel: int
    rank: int
    bank: int
    row: int
    column: int
    subarray: int


def _field_sizes(org: DramOrg) -> dict[str, int]:
    return {
        "offset": org.column_width_bytes,
        "channel": org.channels,
        "rank": org.ranks_per_channel,
        "bank": org.banks_per_rank,
        "column": org.columns_per_row,
        "row": org.rows_per_bank,
    }


def decode_address(byte_addr: int, org: DramOrg, mapping: tuple[str, ...] = DEFAULT_MAPPING) -> DecodedAddr:
    """Split a byte address into DRAM coordinates, fields listed low to high."""
    if not 0 <= byte_addr < org.capacity_bytes:
        raise ValueError(f"address {byte_addr:#x} outside capacity {org.capacity_bytes:#x}")
    sizes = _field_sizes(org)
    out = {}
    rest = byte_addr
    for name in mapping:
        rest, out[name] = divmod(rest, sizes[name])
    row = out["row"]
    return DecodedAddr(out["channel"], out["rank"], out["bank"], row, out["column"],
                       subarray_of(row, org))


def encode_address(d: DecodedAddr, org: DramOrg, mapping: tuple[str, ...] = DEFAULT_MAPPING,
                   offset: int = 0) -> int:
    sizes = _field_sizes(org)
    vals = {"offset": offset, "channel": d.channel, "rank": d.rank, "bank": d.bank,
            "column": d.column, "row": d.row}
    addr = 0
    for name in reversed(mapping):
        addr = addr * sizes[name] + vals[name]
    return addr


def subarray_of(row: int, org: DramOrg) -> int:
    return row // org.rows_per_subarray


# --------------------------------------------------------------------------
# commands and state


class Command(NamedTuple):
    """A DRAM command.  REFab uses ``bank=-1``; ``row``/``subarray`` are -1
    where they do not apply (refreshes carry the refreshed row range start)."""

    kind: CmdKind
    channel: int
    rank: int
    bank: int = -1
    row: int = -1
    subarray: int = -1
    issue_cycle: int = 0


class BankFsm(str, Enum):
    IDLE = "Idle"
    ACTIVATING = "Activating"
    ACTIVE = "Active"
    PRECHARGING = "Precharging"
    REFRESHING = "Refreshing"


class BankState:
    """Timing state of a single bank.

    Access and refresh state are kept apart because SARP lets an access in
    one subarray overlap a refresh of another.
    """

    __slots__ = ("open_row", "open_subarray", "act_cycle", "next_act", "last_subarray",
                 "refresh_until", "refreshing_subarray", "refresh_row_counter")

    def __init__(self):
        self.open_row: Optional[int] = None
        self.open_subarray = -1
        self.act_cycle = -(10 ** 9)
        self.next_act = 0           # earliest next ACT (precharge and tRC satisfied)
        self.last_subarray = -1     # subarray of the most recent activation
        self.refresh_until = 0
        self.refreshing_subarray: Optional[int] = None
        self.refresh_row_counter = 0

    def fsm(self, now: int, t: TimingParams) -> BankFsm:
        if self.refresh_until > now and self.open_row is None:
            return BankFsm.REFRESHING
        if self.open_row is not None:
            return BankFsm.ACTIVATING if now < self.act_cycle + t.tRCD else BankFsm.ACTIVE
        if now < self.next_act:
            return BankFsm.PRECHARGING
        return BankFsm.IDLE

    def refreshing(self, now: int) -> bool:
        return self.refresh_until > now


class RankState:
    __slots__ = ("banks", "act_history", "last_act_cycle", "last_rrd_cycle",
                 "refpb_bank", "refpb_until", "refab_until")

    def __init__(self, banks_per_rank: int):
        self.banks = [BankState() for _ in range(banks_per_rank)]
        self.act_history: list[int] = []   # last four ACT cycles, oldest first
        self.last_act_cycle = -(10 ** 9)
        self.last_rrd_cycle = -(10 ** 9)   # last ACT or REFpb, for tRRD
        self.refpb_bank = -1
        self.refpb_until = 0
        self.refab_until = 0

    def refresh_kind_active(self, now: int) -> Optional[CmdKind]:
        if self.refab_until > now:
            return CmdKind.REFAB
        if self.refpb_until > now:
            return CmdKind.REFPB
        return None

    def act_limits(self, now: int, t: TimingParams, sarp: bool) -> tuple[int, int]:
        """(tRRD, tFAW) currently in force for this rank."""
        if sarp:
            if self.refab_until > now:
                return t.tRRD_ref_ab, t.tFAW_ref_ab
            if self.refpb_until > now:
                return t.tRRD_ref_pb, t.tFAW_ref_pb
        return t.tRRD, t.tFAW


class ChannelState:
    """DRAM-side state of one channel: its ranks plus the shared data bus.

    ``start_rows[r]`` is where rank ``r``'s internal refresh counters stand
    when simulation begins (all zero by default).
    """

    __slots__ = ("ranks", "bus_free", "last_rd_end", "last_wr_end", "last_cmd_cycle")

    def __init__(self, org: DramOrg, start_rows: Optional[Sequence[int]] = None):
        self.ranks = [RankState(org.banks_per_rank) for _ in range(org.ranks_per_channel)]
        for rank, row in zip(self.ranks, start_rows or ()):
            for bank in rank.banks:
                bank.refresh_row_counter = row
        self.bus_free = 0               # first cycle the data bus is free
        self.last_rd_end = -(10 ** 9)
        self.last_wr_end = -(10 ** 9)
        self.last_cmd_cycle = -1


def refresh_start_rows(org: DramOrg, channel: int, phase: Optional[int]) -> list[int]:
    """Refresh counter position of each rank of ``channel`` at simulation start.

    A run observes a device somewhere in its retention window, not at row 0.
    ``phase`` seeds the position per rank; ``None`` starts every counter at 0.
    Positions are multiples of the largest refresh step, so row groups line
    up for every FGR mode.
    """
    if phase is None:
        return [0] * org.ranks_per_channel
    group = max(1, org.rows_per_bank // ROWS_PER_REFRESH_WINDOW)
    return [random.Random(f"refresh:{phase}:{channel}:{r}").randrange(org.rows_per_bank // group) * group
            for r in range(org.ranks_per_channel)]


def rows_per_refresh(org: DramOrg, t: TimingParams) -> int:
    return max(1, org.rows_per_bank // t.rows_per_refresh_divisor)


# Illegal-reason names, also used by the offline verifier.
TRRD = "tRRD"
TFAW = "tFAW"
BANK_BUSY = "bank-busy"
BANK_OPEN = "bank-open"
REFRESHING = "refreshing"
SUBARRAY_CONFLICT = "subarray-conflict"
ROW_MISMATCH = "row-mismatch"
TRCD = "tRCD"
DATA_BUS = "data-bus"
TWTR = "tWTR"
REFPB_OVERLAP = "REFpb-overlap"
REF_IN_PROGRESS = "refresh-in-progress"
CMD_BUS = "command-bus"
MALFORMED = "malformed"


def command_legal(cmd: Command, ch: ChannelState, t: TimingParams, now: int,
                  org: DramOrg, sarp: bool = False) -> Optional[str]:
    """Return ``None`` when ``cmd`` may issue at ``now``, else the violated rule."""
    if ch.last_cmd_cycle == now:
        return CMD_BUS
    try:
        rank = ch.ranks[cmd.rank]
    except (IndexError, TypeError):
        return MALFORMED
    kind = cmd.kind
    if kind is CmdKind.ACT:
        if not 0 <= cmd.bank < len(rank.banks) or not 0 <= cmd.row < org.rows_per_bank:
            return MALFORMED
        bank = rank.banks[cmd.bank]
        if bank.open_row is not None:
            return BANK_OPEN
        if now < bank.next_act:
            return BANK_BUSY
        if bank.refresh_until > now:
            if not sarp:
                return REFRESHING
            if subarray_of(cmd.row, org) == bank.refreshing_subarray:
                return SUBARRAY_CONFLICT
        trrd, tfaw = rank.act_limits(now, t, sarp)
        if now - rank.last_rrd_cycle < trrd:
            return TRRD
        if len(rank.act_history) >= 4 and now - rank.act_history[-4] < tfaw:
            return TFAW
        return None
    if kind is CmdKind.RD or kind is CmdKind.WR:
        if not 0 <= cmd.bank < len(rank.banks):
            return MALFORMED
        bank = rank.banks[cmd.bank]
        if bank.open_row is None or bank.open_row != cmd.row:
            return ROW_MISMATCH
        if now < bank.act_cycle + t.tRCD:
            return TRCD
        if kind is CmdKind.RD:
            if now + t.tCL < ch.bus_free:
                return DATA_BUS
            if now < ch.last_wr_end + t.tWTR:
                return TWTR
        else:
            if now + t.tCWL < ch.bus_free:
                return DATA_BUS
            if now + t.tCWL < ch.last_rd_end + t.tRTW:
                return DATA_BUS
        return None
    if kind is CmdKind.PRE:
        if not 0 <= cmd.bank < len(rank.banks):
            return MALFORMED
        bank = rank.banks[cmd.bank]
        if bank.open_row is None:
            return ROW_MISMATCH
        if now < bank.act_cycle + t.tRAS:
            return BANK_BUSY
        return None
    if kind is CmdKind.REFPB:
        if not 0 <= cmd.bank < len(rank.banks):
            return MALFORMED
        if rank.refab_until > now:
            return REF_IN_PROGRESS
        if rank.refpb_until > now:
            return REFPB_OVERLAP
        bank = rank.banks[cmd.bank]
        if not _bank_ready_for_refresh(bank, now, org, t, sarp):
            return BANK_BUSY
        if now - rank.last_rrd_cycle < t.tRRD:
            return TRRD
        return None
    if kind is CmdKind.REFAB:
        if rank.refab_until > now or rank.refpb_until > now:
            return REF_IN_PROGRESS
        for bank in rank.banks:
            if not _bank_ready_for_refresh(bank, now, org, t, sarp):
                return BANK_BUSY
        return None
    return MALFORMED


def _bank_ready_for_refresh(bank: BankState, now: int, org: DramOrg, t: TimingParams, sarp: bool) -> bool:
    if not sarp:
        return bank.open_row is None and now >= bank.next_act
    target = subarray_of(bank.refresh_row_counter, org)
    if bank.open_row is not None:
        return bank.open_subarray != target
    # a precharge still in progress must not be in the subarray about to refresh
    return now >= bank.next_act or bank.last_subarray != target


class Completion(NamedTuple):
    kind: CmdKind
    data_end: int     # cycle the data burst ends (RD/WR), refresh end otherwise


def apply_command(cmd: Command, ch: ChannelState, t: TimingParams, now: int,
                  org: DramOrg, sarp: bool = False) -> Completion:
    """Advance DRAM state for a command already known to be legal."""
    assert command_legal(cmd, ch, t, now, org, sarp) is None, (cmd, now)
    return mutate_state(cmd, ch, t, now, org, sarp)


def mutate_state(cmd: Command, ch: ChannelState, t: TimingParams, now: int,
                 org: DramOrg, sarp: bool = False) -> Completion:
    """State transition of ``cmd`` without a legality check."""
    ch.last_cmd_cycle = now
    rank = ch.ranks[cmd.rank]
    kind = cmd.kind
    if kind is CmdKind.ACT:
        bank = rank.banks[cmd.bank]
        bank.open_row = cmd.row
        bank.open_subarray = bank.last_subarray = subarray_of(cmd.row, org)
        bank.act_cycle = now
        hist = rank.act_history
        hist.append(now)
        if len(hist) > 4:
            del hist[0]
        rank.last_act_cycle = rank.last_rrd_cycle = now
        return Completion(kind, now + t.tRCD)
    if kind is CmdKind.RD or kind is CmdKind.WR:
        bank = rank.banks[cmd.bank]
        if kind is CmdKind.RD:
            data_end = now + t.tCL + t.tBURST
            ch.last_rd_end = data_end
            pre_start = max(now + t.tRTP, bank.act_cycle + t.tRAS)
        else:
            data_end = now + t.tCWL + t.tBURST
            ch.last_wr_end = data_end
            pre_start = max(data_end + t.tWR, bank.act_cycle + t.tRAS)
        ch.bus_free = data_end
        bank.next_act = max(pre_start + t.tRP, bank.act_cycle + t.tRC)
        bank.open_row = None
        bank.open_subarray = -1
        return Completion(kind, data_end)
    if kind is CmdKind.PRE:
        bank = rank.banks[cmd.bank]
        bank.next_act = max(now + t.tRP, bank.act_cycle + t.tRC)
        bank.open_row = None
        bank.open_subarray = -1
        return Completion(kind, now + t.tRP)
    step = rows_per_refresh(org, t)
    if kind is CmdKind.REFPB:
        end = now + t.tRFCpb
        _start_bank_refresh(rank.banks[cmd.bank], end, step, org, sarp)
        rank.refpb_bank = cmd.bank
        rank.refpb_until = end
        rank.last_rrd_cycle = now
        return Completion(kind, end)
    # REFab
    end = now + t.tRFCab
    for bank in rank.banks:
        _start_bank_refresh(bank, end, step, org, sarp)
    rank.refab_until = end
    return Completion(kind, end)


def _start_bank_refresh(bank: BankState, end: int, step: int, org: DramOrg, sarp: bool) -> None:
    bank.refresh_until = end
    bank.refreshing_subarray = subarray_of(bank.refresh_row_counter, org)
    bank.refresh_row_counter = (bank.refresh_row_counter + step) % org.rows_per_bank
    if not sarp:
        bank.next_act = max(bank.next_act, end)


@dataclass
class ShadowCounters:
    """Controller-side copy of each bank's refresh position, kept as
    (refresh subarray, local row within the subarray)."""

    rows_per_subarray: int
    subarrays: int
    subarray: list[int] = field(default_factory=list)
    local_row: list[int] = field(default_factory=list)

    @classmethod
    def for_rank(cls, org: DramOrg, start_row: int = 0) -> "ShadowCounters":
        n = org.banks_per_rank
        sub, local = divmod(start_row, org.rows_per_subarray)
        return cls(org.rows_per_subarray, org.subarrays_per_bank, [sub] * n, [local] * n)

    def refreshing_subarray(self, bank: int) -> int:
        return self.subarray[bank]

    def advance(self, bank: int, rows: int) -> None:
        local = self.local_row[bank] + rows
        carry, self.local_row[bank] = divmod(local, self.rows_per_subarray)
        self.subarray[bank] = (self.subarray[bank] + carry) % self.subarrays

    def row(self, bank: int) -> int:
        return self.subarray[bank] * self.rows_per_subarray + self.local_row[bank]
