"""Refresh scheduling policies.

Every policy keeps per-bank refresh *debt*: +1 whenever a bank's nominal
refresh deadline passes, -1 for every refresh the bank receives.  The
JEDEC flexibility of eight postponed or pulled-in refreshes becomes the
bound ``-8 <= debt <= 8``.

The controller calls, each evaluated cycle and for each rank:

* :meth:`RefreshPolicy.advance` to account for elapsed deadlines,
* :meth:`RefreshPolicy.decide` to obtain a refresh to issue (or ``None``),
* :meth:`RefreshPolicy.issued` once the refresh went out on the bus.

Policies may also block new activations to banks (or, with SARP, to the
subarray about to be refreshed) so a due refresh cannot be starved.
"""
from __future__ import annotations

import random
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional, Sequence

from .dram import MAX_REFRESH_SLACK, CmdKind, DramOrg, TimingParams

NOT_BLOCKED = -2
BLOCK_BANK = -1
NEVER = float("inf")
ELASTIC_EWMA_ALPHA = 1 / 8
ELASTIC_URGENT = 4


class Origin(str, Enum):
    SCHEDULED = "scheduled"
    POSTPONED = "postponed"
    PULLED_IN = "pulled-in"
    FORCED = "forced"


@dataclass(frozen=True)
class RefreshAction:
    kind: CmdKind
    rank: int
    bank: int = -1
    origin: Origin = Origin.SCHEDULED


def first_deadline(bank: int, t: TimingParams, mode: str) -> int:
    """First nominal due time of ``bank``; later ones follow every tREFI."""
    return (bank + 1) * t.tREFIpb if mode == "perbank" else t.tREFI


@dataclass
class DebtCounters:
    """Per-bank refresh debt and next nominal deadline for one rank."""

    debt: list[int]
    next_deadline: list[int]
    interval: int

    @classmethod
    def for_rank(cls, banks: int, t: TimingParams, mode: str) -> "DebtCounters":
        return cls([0] * banks, [first_deadline(b, t, mode) for b in range(banks)], t.tREFI)

    def advance(self, now: int) -> list[int]:
        """Charge every deadline that has passed by ``now``; returns the banks charged."""
        hit = []
        for b, d in enumerate(self.next_deadline):
            while d <= now:
                self.debt[b] += 1
                d += self.interval
                hit.append(b)
            self.next_deadline[b] = d
        return hit

    def refreshed(self, bank: int) -> None:
        self.debt[bank] -= 1

    def earliest_deadline(self) -> int:
        return min(self.next_deadline)


@dataclass
class IdlePredictor:
    """EWMA of observed rank idle-period lengths."""

    avg: float = 0.0
    idle_since: Optional[int] = None
    alpha: float = ELASTIC_EWMA_ALPHA


def update_idle_predictor(p: IdlePredictor, observed: float) -> IdlePredictor:
    if observed < 0:
        raise ValueError("idle length must be non-negative")
    p.avg = (1 - p.alpha) * p.avg + p.alpha * observed
    return p


class RankContext:
    """What a policy may look at when deciding for one rank.

    ``pending[b]`` is the number of queued demand requests for bank ``b``;
    ``legal(kind, bank)`` tells whether a refresh could go out this cycle.
    """

    __slots__ = ("rank", "pending", "legal", "drain", "demand_ready", "refresh_in_flight", "rng")

    def __init__(self, rank: int, pending: Sequence[int], legal: Callable[[CmdKind, int], bool],
                 drain: bool, demand_ready: bool, refresh_in_flight: bool, rng: random.Random):
        self.rank = rank
        self.pending = pending
        self.legal = legal
        self.drain = drain
        self.demand_ready = demand_ready
        self.refresh_in_flight = refresh_in_flight
        self.rng = rng


# --------------------------------------------------------------------------
# decision functions


def schedule_refab(debts: DebtCounters, ctx: RankContext) -> Optional[RefreshAction]:
    """All-bank refresh as soon as a deadline has passed and the rank can take it."""
    if debts.debt[0] > 0 and ctx.legal(CmdKind.REFAB, -1):
        return RefreshAction(CmdKind.REFAB, ctx.rank)
    return None


def schedule_refpb_rr(debts: DebtCounters, next_bank: int, ctx: RankContext) -> Optional[RefreshAction]:
    """Strict round-robin per-bank refresh; a due refresh is deferred, never skipped."""
    if debts.debt[next_bank] > 0 and ctx.legal(CmdKind.REFPB, next_bank):
        return RefreshAction(CmdKind.REFPB, ctx.rank, next_bank)
    return None


def darp_step(debts: DebtCounters, owed: Sequence[int], ctx: RankContext,
              wrp_bank: Optional[int] = None) -> Optional[RefreshAction]:
    """One cycle of out-of-order per-bank refresh for a rank.

    ``owed`` lists banks that must be refreshed with priority: forced ones
    (debt at the postponement limit) first, then banks whose deadline came
    while they had no pending demand.  A write-drain pick (``wrp_bank``)
    comes next.  Otherwise demand goes first, and only when no demand
    command can issue is a random idle bank refreshed early.
    """
    debt = debts.debt
    for b in owed:
        if ctx.legal(CmdKind.REFPB, b):
            origin = Origin.FORCED if debt[b] >= MAX_REFRESH_SLACK else Origin.SCHEDULED
            return RefreshAction(CmdKind.REFPB, ctx.rank, b, origin)
    if owed and debt[owed[0]] >= MAX_REFRESH_SLACK:
        return None
    if wrp_bank is not None and ctx.legal(CmdKind.REFPB, wrp_bank):
        return RefreshAction(CmdKind.REFPB, ctx.rank, wrp_bank,
                             Origin.POSTPONED if debt[wrp_bank] > 0 else Origin.PULLED_IN)
    if ctx.demand_ready:
        return None
    pending = ctx.pending
    choices = [b for b in range(len(debt))
               if pending[b] == 0 and debt[b] > -MAX_REFRESH_SLACK and ctx.legal(CmdKind.REFPB, b)]
    if not choices:
        return None
    b = ctx.rng.choice(choices)
    return RefreshAction(CmdKind.REFPB, ctx.rank, b,
                         Origin.POSTPONED if debt[b] > 0 else Origin.PULLED_IN)


def wrp_select(pending: Sequence[int], debts: DebtCounters, refresh_in_flight: bool) -> Optional[int]:
    """Bank to refresh during a write drain: fewest queued requests, pull-in budget left."""
    if refresh_in_flight:
        return None
    best = None
    for b, n in enumerate(pending):
        if debts.debt[b] > -MAX_REFRESH_SLACK and (best is None or n < pending[best]):
            best = b
    return best


def elastic_delay(postponed: int, predicted_idle: float, trfc: int) -> float:
    """Idle time to wait before issuing a postponed all-bank refresh."""
    if postponed >= ELASTIC_URGENT:
        return 0
    return max(0.0, predicted_idle - trfc)


def elastic_schedule(now: int, debts: DebtCounters, predictor: IdlePredictor, t: TimingParams,
                     ctx: RankContext) -> Optional[RefreshAction]:
    """Postpone all-bank refreshes while the rank is busy; drain them into idle periods."""
    postponed = debts.debt[0]
    if postponed <= 0:
        return None
    if postponed >= MAX_REFRESH_SLACK:
        if ctx.legal(CmdKind.REFAB, -1):
            return RefreshAction(CmdKind.REFAB, ctx.rank, origin=Origin.FORCED)
        return None
    if predictor.idle_since is None:
        return None
    if now - predictor.idle_since < elastic_delay(postponed, predictor.avg, t.tRFCab):
        return None
    if ctx.legal(CmdKind.REFAB, -1):
        return RefreshAction(CmdKind.REFAB, ctx.rank, origin=Origin.POSTPONED)
    return None


# --------------------------------------------------------------------------
# policy objects


class RefreshPolicy:
    """Base class: holds debts and the activation-block table for every rank."""

    mode = "perbank"
    name = "base"

    def __init__(self, org: DramOrg, t: TimingParams, sarp: bool = False, seed: int = 0):
        self.org = org
        self.t = t
        self.sarp = sarp
        nb = org.banks_per_rank
        self.debts = [DebtCounters.for_rank(nb, t, self.mode) for _ in range(org.ranks_per_channel)]
        self.act_block = [[NOT_BLOCKED] * nb for _ in range(org.ranks_per_channel)]
        self.min_debt = 0
        self.max_debt = 0

    def advance(self, now: int, r: int, ctx_pending: Sequence[int]) -> None:
        for b in self.debts[r].advance(now):
            self.on_deadline(now, r, b, ctx_pending)
        self._track(r)

    def on_deadline(self, now: int, r: int, b: int, pending: Sequence[int]) -> None:
        pass

    def decide(self, now: int, ctx: RankContext) -> Optional[RefreshAction]:
        return None

    def issued(self, now: int, action: RefreshAction) -> None:
        d = self.debts[action.rank]
        if action.kind is CmdKind.REFAB:
            for b in range(len(d.debt)):
                d.refreshed(b)
        else:
            d.refreshed(action.bank)
        self._track(action.rank)

    def may_refresh(self, r: int) -> bool:
        """Cheap pre-check: False when :meth:`decide` would certainly return None."""
        return True

    def observe(self, now: int, r: int, rank_pending: int) -> None:
        """Called every evaluated cycle with the number of requests queued for rank ``r``."""

    def next_event(self, now: int) -> float:
        return min(d.earliest_deadline() for d in self.debts)

    def refresh_subarray_block(self, shadow_subarray: int) -> int:
        return shadow_subarray if self.sarp and self.org.subarrays_per_bank > 1 else BLOCK_BANK

    def _track(self, r: int) -> None:
        debt = self.debts[r].debt
        lo, hi = min(debt), max(debt)
        if lo < self.min_debt:
            self.min_debt = lo
        if hi > self.max_debt:
            self.max_debt = hi
        assert -MAX_REFRESH_SLACK <= lo and hi <= MAX_REFRESH_SLACK, (self.name, debt)


class NoRefresh(RefreshPolicy):
    mode = "none"
    name = "norefresh"

    def advance(self, now, r, ctx_pending):
        pass

    def may_refresh(self, r):
        return False

    def next_event(self, now):
        return NEVER


class AllBankRefresh(RefreshPolicy):
    """Baseline REFab: refresh on every tREFI, blocking the rank until it goes out."""

    mode = "allbank"
    name = "refab"

    def __init__(self, org, t, sarp=False, seed=0, shadow=None):
        super().__init__(org, t, sarp, seed)
        self.shadow = shadow

    def _block_rank(self, r: int, on: bool) -> None:
        row = self.act_block[r]
        for b in range(len(row)):
            if not on:
                row[b] = NOT_BLOCKED
            else:
                sub = self.shadow[r].subarray[b] if self.shadow else 0
                row[b] = self.refresh_subarray_block(sub)

    def advance(self, now, r, ctx_pending):
        super().advance(now, r, ctx_pending)
        if self.debts[r].debt[0] > 0:
            self._block_rank(r, True)

    def may_refresh(self, r):
        return self.debts[r].debt[0] > 0

    def decide(self, now, ctx):
        return schedule_refab(self.debts[ctx.rank], ctx)

    def issued(self, now, action):
        super().issued(now, action)
        self._block_rank(action.rank, self.debts[action.rank].debt[0] > 0)


class PerBankRoundRobin(RefreshPolicy):
    """Baseline REFpb: bank order fixed by the DRAM's internal round-robin counter."""

    mode = "perbank"
    name = "refpb"

    def __init__(self, org, t, sarp=False, seed=0, shadow=None):
        super().__init__(org, t, sarp, seed)
        self.shadow = shadow
        self.next_bank = [0] * org.ranks_per_channel

    def _update_block(self, r: int) -> None:
        row = self.act_block[r]
        for b in range(len(row)):
            row[b] = NOT_BLOCKED
        b = self.next_bank[r]
        if self.debts[r].debt[b] > 0:
            sub = self.shadow[r].subarray[b] if self.shadow else 0
            row[b] = self.refresh_subarray_block(sub)

    def advance(self, now, r, ctx_pending):
        super().advance(now, r, ctx_pending)
        self._update_block(r)

    def may_refresh(self, r):
        return self.debts[r].debt[self.next_bank[r]] > 0

    def decide(self, now, ctx):
        return schedule_refpb_rr(self.debts[ctx.rank], self.next_bank[ctx.rank], ctx)

    def issued(self, now, action):
        super().issued(now, action)
        r = action.rank
        self.next_bank[r] = (self.next_bank[r] + 1) % self.org.banks_per_rank
        self._update_block(r)


class Darp(RefreshPolicy):
    """Out-of-order per-bank refresh, optionally with write-refresh parallelization."""

    mode = "perbank"
    name = "darp"

    def __init__(self, org, t, sarp=False, seed=0, shadow=None, wrp=True):
        super().__init__(org, t, sarp, seed)
        self.shadow = shadow
        self.wrp = wrp
        # refreshes whose deadline found the bank idle: issued with priority, one per deadline
        self.scheduled = [[0] * org.banks_per_rank for _ in range(org.ranks_per_channel)]
        self.postponements = 0
        self._owed_cache: list[Optional[list[int]]] = [None] * org.ranks_per_channel

    def on_deadline(self, now, r, b, pending):
        debt = self.debts[r].debt[b]
        if pending[b] > 0 and debt < MAX_REFRESH_SLACK:
            self.postponements += 1
        else:
            self.scheduled[r][b] += 1

    def advance(self, now, r, ctx_pending):
        super().advance(now, r, ctx_pending)
        self._update_block(r)

    def _owed(self, r: int) -> list[int]:
        owed = self._owed_cache[r]
        if owed is None:
            owed = self._owed_cache[r] = self._compute_owed(r)
        return owed

    def _compute_owed(self, r: int) -> list[int]:
        debt = self.debts[r].debt
        sched = self.scheduled[r]
        forced = [b for b, d in enumerate(debt) if d >= MAX_REFRESH_SLACK]
        return forced + [b for b, n in enumerate(sched) if n and debt[b] < MAX_REFRESH_SLACK]

    def _update_block(self, r: int) -> None:
        self._owed_cache[r] = None
        row = self.act_block[r]
        debt = self.debts[r].debt
        for b in range(len(row)):
            if debt[b] >= MAX_REFRESH_SLACK:
                sub = self.shadow[r].subarray[b] if self.shadow else 0
                row[b] = self.refresh_subarray_block(sub)
            else:
                row[b] = NOT_BLOCKED

    def decide(self, now, ctx):
        r = ctx.rank
        debts = self.debts[r]
        wrp_bank = None
        if self.wrp and ctx.drain:
            wrp_bank = wrp_select(ctx.pending, debts, ctx.refresh_in_flight)
        return darp_step(debts, self._owed(r), ctx, wrp_bank)

    def issued(self, now, action):
        super().issued(now, action)
        r = action.rank
        sched = self.scheduled[r]
        b = action.bank
        if sched[b]:
            sched[b] = 0 if self.debts[r].debt[b] <= 0 else sched[b] - 1
        self._update_block(r)


class ElasticRefresh(RefreshPolicy):
    """All-bank refresh postponed into predicted idle periods (up to eight)."""

    mode = "allbank"
    name = "elastic"

    def __init__(self, org, t, sarp=False, seed=0, shadow=None):
        super().__init__(org, t, sarp, seed)
        self.shadow = shadow
        self.predictors = [IdlePredictor() for _ in range(org.ranks_per_channel)]
        self.due_idle = [False] * org.ranks_per_channel

    def observe(self, now, r, rank_pending):
        p = self.predictors[r]
        if rank_pending == 0:
            if p.idle_since is None:
                p.idle_since = now
        elif p.idle_since is not None:
            update_idle_predictor(p, now - p.idle_since)
            p.idle_since = None

    def on_deadline(self, now, r, b, pending):
        if b == 0 and sum(pending) == 0:
            self.due_idle[r] = True

    def advance(self, now, r, ctx_pending):
        super().advance(now, r, ctx_pending)
        forced = self.debts[r].debt[0] >= MAX_REFRESH_SLACK
        row = self.act_block[r]
        for b in range(len(row)):
            row[b] = BLOCK_BANK if forced else NOT_BLOCKED

    def may_refresh(self, r):
        return self.debts[r].debt[0] > 0

    def decide(self, now, ctx):
        r = ctx.rank
        debts = self.debts[r]
        if self.due_idle[r] and debts.debt[0] > 0 and ctx.legal(CmdKind.REFAB, -1):
            return RefreshAction(CmdKind.REFAB, r)
        return elastic_schedule(now, debts, self.predictors[r], self.t, ctx)

    def issued(self, now, action):
        super().issued(now, action)
        r = action.rank
        self.due_idle[r] = False
        forced = self.debts[r].debt[0] >= MAX_REFRESH_SLACK
        for b in range(len(self.act_block[r])):
            self.act_block[r][b] = BLOCK_BANK if forced else NOT_BLOCKED

    def next_event(self, now):
        nxt = super().next_event(now)
        for r, p in enumerate(self.predictors):
            postponed = self.debts[r].debt[0]
            if p.idle_since is not None and postponed > 0:
                t_issue = p.idle_since + elastic_delay(postponed, p.avg, self.t.tRFCab)
                if t_issue > now:
                    nxt = min(nxt, t_issue)
        return nxt


@dataclass(frozen=True)
class PolicySpec:
    name: str
    cls: type
    sarp: bool = False
    fgr: int = 1
    kwargs: dict = field(default_factory=dict)

    @property
    def mode(self) -> str:
        return self.cls.mode


POLICIES = {
    "norefresh": PolicySpec("norefresh", NoRefresh),
    "refab": PolicySpec("refab", AllBankRefresh),
    "refpb": PolicySpec("refpb", PerBankRoundRobin),
    "elastic": PolicySpec("elastic", ElasticRefresh),
    "darp_ooo": PolicySpec("darp_ooo", Darp, kwargs={"wrp": False}),
    "darp": PolicySpec("darp", Darp),
    "sarp_ab": PolicySpec("sarp_ab", AllBankRefresh, sarp=True),
    "sarp_pb": PolicySpec("sarp_pb", PerBankRoundRobin, sarp=True),
    "dsarp": PolicySpec("dsarp", Darp, sarp=True),
    "fgr2x": PolicySpec("fgr2x", AllBankRefresh, fgr=2),
    "fgr4x": PolicySpec("fgr4x", AllBankRefresh, fgr=4),
}

EVALUATED_POLICIES = ("refab", "refpb", "elastic", "darp", "sarp_ab", "sarp_pb", "dsarp", "fgr2x", "fgr4x")


def policy_spec(name: str) -> PolicySpec:
    try:
        return POLICIES[name.lower()]
    except KeyError:
        raise ValueError(f"unknown policy {name!r}; choose from {', '.join(POLICIES)}") from None
