import random

import pytest

from refsim.dram import MAX_REFRESH_SLACK, CmdKind, DramOrg, derive_timing
from refsim.policies import (
    BLOCK_BANK, NOT_BLOCKED, AllBankRefresh, Darp, DebtCounters, ElasticRefresh, IdlePredictor, Origin,
    PerBankRoundRobin, RankContext, RefreshAction, darp_step, elastic_delay, elastic_schedule, policy_spec,
    schedule_refab, schedule_refpb_rr, update_idle_predictor, wrp_select,
)

ORG = DramOrg()
T = derive_timing(8, 32, "perbank")
TAB = derive_timing(8, 32, "allbank")


def ctx(pending=None, legal=True, drain=False, demand_ready=False, in_flight=False, seed=0):
    pending = pending if pending is not None else [0] * 8
    probe = legal if callable(legal) else (lambda kind, bank: legal)
    return RankContext(0, pending, probe, drain, demand_ready, in_flight, random.Random(seed))


def debts(values):
    return DebtCounters(list(values), [0] * len(values), T.tREFI)


# ------------------------------------------------------------------ REFab


def test_refab_at_deadline():
    d = DebtCounters.for_rank(8, TAB, "allbank")
    assert schedule_refab(d, ctx()) is None                 # before the first deadline
    d.advance(TAB.tREFI - 1)
    assert schedule_refab(d, ctx()) is None
    d.advance(TAB.tREFI)
    assert schedule_refab(d, ctx()) == RefreshAction(CmdKind.REFAB, 0)


def test_refab_deferred_never_dropped():
    p = AllBankRefresh(ORG, TAB)
    p.advance(TAB.tREFI, 0, [0] * 8)
    assert p.decide(TAB.tREFI, ctx(legal=False)) is None
    assert p.debts[0].debt[0] == 1
    assert all(b == BLOCK_BANK for b in p.act_block[0])       # no new ACTs until it goes out
    a = p.decide(TAB.tREFI + 30, ctx())
    assert a is not None and a.kind is CmdKind.REFAB
    p.issued(TAB.tREFI + 30, a)
    assert p.debts[0].debt == [0] * 8
    assert all(b == NOT_BLOCKED for b in p.act_block[0])


# ------------------------------------------------------------- REFpb RR


def test_refpb_round_robin_and_wrap():
    p = PerBankRoundRobin(ORG, T)
    order = []
    for _ in range(9):
        now = p.debts[0].earliest_deadline()
        p.advance(now, 0, [0] * 8)
        a = p.decide(now, ctx())
        assert a is not None and a.kind is CmdKind.REFPB
        order.append(a.bank)
        p.issued(now, a)
    assert order == [0, 1, 2, 3, 4, 5, 6, 7, 0]


def test_refpb_deferred_while_in_flight():
    d = DebtCounters.for_rank(8, T, "perbank")
    d.advance(T.tREFIpb)
    assert schedule_refpb_rr(d, 0, ctx(legal=False)) is None
    assert d.debt[0] == 1
    assert schedule_refpb_rr(d, 0, ctx()) == RefreshAction(CmdKind.REFPB, 0, 0)


def test_refpb_waits_for_its_bank():
    d = debts([0, 1, 0, 0, 0, 0, 0, 0])
    assert schedule_refpb_rr(d, 0, ctx()) is None


def test_debt_counter_deadlines():
    d = DebtCounters.for_rank(8, T, "perbank")
    assert d.next_deadline == [(b + 1) * T.tREFIpb for b in range(8)]
    assert d.advance(2 * T.tREFIpb) == [0, 1]
    assert d.debt[:3] == [1, 1, 0]


# ------------------------------------------------------------------- DARP


def test_darp_postpones_busy_bank():
    p = Darp(ORG, T)
    pending = [0, 0, 0, 0, 2, 0, 0, 0]
    p.debts[0].debt[4] = 2
    p.debts[0].next_deadline[4] = 0
    p.advance(0, 0, pending)
    assert p.debts[0].debt[4] == 3
    assert p.postponements == 1
    assert p.decide(0, ctx(pending, demand_ready=True)) is None


def test_darp_pulls_in_idle_bank():
    pending = [1, 1, 1, 0, 1, 1, 1, 1]
    a = darp_step(debts([0] * 8), [], ctx(pending))
    assert a == RefreshAction(CmdKind.REFPB, 0, 3, Origin.PULLED_IN)


def test_darp_demand_first():
    assert darp_step(debts([0] * 8), [], ctx(demand_ready=True)) is None


def test_darp_forced_at_limit():
    d = debts([0, 0, 0, 0, 0, MAX_REFRESH_SLACK, 0, 0])
    a = darp_step(d, [5], ctx([0, 0, 0, 0, 0, 3, 0, 0], demand_ready=True))
    assert a == RefreshAction(CmdKind.REFPB, 0, 5, Origin.FORCED)


def test_darp_forced_blocks_activations():
    p = Darp(ORG, T)
    p.debts[0].debt[6] = MAX_REFRESH_SLACK - 1
    p.debts[0].next_deadline[6] = 0
    p.advance(0, 0, [0, 0, 0, 0, 0, 0, 4, 0])
    assert p.debts[0].debt[6] == MAX_REFRESH_SLACK
    assert p.act_block[0][6] == BLOCK_BANK
    a = p.decide(0, ctx([0, 0, 0, 0, 0, 0, 4, 0], demand_ready=True))
    assert a.bank == 6 and a.origin is Origin.FORCED


def test_darp_forced_with_sarp_blocks_only_subarray():
    from refsim.dram import ShadowCounters
    shadow = [ShadowCounters.for_rank(ORG) for _ in range(2)]
    shadow[0].subarray[6] = 3
    p = Darp(ORG, T, sarp=True, shadow=shadow)
    p.debts[0].debt[6] = MAX_REFRESH_SLACK
    p.advance(0, 0, [0] * 8)
    assert p.act_block[0][6] == 3


def test_darp_idle_deadline_refreshed_with_priority():
    p = Darp(ORG, T)
    p.advance(T.tREFIpb * 3, 0, [0] * 8)          # banks 0..2 due, all idle
    a = p.decide(T.tREFIpb * 3, ctx([0] * 8, demand_ready=True))
    assert a is not None and a.bank == 0 and a.origin is Origin.SCHEDULED


def test_darp_random_pick_deterministic():
    picks = [darp_step(debts([0] * 8), [], ctx(seed=11)).bank for _ in range(3)]
    assert len(set(picks)) == 1


def test_darp_pull_in_budget():
    d = debts([-MAX_REFRESH_SLACK] * 8)
    assert darp_step(d, [], ctx()) is None


# -------------------------------------------------------------------- WRP


def test_wrp_lowest_demand():
    assert wrp_select([5, 0, 2, 3, 4, 6, 7, 8], debts([0] * 8), False) == 1


def test_wrp_budget_exhausted():
    assert wrp_select([0] * 8, debts([-MAX_REFRESH_SLACK] * 8), False) is None


def test_wrp_refresh_in_flight():
    assert wrp_select([0] * 8, debts([0] * 8), True) is None


def test_wrp_used_by_darp_only_when_draining():
    p = Darp(ORG, T)
    pending = [5, 0, 2, 3, 4, 6, 7, 8]
    assert p.decide(0, ctx(pending, drain=False, demand_ready=True)) is None
    a = p.decide(0, ctx(pending, drain=True, demand_ready=True))
    assert a.bank == 1 and a.origin is Origin.PULLED_IN
    q = Darp(ORG, T, wrp=False)
    assert q.decide(0, ctx(pending, drain=True, demand_ready=True)) is None


# ---------------------------------------------------------------- elastic


def test_elastic_waits_predicted_gap():
    pred = IdlePredictor(avg=2 * TAB.tRFCab, idle_since=1000)
    d = debts([1] * 8)
    assert elastic_delay(1, pred.avg, TAB.tRFCab) == TAB.tRFCab
    assert elastic_schedule(1000 + TAB.tRFCab - 1, d, pred, TAB, ctx()) is None
    a = elastic_schedule(1000 + TAB.tRFCab, d, pred, TAB, ctx())
    assert a is not None and a.kind is CmdKind.REFAB


def test_elastic_forced_at_eight():
    pred = IdlePredictor(avg=1e9, idle_since=None)
    a = elastic_schedule(5, debts([MAX_REFRESH_SLACK] * 8), pred, TAB, ctx())
    assert a.origin is Origin.FORCED


def test_elastic_nothing_owed():
    assert elastic_schedule(5, debts([0] * 8), IdlePredictor(idle_since=0), TAB, ctx()) is None


def test_elastic_busy_rank_postpones():
    assert elastic_schedule(5, debts([3] * 8), IdlePredictor(idle_since=None), TAB, ctx()) is None


def test_elastic_policy_observe_and_issue():
    p = ElasticRefresh(ORG, TAB)
    p.observe(0, 0, 4)
    p.observe(100, 0, 0)       # idle from 100
    p.observe(900, 0, 2)       # idle period of 800
    assert p.predictors[0].avg == pytest.approx(100.0)
    p.advance(TAB.tREFI, 0, [1] * 8)
    p.observe(TAB.tREFI, 0, 0)
    assert p.decide(TAB.tREFI, ctx()) is not None      # predicted idle 100 < tRFC: no wait


def test_idle_predictor_ewma():
    p = update_idle_predictor(IdlePredictor(), 800)
    assert p.avg == 100.0
    for _ in range(5):
        update_idle_predictor(p, 100.0)
    assert p.avg == 100.0
    with pytest.raises(ValueError):
        update_idle_predictor(p, -1)


# ---------------------------------------------------------------- catalogue


@pytest.mark.parametrize("name,sarp,fgr,mode", [
    ("refab", False, 1, "allbank"), ("refpb", False, 1, "perbank"), ("dsarp", True, 1, "perbank"),
    ("sarp_ab", True, 1, "allbank"), ("fgr4x", False, 4, "allbank"), ("norefresh", False, 1, "none"),
])
def test_policy_catalogue(name, sarp, fgr, mode):
    s = policy_spec(name.upper())
    assert (s.sarp, s.fgr, s.mode) == (sarp, fgr, mode)


def test_unknown_policy():
    with pytest.raises(ValueError):
        policy_spec("magic")
