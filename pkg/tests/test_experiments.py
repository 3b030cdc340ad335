import math
from dataclasses import replace

import pytest

import refsim.experiments as ex
from refsim.core import TraceSpec
from refsim.dram import ConfigError, DramOrg
from refsim.experiments import (
    ExperimentConfig, SweepSpec, TracePool, VerificationError, Workload, gen_workload_mixes, load_config,
    mean_gain_by_value, parse_config, run_matrix, run_single, run_sweep, source_mpki,
)
from refsim.verify import Violation

SMALL = Workload("small", tuple(TraceSpec(mpki=30, seed=i, length=2000) for i in range(4)))
CFG = ExperimentConfig(cycles=12000, workload=SMALL, core_count=4)


# ------------------------------------------------------------------ config


def test_empty_config_defaults():
    cfg = parse_config("")
    assert cfg.core_count == 8 and cfg.policy == "refab" and cfg.density_gbit == 8
    assert (cfg.org.channels, cfg.org.ranks_per_channel, cfg.org.banks_per_rank) == (2, 2, 8)
    assert cfg.cycles == 2_000_000 and cfg.retention_ms == 32
    assert len(cfg.workload.sources) == 8


def test_policy_selection():
    assert parse_config("policy = dsarp").spec.name == "dsarp"


def test_bad_density_reports_location():
    with pytest.raises(ConfigError, match=r"cfg\.ini:2"):
        parse_config("# comment\ndensity_gbit = 12\n", "cfg.ini")


@pytest.mark.parametrize("text,where", [
    ("bogus = 1", ":1"), ("[nope]", ":1"), ("policy dsarp", ":1"), ("[dram]\ntfaw = x", ":2"),
    ("policy = warp", ":1"), ("[controller]\nlow_watermark = 60", ":2"),
])
def test_config_errors(text, where):
    with pytest.raises(ConfigError, match=where):
        parse_config(text)


def test_full_config(tmp_path):
    (tmp_path / "power.txt").write_text("IDD0 = 60\n")
    (tmp_path / "a.trace").write_text("3 0x40\n5 0x1000 0x2000\n")
    cfg_file = tmp_path / "exp.cfg"
    cfg_file.write_text("""
policy = darp
density_gbit = 32
cycles = 5000
seed = 3
[dram]
subarrays_per_bank = 16
tfaw = 25
trrd = 5
[cores]
count = 2
mshrs = 4
[controller]
high_watermark = 40
[workload]
traces = a.trace
[power]
file = power.txt
VDD = 1.35
""")
    cfg = load_config(cfg_file)
    assert (cfg.policy, cfg.density_gbit, cfg.cycles, cfg.seed) == ("darp", 32, 5000, 3)
    assert cfg.org.subarrays_per_bank == 16 and cfg.cores.mshrs == 4 and cfg.queues.high_watermark == 40
    t = cfg.timing()
    assert (t.tFAW, t.tRRD) == (25, 5)
    assert cfg.workload.sources == (str(tmp_path / "a.trace"),) * 2
    assert cfg.power.IDD0 == 60 and cfg.power.VDD == 1.35


def test_no_refresh_and_full_length_flags():
    cfg = parse_config("no_refresh = yes\nfull_length = true")
    assert cfg.policy == "norefresh" and cfg.cycles == 256_000_000


def test_generated_workload_from_mpki_list():
    cfg = parse_config("[cores]\ncount = 3\n[workload]\nmpki = 1, 40\ntrace_len = 100")
    assert [s.mpki for s in cfg.workload.sources] == [1.0, 40.0, 1.0]
    assert len({s.seed for s in cfg.workload.sources}) == 3


# ------------------------------------------------------------------ mixes


def test_mix_categories():
    mixes = gen_workload_mixes(seed=1, per_category=2)
    assert len(mixes) == 10
    for m in mixes:
        n_int = sum(source_mpki(s) >= 10 for s in m.sources)
        assert n_int == round(m.category * 8) and len(m.sources) == 8
    assert all(source_mpki(s) >= 10 for m in mixes if m.category == 1.0 for s in m.sources)
    assert all(source_mpki(s) < 10 for m in mixes if m.category == 0.0 for s in m.sources)


def test_mixes_deterministic():
    assert gen_workload_mixes(7, 3) == gen_workload_mixes(7, 3)
    assert gen_workload_mixes(7, 3) != gen_workload_mixes(8, 3)


def test_mix_pool_too_small():
    pool = TracePool((TraceSpec(mpki=20),), (TraceSpec(mpki=1),))
    with pytest.raises(ConfigError):
        gen_workload_mixes(0, 1, cores=8, pool=pool)


def test_mix_pool_mislabelled():
    pool = TracePool((TraceSpec(mpki=2),) * 8, (TraceSpec(mpki=1),) * 8)
    with pytest.raises(ConfigError):
        gen_workload_mixes(0, 1, pool=pool)


# ------------------------------------------------------------- single runs


def test_run_single_deterministic(tmp_path):
    a = run_single(CFG.with_(policy="dsarp", output_dir=str(tmp_path / "a")))
    run_single(CFG.with_(policy="dsarp", output_dir=str(tmp_path / "b")))
    assert a.ok and a.files
    for name in ("commands.log", "refresh.log", "latency.csv", "stats.csv", "cores.csv", "ranks.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_no_refresh_beats_refab():
    refab = run_single(CFG)
    noref = run_single(CFG.with_(policy="norefresh"))
    assert noref.ws > refab.ws
    assert noref.refab == noref.refpb == 0


def test_higher_density_refab_slower():
    assert run_single(CFG.with_(density_gbit=32)).ws < run_single(CFG).ws


def test_refresh_counts_match_deadlines():
    o = run_single(CFG.with_(policy="refpb"))
    # 2 channels x 2 ranks x 8 banks, each due (cycles - (b+1)*tREFIpb) / tREFI times
    t = CFG.with_(policy="refpb").timing()
    due = sum(len(range((b + 1) * t.tREFIpb, CFG.cycles + 1, t.tREFI)) for b in range(8)) * 4
    assert abs(o.refpb - due) <= 4 * 8


def test_run_single_strict_raises(monkeypatch, tmp_path):
    monkeypatch.setattr(ex, "verify_command_log", lambda *a, **k: [Violation(5, "tRRD")])
    with pytest.raises(VerificationError):
        run_single(CFG.with_(output_dir=str(tmp_path)))
    assert (tmp_path / "stats.csv").exists()
    o = run_single(CFG, strict=False)
    assert not o.ok and len(o.violations) == 1


def test_run_single_needs_traces():
    with pytest.raises(ConfigError):
        run_single(ExperimentConfig(cycles=100, core_count=1))


# ------------------------------------------------------------------ matrix


def three_workloads():
    return [Workload(f"w{k}", tuple(TraceSpec(mpki=15 + 10 * k, seed=10 * k + i, length=1500) for i in range(4)))
            for k in range(3)]


def test_matrix_self_improvement_zero():
    res = run_matrix(CFG, ["refab"], [SMALL])
    row = next(r for r in res.rows if r[0] == "small" and r[1] == "refab")
    assert float(row[6]) == 0.0 and row[8] == "ok"


def test_matrix_gmean_matches_hand_oracle():
    res = run_matrix(CFG, ["darp"], three_workloads())
    ratios = [res.ws(f"w{k}", "darp") / res.ws(f"w{k}", "refpb") for k in range(3)]
    oracle = (ratios[0] * ratios[1] * ratios[2]) ** (1 / 3) - 1
    assert res.gmean_gain("darp", "refpb") == pytest.approx(oracle, rel=1e-12)
    summary = next(r for r in res.rows if r[0] == "gmean" and r[1] == "darp")
    assert float(summary[7]) == pytest.approx(oracle, rel=1e-12)
    assert float(summary[2]) == pytest.approx(math.prod(res.ws(f"w{k}", "darp") for k in range(3)) ** (1 / 3))


def test_matrix_reports_failed_cells(monkeypatch):
    real = ex.verify_command_log

    def fake(log, t, org, sarp=False, refresh_phase=None):
        return [Violation(1, "tRRD")] if sarp else real(log, t, org, sarp, refresh_phase)

    monkeypatch.setattr(ex, "verify_command_log", fake)
    res = run_matrix(CFG, ["sarp_pb"], [SMALL])
    assert ("small", "sarp_pb") in res.errors and ("small", "sarp_pb") not in res.outcomes
    row = next(r for r in res.rows if r[1] == "sarp_pb" and r[0] == "small")
    assert row[2] == "" and row[8].startswith("failed")
    assert not any(r[0] == "gmean" and r[1] == "sarp_pb" for r in res.rows)


def test_matrix_parallel_equals_serial():
    serial = run_matrix(CFG, ["darp"], [SMALL], jobs=1).csv()
    parallel = run_matrix(CFG, ["darp"], [SMALL], jobs=2).csv()
    assert serial == parallel


# ------------------------------------------------------------------- sweeps


def test_sweep_spec_validation():
    assert SweepSpec.parse("tfaw", "5/1,30/6").values == ((5, 1), (30, 6))
    with pytest.raises(ConfigError):
        SweepSpec.parse("tfaw", "7/1")
    with pytest.raises(ConfigError):
        SweepSpec("speed", (1,))
    with pytest.raises(ConfigError):
        SweepSpec.parse("subarrays", "3")


def test_single_subarray_gain_exactly_zero():
    text, rows = run_sweep(SweepSpec("subarrays", (1,)), CFG, [SMALL])
    assert rows[0][7] == "0.0" and rows[0][8] == "ok"
    assert text.splitlines()[0].startswith("axis,value,workload,policy")


def test_fgr_sweep_uses_refab_baseline():
    _, rows = run_sweep(SweepSpec("fgr", ("off", "2x")), CFG, [SMALL])
    assert [(r[1], r[3], r[5]) for r in rows] == [("off", "refab", "refab"), ("2x", "fgr2x", "refab")]
    assert float(rows[0][7]) == 0.0
    assert mean_gain_by_value(rows, "refab") == [("off", 0.0)]


def test_intensity_sweep_filters_workloads():
    mixes = [replace(SMALL, name="a", category=1.0), replace(SMALL, name="b", category=0.0)]
    _, rows = run_sweep(SweepSpec("intensity", (1.0,)), CFG, mixes)
    assert {r[2] for r in rows} == {"a"}


def test_dram_org_density():
    assert CFG.with_(density_gbit=32).dram_org == replace(DramOrg(), density_gbit=32)
