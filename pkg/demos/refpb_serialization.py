"""
Per-bank refresh occupies a rank for longer than all-bank refresh
=================================================================

Per-bank refreshes in one rank cannot overlap, and each takes tRFCab / 2.3.
Refreshing all eight banks one after another therefore keeps the rank busy
for 8 / 2.3 = 3.48 times as long as a single all-bank refresh.  This script
streams reads into a single bank and measures the refresh-busy time of one
eight-bank REFpb round directly from the refresh log.
"""
import random

from refsim import DramOrg, derive_timing, policy_spec, simulate
from refsim.core import TraceRecord
from refsim.dram import DecodedAddr, encode_address

org = DramOrg()
cycles = 40_000

# %%
# Back-to-back reads to random rows of channel 0, rank 0, bank 0.
rng = random.Random(1)
trace = [TraceRecord(0, encode_address(DecodedAddr(0, 0, 0, rng.randrange(org.rows_per_bank),
                                                   rng.randrange(org.columns_per_row), 0), org))
         for _ in range(20_000)]

# %%
# Run per-bank and all-bank refresh at 8 Gb.
for name in ("refpb", "refab"):
    spec = policy_spec(name)
    t = derive_timing(8, 32, spec.mode)
    res = simulate(org, t, spec, [trace], cycles)
    ch = res.channels[0]
    refs = [r for r in ch.refresh_log if r.rank == 0]
    busy = sum(r.end - r.cycle for r in refs)
    print(f"{name}: IPC {res.ipc[0]:.3f}, {len(refs)} refreshes on rank 0, {busy} refresh-busy cycles")
    if name == "refpb":
        rounds = len(refs) // 8
        per_round = sum(r.end - r.cycle for r in refs[:rounds * 8]) / rounds
        tab = derive_timing(8, 32, "allbank").tRFCab
        print(f"  busy per 8-bank round {per_round:.0f} cycles = {per_round / tab:.3f} x tRFCab "
              f"(8/2.3 = {8 / 2.3:.3f})")
        overlaps = sum(a.end > b.cycle for a, b in zip(refs, refs[1:]))
        print(f"  overlapping REFpb pairs in the rank: {overlaps}")
