"""
Comparing refresh policies on one memory-intensive mix
======================================================

Runs an 8-core mix of memory-intensive synthetic traces under every refresh
policy at 32 Gb and prints weighted speedup (WS), harmonic speedup (HS),
maximum slowdown (MS) and energy per access.  Every run is checked by the
command-log verifier and the retention audit before its numbers are used.

The run is short (60k controller cycles) so the script finishes in about a
minute; longer runs give steadier numbers.
"""
from refsim import ExperimentConfig, gen_workload_mixes, run_matrix

# %%
# Draw one mix whose eight members are all memory intensive (MPKI >= 10).
mix = gen_workload_mixes(seed=0, per_category=1, categories=(1.0,))[0]
print("mix", mix.name, "with", len(mix.sources), "traces")

# %%
# ``run_matrix`` adds the REFab and REFpb baselines, normalizes every cell
# to both, and raises no exception on a bad cell: it marks it failed instead.
cfg = ExperimentConfig(density_gbit=32, cycles=60_000)
policies = ["elastic", "darp", "sarp_ab", "sarp_pb", "dsarp", "fgr2x", "fgr4x", "norefresh"]
res = run_matrix(cfg, policies, [mix])

# %%
# One line per policy.  Gains are relative to per-bank refresh (REFpb).
print(f"{'policy':>10} {'WS':>6} {'HS':>6} {'MS':>6} {'nJ/access':>10} {'vs REFpb':>9}")
for row in res.rows:
    wl, policy, ws, hs, ms, epa, _, vs_pb, status = row
    if status != "ok":
        continue
    print(f"{policy:>10} {float(ws):6.3f} {float(hs):6.3f} {float(ms):6.2f} {float(epa):10.3f} "
          f"{float(vs_pb):+9.1%}")
if res.errors:
    print("failed cells:", res.errors)
