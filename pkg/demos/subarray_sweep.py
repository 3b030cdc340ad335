"""
How SARP's gain depends on subarrays and on tFAW/tRRD
=====================================================

Subarray-parallel refresh (SARP) lets a bank serve requests from other
subarrays while one subarray refreshes.  With a single subarray there is
nothing to overlap, so the gain over per-bank refresh is exactly zero; more
subarrays make conflicts with the refreshing one rarer.  Looser activation
windows (larger tFAW/tRRD) leave less room for extra activations during a
refresh, so the gain shrinks.

Sweeps are short here (40k cycles, two intensive mixes).  The CSV text that
``run_sweep`` returns is plot-ready: one row per (value, workload, policy).
"""
from refsim import ExperimentConfig, SweepSpec, gen_workload_mixes, run_sweep
from refsim.experiments import mean_gain_by_value

mixes = gen_workload_mixes(seed=0, per_category=2, categories=(1.0,))
cfg = ExperimentConfig(density_gbit=32, cycles=40_000)

# %%
# Subarrays per bank, SARPpb against REFpb.
_, rows = run_sweep(SweepSpec("subarrays", (1, 2, 8, 64)), cfg, mixes)
for value, gain in mean_gain_by_value(rows, "sarp_pb"):
    print(f"subarrays {value:>3}: SARPpb gain {gain:+.2%}")

# %%
# tFAW/tRRD pairs at 8 subarrays per bank.
_, rows = run_sweep(SweepSpec("tfaw", ((5, 1), (20, 4), (30, 6))), cfg, mixes)
for value, gain in mean_gain_by_value(rows, "sarp_pb"):
    print(f"tFAW/tRRD {value:>5}: SARPpb gain {gain:+.2%}")
