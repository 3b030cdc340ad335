"""
Refresh timing across densities, retention times and FGR modes
===============================================================

Prints the refresh-related timing that ``derive_timing`` builds for each
supported device density, and the tFAW/tRRD values that apply while a
refresh is in flight under subarray-parallel refresh (SARP).
"""
from refsim import CmdKind, CurrentParams, FgrMode, RefreshMode, derive_timing, sarp_scaled_constraints

# %%
# All-bank timing, in nanoseconds and in 1.5 ns controller cycles.
# tREFI halves when the retention time halves; tRFC grows with density.
print(f"{'density':>8} {'ret':>4} {'tREFI ns':>9} {'tREFI':>6} {'tRFCab ns':>10} {'tRFCab':>7} {'tRFCpb':>7}")
for density in (8, 16, 32):
    for retention in (32, 64):
        t = derive_timing(density, retention, RefreshMode.ALL_BANK)
        print(f"{density:>6}Gb {retention:>3}ms {t.trefi_ns:>9.3f} {t.tREFI:>6} "
              f"{t.trfc_ab_ns:>10.1f} {t.tRFCab:>7} {t.tRFCpb:>7}")

# %%
# Fine-granularity refresh divides tREFI by 2 or 4 but tRFC only by
# 1.35 or 1.63, so the rank spends a larger share of time refreshing.
for fgr in (FgrMode.OFF, FgrMode.X2, FgrMode.X4):
    t = derive_timing(32, 32, RefreshMode.ALL_BANK, fgr)
    share = t.tRFCab / t.tREFI
    print(f"FGR {fgr.name:>3}: tREFI={t.tREFI:>5} tRFCab={t.tRFCab:>4}  refresh share {share:.1%}")

# %%
# With SARP, a refresh draws current while activations continue in other
# subarrays, so the power-limiting windows stretch.  Base (tFAW, tRRD) = (20, 4).
t = derive_timing(8, 32)
c = CurrentParams()
print("SARP all-bank (tFAW, tRRD):", sarp_scaled_constraints(t, c, CmdKind.REFAB))
print("SARP per-bank (tFAW, tRRD):", sarp_scaled_constraints(t, c, CmdKind.REFPB))
