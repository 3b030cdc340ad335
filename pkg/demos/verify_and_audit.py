"""
Checking a run with the command verifier and the retention audit
================================================================

Every simulation writes a command log and a refresh log.  The verifier
replays the command log against an independent copy of the DDR timing rules;
the audit checks that every bank (and every row group in it) is refreshed
in time.  This script runs DSARP, checks both logs, then tampers with each log
to show what a violation report looks like.
"""
import tempfile
from pathlib import Path

from refsim.cli import main

out = Path(tempfile.mkdtemp(prefix="refsim-demo-"))

# %%
# A four-core workload of intensive synthetic traces, 40k cycles of DSARP.
cfg_file = out / "exp.cfg"
cfg_file.write_text("policy = dsarp\ndensity_gbit = 32\ncycles = 40000\n"
                    "[cores]\ncount = 4\n[workload]\nmpki = 30\ntrace_len = 4000\n")
main(["run", str(cfg_file), "-o", str(out / "run")])

# %%
# Both checks pass on the untouched logs (exit status 0).
print("verify exit:", main(["verify", str(out / "run" / "commands.log")]))
print("audit exit:", main(["audit", str(out / "run" / "refresh.log")]))

# %%
# Give the second ACT to channel 0, rank 0 the cycle of the first one: the
# log goes out of order and tRRD breaks, so verify exits with status 1.
lines = (out / "run" / "commands.log").read_text().splitlines()
acts = [i for i, ln in enumerate(lines) if ln.split()[1:4] == ["ACT", "0", "0"]]
a, b = acts[0], acts[1]
lines[b] = lines[a].split()[0] + " " + " ".join(lines[b].split()[1:])
(out / "bad_commands.log").write_text("\n".join(lines[:b + 1]) + "\n")
print("tampered verify exit:", main(["verify", str(out / "bad_commands.log")]))

# %%
# Drop every refresh of channel 0, rank 0, bank 3: its debt passes the
# postponement limit and the audit reports it.
kept = [ln for ln in (out / "run" / "refresh.log").read_text().splitlines()
        if ln.startswith("#") or ln.split()[2:5] != ["0", "0", "3"]]
(out / "bad_refresh.log").write_text("\n".join(kept) + "\n")
print("tampered audit exit:", main(["audit", str(out / "bad_refresh.log")]))
