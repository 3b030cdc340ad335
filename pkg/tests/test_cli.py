import csv
import io
import json
import subprocess
import sys

import pytest

from refsim.cli import main
from refsim.core import read_trace, trace_mpki

CONFIG = """
policy = dsarp
density_gbit = 16
cycles = 8000
[cores]
count = 2
[workload]
mpki = 25
trace_len = 1500
"""


@pytest.fixture
def cfg_file(tmp_path):
    p = tmp_path / "exp.cfg"
    p.write_text(CONFIG)
    return p


def rows(text):
    return list(csv.DictReader(io.StringIO(text)))


def test_run_verify_audit(tmp_path, cfg_file, capsys):
    out = tmp_path / "out"
    assert main(["run", str(cfg_file), "-o", str(out)]) == 0
    stats = rows(capsys.readouterr().out)
    assert stats[0]["policy"] == "dsarp" and stats[0]["violations"] == "0"
    assert main(["verify", str(out / "commands.log")]) == 0
    assert "0 violations" in capsys.readouterr().out
    assert main(["audit", str(out / "refresh.log")]) == 0
    assert "0 retention violations" in capsys.readouterr().out


def test_run_overrides(cfg_file, capsys):
    assert main(["run", str(cfg_file), "--policy", "refpb", "--density-gbit", "8", "--cycles", "3000"]) == 0
    r = rows(capsys.readouterr().out)[0]
    assert (r["policy"], r["density_gbit"], r["cycles"]) == ("refpb", "8", "3000")


def test_verify_flags_tampered_log(tmp_path, cfg_file, capsys):
    out = tmp_path / "out"
    main(["run", str(cfg_file), "-o", str(out)])
    lines = (out / "commands.log").read_text().splitlines()
    acts = [i for i, ln in enumerate(lines) if ln.split()[1:4] == ["ACT", "0", "0"]]
    a, b = acts[0], acts[1]
    # two ACTs to channel 0, rank 0 on one cycle break the command bus and tRRD
    lines[b] = lines[a].split()[0] + " " + " ".join(lines[b].split()[1:])
    bad = tmp_path / "bad.log"
    bad.write_text("\n".join(lines[:b + 1]) + "\n")
    capsys.readouterr()
    assert main(["verify", str(bad)]) == 1
    assert "violations" in capsys.readouterr().out


def test_audit_flags_missing_refreshes(tmp_path, cfg_file):
    out = tmp_path / "out"
    main(["run", str(cfg_file), "--cycles", "40000", "-o", str(out)])
    lines = (out / "refresh.log").read_text().splitlines()
    kept = [ln for ln in lines if ln.startswith("#") or ln.split()[2:5] != ["0", "0", "3"]]
    bad = tmp_path / "bad.log"
    bad.write_text("\n".join(kept) + "\n")
    assert main(["audit", str(bad)]) == 1


def test_log_without_header(tmp_path):
    p = tmp_path / "x.log"
    p.write_text("0 ACT 0 0 0 1 0\n")
    assert main(["verify", str(p)]) == 2


def test_bad_config_exit_code(tmp_path, capsys):
    p = tmp_path / "bad.cfg"
    p.write_text("density_gbit = 12\n")
    assert main(["run", str(p)]) == 2
    assert "bad.cfg:1" in capsys.readouterr().err


def test_missing_file_exit_code(tmp_path):
    assert main(["verify", str(tmp_path / "nope.log")]) == 2


def test_gen_trace(tmp_path):
    p = tmp_path / "t.trace"
    assert main(["gen-trace", "--mpki", "12", "--len", "4000", "--seed", "3", "-o", str(p)]) == 0
    recs = read_trace(p)
    assert len(recs) == 4000 and trace_mpki(recs) == pytest.approx(12, rel=0.05)


def test_gen_mixes_and_matrix(tmp_path, capsys):
    mixes = tmp_path / "mixes.json"
    assert main(["gen-mixes", "--per-category", "1", "--cores", "2", "--seed", "4", "-o", str(mixes)]) == 0
    data = json.loads(mixes.read_text())
    assert len(data) == 5 and all(len(m["members"]) == 2 for m in data)
    one = tmp_path / "one.json"
    for m in data[-1]["members"]:
        m["length"] = 1000
    one.write_text(json.dumps(data[-1:]))
    out = tmp_path / "matrix.csv"
    assert main(["matrix", "--mixes", str(one), "--policies", "darp", "--cycles", "6000",
                 "--csv", str(out)]) == 0
    table = rows(out.read_text())
    assert {r["policy"] for r in table} == {"refab", "refpb", "darp"}
    assert any(r["workload"] == "gmean" for r in table)


def test_sweep_cli(cfg_file, capsys):
    assert main(["sweep", "subarrays", str(cfg_file), "--values", "1,8", "--cycles", "6000"]) == 0
    table = rows(capsys.readouterr().out)
    assert [r["value"] for r in table] == ["1", "8"]
    assert float(table[0]["gain"]) == 0.0


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "refsim", "--help"], capture_output=True, text=True)
    assert r.returncode == 0
    for sub in ("run", "matrix", "sweep", "gen-trace", "gen-mixes", "verify", "audit"):
        assert sub in r.stdout
