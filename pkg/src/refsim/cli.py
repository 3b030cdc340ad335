"""Command-line entry point: ``refsim <subcommand> ...``.

Exit status is 0 only when every requested run and check passed.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Optional, Sequence

from .core import TraceSpec, generate_trace, write_trace
from .dram import ConfigError, DramOrg
from .experiments import (
    ExperimentConfig, SweepSpec, VerificationError, Workload, csv_text, gen_workload_mixes,
    load_config, run_matrix, run_single, run_sweep, stats_row, STATS_COLUMNS,
)
from .policies import EVALUATED_POLICIES
from .verify import read_command_log, read_refresh_log, retention_audit, verify_command_log


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    over = {}
    for name in ("policy", "density_gbit", "retention_ms", "cycles", "seed", "output_dir"):
        v = getattr(args, name, None)
        if v is not None:
            over[name] = v
    return cfg.with_(**over) if over else cfg


def _add_run_opts(p: argparse.ArgumentParser) -> None:
    p.add_argument("config", nargs="?", help="experiment configuration file")
    p.add_argument("--policy")
    p.add_argument("--density-gbit", dest="density_gbit", type=int)
    p.add_argument("--retention-ms", dest="retention_ms", type=int)
    p.add_argument("--cycles", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--output-dir", "-o", dest="output_dir")


def cmd_run(args) -> int:
    cfg = _config(args)
    try:
        o = run_single(cfg)
    except VerificationError as e:
        print(f"FAILED: {e}", file=sys.stderr)
        return 1
    sys.stdout.write(csv_text(STATS_COLUMNS, [stats_row(o)]))
    return 0


def _workloads(args, cfg: ExperimentConfig) -> list[Workload]:
    if args.mixes:
        data = json.loads(Path(args.mixes).read_text())
        return [Workload(m["name"], tuple(TraceSpec(**s) if isinstance(s, dict) else s for s in m["members"]),
                         m.get("category")) for m in data]
    if args.per_category:
        return gen_workload_mixes(cfg.seed, args.per_category, cfg.core_count)
    return [cfg.workload]


def cmd_matrix(args) -> int:
    cfg = _config(args)
    policies = args.policies.split(",") if args.policies else list(EVALUATED_POLICIES)
    res = run_matrix(cfg, policies, _workloads(args, cfg), jobs=args.jobs, output_dir=cfg.output_dir)
    _emit(res.csv(), args.csv)
    return 1 if res.errors else 0


def cmd_sweep(args) -> int:
    cfg = _config(args)
    sweep = SweepSpec.parse(args.axis, args.values)
    policies = args.policies.split(",") if args.policies else ["sarp_pb"]
    text, rows = run_sweep(sweep, cfg, _workloads(args, cfg), policies, jobs=args.jobs)
    _emit(text, args.csv)
    return 0 if all(r[-1] == "ok" for r in rows) else 1


def _emit(text: str, path: Optional[str]) -> None:
    if path:
        Path(path).write_text(text)
    else:
        sys.stdout.write(text)


def cmd_gen_trace(args) -> int:
    spec = TraceSpec(mpki=args.mpki, footprint_bytes=args.footprint_bytes, bank_locality=args.bank_locality,
                     write_fraction=args.write_fraction, length=args.len, seed=args.seed)
    recs = generate_trace(spec, DramOrg())
    write_trace(args.output if args.output else "/dev/stdout", recs)
    return 0


def cmd_gen_mixes(args) -> int:
    mixes = gen_workload_mixes(args.seed, args.per_category, args.cores)
    data = [{"name": m.name, "category": m.category,
             "members": [s.__dict__ if isinstance(s, TraceSpec) else s for s in m.sources]} for m in mixes]
    _emit(json.dumps(data, indent=1) + "\n", args.output)
    return 0


def cmd_verify(args) -> int:
    header, cmds, bad = read_command_log(Path(args.log).read_text())
    if header is None:
        print("log has no parameter header", file=sys.stderr)
        return 2
    violations = bad + verify_command_log(cmds, header.timing, header.org, header.sarp, header.refresh_phase)
    for v in violations:
        print(v)
    print(f"{len(cmds)} commands, {len(violations)} violations")
    return 0 if not violations else 1


def cmd_audit(args) -> int:
    header, recs = read_refresh_log(Path(args.log).read_text())
    if header is None:
        print("log has no parameter header", file=sys.stderr)
        return 2
    end = args.end if args.end is not None else header.cycles
    if end is None:
        end = max((r.end for r in recs), default=0)
    violations = retention_audit(recs, header.org, header.retention_ms, args.start, end, header.timing,
                                 header.refresh_mode)
    for v in violations:
        print(v)
    print(f"{len(recs)} refreshes, {len(violations)} retention violations")
    return 0 if not violations else 1


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="refsim", description="Cycle-level DRAM refresh simulator")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="simulate one configuration, verify and audit it")
    _add_run_opts(p)
    p.set_defaults(func=cmd_run)

    for name, func, helptext in (("matrix", cmd_matrix, "compare policies over workloads"),
                                 ("sweep", cmd_sweep, "sweep one parameter axis")):
        p = sub.add_parser(name, help=helptext)
        if name == "sweep":
            p.add_argument("axis", choices=("density", "tfaw", "subarrays", "retention", "fgr",
                                            "intensity", "policy"))
        _add_run_opts(p)
        p.add_argument("--policies", help="comma-separated policy names")
        p.add_argument("--mixes", help="JSON file from gen-mixes")
        p.add_argument("--per-category", type=int, help="generate this many mixes per intensity category")
        p.add_argument("--jobs", type=int, default=1)
        p.add_argument("--csv", help="write the CSV here instead of stdout")
        if name == "sweep":
            p.add_argument("--values", help="comma-separated values, e.g. 5/1,10/2 for tfaw")
        p.set_defaults(func=func)

    p = sub.add_parser("gen-trace", help="write a synthetic trace")
    p.add_argument("--mpki", type=float, default=20.0)
    p.add_argument("--footprint-bytes", type=int, default=TraceSpec.footprint_bytes)
    p.add_argument("--bank-locality", type=float, default=0.0)
    p.add_argument("--write-fraction", type=float, default=0.3)
    p.add_argument("--len", type=int, default=20000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output", "-o")
    p.set_defaults(func=cmd_gen_trace)

    p = sub.add_parser("gen-mixes", help="write workload mixes as JSON")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--per-category", type=int, default=4)
    p.add_argument("--cores", type=int, default=8)
    p.add_argument("--output", "-o")
    p.set_defaults(func=cmd_gen_mixes)

    p = sub.add_parser("verify", help="check a command log against the timing rules")
    p.add_argument("log")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("audit", help="check a refresh log for retention violations")
    p.add_argument("log")
    p.add_argument("--start", type=int, default=0)
    p.add_argument("--end", type=int,
                   help="simulation end cycle (default: from the log header, else the last refresh end)")
    p.set_defaults(func=cmd_audit)
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
