"""Experiment orchestration: configuration files, single runs with automatic
verification, policy matrices, parameter sweeps and workload mixes."""
from __future__ import annotations

import csv
import dataclasses
import heapq
import io
import os
import random
from dataclasses import dataclass, field, replace
from functools import lru_cache
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence, Union

from .controller import QueueConfig
from .core import INTENSIVE_MPKI, CoreConfig, TraceRecord, TraceSpec, generate_trace, read_trace
from .dram import (
    SUPPORTED_RETENTION_MS, TRFC_AB_NS, ConfigError, DramOrg, TimingParams, derive_timing,
)
from .metrics import (
    EnergyBreakdown, PowerParams, RunStats, energy, gmean, harmonic_speedup, max_slowdown,
    read_power_params, weighted_speedup,
)
from .policies import POLICIES, PolicySpec, policy_spec
from .sim import SimResult, simulate
from .verify import (
    LogHeader, RetentionViolation, Violation, debt_trace, format_command, format_refresh,
    retention_audit, verify_command_log, write_log,
)

DEFAULT_CYCLES = 2_000_000
FULL_CYCLES = 256_000_000
TFAW_TRRD_SWEEP = ((5, 1), (10, 2), (15, 3), (20, 4), (25, 5), (30, 6))
SUBARRAY_SWEEP = (1, 2, 4, 8, 16, 32, 64)
DENSITY_SWEEP = (8, 16, 32)
RETENTION_SWEEP = (32, 64)
FGR_SWEEP = ("off", "2x", "4x")
INTENSITY_CATEGORIES = (0.0, 0.25, 0.5, 0.75, 1.0)
SWEEP_AXES = ("density", "tfaw", "subarrays", "retention", "fgr", "intensity", "policy")

TraceSource = Union[str, TraceSpec]


class VerificationError(RuntimeError):
    """A run produced protocol or retention violations."""

    def __init__(self, message: str, violations: Sequence[Violation] = (),
                 retention: Sequence[RetentionViolation] = ()):
        super().__init__(message)
        self.violations = list(violations)
        self.retention = list(retention)


# --------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class Workload:
    name: str
    sources: tuple[TraceSource, ...]
    category: Optional[float] = None    # fraction of memory-intensive members


@dataclass(frozen=True)
class ExperimentConfig:
    policy: str = "refab"
    density_gbit: int = 8
    retention_ms: int = 32
    cycles: int = DEFAULT_CYCLES
    seed: int = 0
    output_dir: Optional[str] = None
    org: DramOrg = DramOrg()
    tfaw: Optional[int] = None
    trrd: Optional[int] = None
    tck_ns: float = 1.5
    cores: CoreConfig = CoreConfig()
    core_count: int = 8
    queues: QueueConfig = QueueConfig()
    workload: Workload = Workload("default", ())
    power: PowerParams = PowerParams()
    record_latency: bool = True

    def __post_init__(self):
        validate(self)

    @property
    def spec(self) -> PolicySpec:
        return policy_spec(self.policy)

    @property
    def dram_org(self) -> DramOrg:
        return replace(self.org, density_gbit=self.density_gbit)

    def timing(self) -> TimingParams:
        return timing_for(self.spec, self.density_gbit, self.retention_ms, self.tfaw, self.trrd, self.tck_ns)

    def with_(self, **kw) -> "ExperimentConfig":
        return replace(self, **kw)


def timing_for(spec: PolicySpec, density: int, retention: int, tfaw: Optional[int] = None,
               trrd: Optional[int] = None, tck_ns: float = 1.5) -> TimingParams:
    base = TimingParams()
    if tfaw is not None:
        base = replace(base, tFAW=tfaw)
    if trrd is not None:
        base = replace(base, tRRD=trrd)
    mode = "perbank" if spec.mode == "perbank" else "allbank"
    return derive_timing(density, retention, mode, spec.fgr, tck_ns, base=base)


def validate(cfg: ExperimentConfig) -> None:
    if cfg.policy.lower() not in POLICIES:
        raise ConfigError(f"unknown policy {cfg.policy!r}; choose from {', '.join(POLICIES)}")
    if cfg.density_gbit not in TRFC_AB_NS:
        raise ConfigError(f"density_gbit must be one of {sorted(TRFC_AB_NS)}, got {cfg.density_gbit}")
    if cfg.retention_ms not in SUPPORTED_RETENTION_MS:
        raise ConfigError(f"retention_ms must be one of {SUPPORTED_RETENTION_MS}, got {cfg.retention_ms}")
    if cfg.cycles < 1:
        raise ConfigError("cycles must be positive")
    if cfg.core_count < 1:
        raise ConfigError("core count must be positive")
    for name in ("tfaw", "trrd"):
        v = getattr(cfg, name)
        if v is not None and v < 1:
            raise ConfigError(f"{name} must be positive")
    q = cfg.queues
    if not 0 <= q.low_watermark < q.high_watermark <= q.write_capacity:
        raise ConfigError("need 0 <= low_watermark < high_watermark <= write queue size")
    if q.read_capacity < 1:
        raise ConfigError("read queue size must be positive")


def _bool(v: str) -> bool:
    low = v.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


def _list(conv):
    return lambda v: tuple(conv(x.strip()) for x in v.split(",") if x.strip())


# section -> key -> (target, converter).  Targets: "top.<field>", "org.<field>",
# "cores.<field>", "queues.<field>", "wl.<field>", "power.<field>".
_SCHEMA: dict[str, dict[str, tuple[str, Callable]]] = {
    "run": {
        "policy": ("top.policy", str),
        "density_gbit": ("top.density_gbit", int),
        "retention_ms": ("top.retention_ms", int),
        "cycles": ("top.cycles", int),
        "full_length": ("special.full_length", _bool),
        "no_refresh": ("special.no_refresh", _bool),
        "seed": ("top.seed", int),
        "output_dir": ("top.output_dir", str),
        "record_latency": ("top.record_latency", _bool),
    },
    "dram": {
        "channels": ("org.channels", int),
        "ranks_per_channel": ("org.ranks_per_channel", int),
        "banks_per_rank": ("org.banks_per_rank", int),
        "subarrays_per_bank": ("org.subarrays_per_bank", int),
        "rows_per_bank": ("org.rows_per_bank", int),
        "columns_per_row": ("org.columns_per_row", int),
        "column_width_bytes": ("org.column_width_bytes", int),
        "tfaw": ("top.tfaw", int),
        "trrd": ("top.trrd", int),
        "tck_ns": ("top.tck_ns", float),
    },
    "cores": {
        "count": ("top.core_count", int),
        "issue_width": ("cores.issue_width", int),
        "window": ("cores.window", int),
        "mshrs": ("cores.mshrs", int),
        "clock_ratio": ("cores.clock_ratio", int),
    },
    "controller": {
        "read_queue": ("queues.read_capacity", int),
        "write_queue": ("queues.write_capacity", int),
        "high_watermark": ("queues.high_watermark", int),
        "low_watermark": ("queues.low_watermark", int),
        "forward_writes": ("queues.forward_writes", _bool),
    },
    "workload": {
        "name": ("wl.name", str),
        "traces": ("wl.traces", _list(str)),
        "mpki": ("wl.mpki", _list(float)),
        "footprint_bytes": ("wl.footprint_bytes", int),
        "bank_locality": ("wl.bank_locality", float),
        "write_fraction": ("wl.write_fraction", float),
        "trace_len": ("wl.length", int),
    },
    "power": {
        "file": ("special.power_file", str),
        **{f.name: (f"power.{f.name}", int if f.name == "devices_per_rank" else float)
           for f in dataclasses.fields(PowerParams)},
    },
}


def parse_config(text: str, source: str = "<config>", base_dir: Optional[str] = None) -> ExperimentConfig:
    """Parse a ``key = value`` configuration with ``[section]`` headers.

    Keys before the first header belong to ``[run]``.  Unknown keys and
    invalid values raise :class:`ConfigError` naming ``source:line``.
    """
    groups: dict[str, dict] = {k: {} for k in ("top", "org", "cores", "queues", "wl", "power", "special")}
    section = "run"
    last_line = 0
    for lineno, raw in enumerate(text.splitlines(), 1):
        last_line = lineno
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        where = f"{source}:{lineno}"
        if line.startswith("["):
            if not line.endswith("]") or line[1:-1].strip() not in _SCHEMA:
                raise ConfigError(f"{where}: unknown section {line!r}")
            section = line[1:-1].strip()
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep:
            raise ConfigError(f"{where}: expected 'key = value', got {raw.strip()!r}")
        if key not in _SCHEMA[section]:
            raise ConfigError(f"{where}: unknown key {key!r} in [{section}]")
        target, conv = _SCHEMA[section][key]
        try:
            val = conv(value)
        except ValueError as e:
            raise ConfigError(f"{where}: invalid value for {key}: {e}") from None
        group, name = target.split(".", 1)
        groups[group][name] = val
        groups["special"].setdefault("_lines", {})[target] = where
    try:
        return _build_config(groups, base_dir)
    except (ConfigError, ValueError) as e:
        where = _blame(str(e), groups["special"].get("_lines", {}), f"{source}:{last_line}")
        raise ConfigError(f"{where}: {e}") from None


def _blame(message: str, lines: dict[str, str], default: str) -> str:
    for target, where in lines.items():
        if target.split(".", 1)[1] in message:
            return where
    return default


def _build_config(groups: dict, base_dir: Optional[str]) -> ExperimentConfig:
    top = dict(groups["top"])
    special = groups["special"]
    if special.get("no_refresh"):
        top["policy"] = "norefresh"
    if special.get("full_length"):
        top["cycles"] = FULL_CYCLES
    org = DramOrg(**groups["org"]) if groups["org"] else DramOrg()
    cores = CoreConfig(**groups["cores"])
    queues = QueueConfig(**groups["queues"])
    power = PowerParams()
    if "power_file" in special:
        power = read_power_params(_resolve(special["power_file"], base_dir))
    if groups["power"]:
        power = replace(power, **groups["power"])
    core_count = top.get("core_count", 8)
    wl = groups["wl"]
    sources: list[TraceSource] = []
    if wl.get("traces"):
        sources = [_resolve(p, base_dir) for p in wl["traces"]]
    else:
        mpkis = wl.get("mpki") or (20.0,)
        seed = top.get("seed", 0)
        for i in range(core_count):
            sources.append(TraceSpec(
                mpki=mpkis[i % len(mpkis)],
                footprint_bytes=wl.get("footprint_bytes", TraceSpec.footprint_bytes),
                bank_locality=wl.get("bank_locality", TraceSpec.bank_locality),
                write_fraction=wl.get("write_fraction", TraceSpec.write_fraction),
                length=wl.get("length", TraceSpec.length),
                seed=seed * 1000 + i))
    workload = Workload(wl.get("name", "config"), tuple(sources[i % len(sources)] for i in range(core_count)))
    for s in workload.sources:
        if isinstance(s, TraceSpec) and (s.mpki <= 0 or not 0 <= s.bank_locality <= 1
                                         or not 0 <= s.write_fraction <= 1 or s.length < 1):
            raise ConfigError("workload: mpki > 0, bank_locality and write_fraction in [0, 1] required")
    return ExperimentConfig(org=org, cores=cores, queues=queues, workload=workload, power=power, **top)


def _resolve(path: str, base_dir: Optional[str]) -> str:
    return path if base_dir is None or os.path.isabs(path) else os.path.join(base_dir, path)


def load_config(path) -> ExperimentConfig:
    p = Path(path)
    return parse_config(p.read_text(), str(p), str(p.parent))


# --------------------------------------------------------------------------
# traces


@lru_cache(maxsize=256)
def _generated(spec: TraceSpec, org: DramOrg) -> tuple[TraceRecord, ...]:
    return tuple(generate_trace(spec, org))


@lru_cache(maxsize=64)
def _loaded(path: str) -> tuple[TraceRecord, ...]:
    return tuple(read_trace(path))


def load_source(src: TraceSource, org: DramOrg) -> Sequence[TraceRecord]:
    if isinstance(src, TraceSpec):
        # traces depend only on the address layout, not on density
        return _generated(src, replace(org, density_gbit=8))
    return _loaded(str(src))


def source_mpki(src: TraceSource, org: DramOrg = DramOrg()) -> float:
    if isinstance(src, TraceSpec):
        return src.mpki
    from .core import trace_mpki
    return trace_mpki(load_source(src, org))


# --------------------------------------------------------------------------
# single runs


@dataclass
class RunOutcome:
    config: ExperimentConfig
    stats: RunStats
    ws: float
    hs: float
    ms: float
    energy: EnergyBreakdown
    violations: list[Violation] = field(default_factory=list)
    retention: list[RetentionViolation] = field(default_factory=list)
    debt_range: tuple[int, int] = (0, 0)
    refab: int = 0
    refpb: int = 0
    reads: int = 0
    writes: int = 0
    files: dict[str, str] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return not self.violations and not self.retention

    @property
    def energy_per_access(self) -> float:
        return self.energy.total / self.stats.accesses if self.stats.accesses else float("nan")


_ALONE_CACHE: dict[tuple, float] = {}


def _alone_key(cfg: ExperimentConfig, src: TraceSource) -> tuple:
    # refresh is off in solo runs, so density and retention do not matter
    return (src, cfg.org, cfg.tfaw, cfg.trrd, cfg.tck_ns, cfg.cores, cfg.queues, cfg.cycles, cfg.seed)


def alone_ipc(cfg: ExperimentConfig, src: TraceSource) -> float:
    """IPC of ``src`` running by itself on the same memory system with refresh disabled.

    A refresh-free reference keeps the normalization identical across
    policies, densities and retention times, so weighted speedups from
    different points of a sweep compare directly.
    """
    key = _alone_key(cfg, src)
    if key not in _ALONE_CACHE:
        solo = cfg.with_(policy="norefresh", core_count=1, density_gbit=8, retention_ms=32)
        org = solo.dram_org
        res = simulate(org, solo.timing(), solo.spec, [load_source(src, org)], solo.cycles,
                       seed=solo.seed, core_cfg=solo.cores, queues=solo.queues, record=False)
        _ALONE_CACHE[key] = res.ipc[0]
    return _ALONE_CACHE[key]


def run_single(cfg: ExperimentConfig, alone: Optional[Sequence[float]] = None,
               write_outputs: bool = True, strict: bool = True) -> RunOutcome:
    """Simulate ``cfg``, verify its command log and audit its refresh log.

    Logs and CSVs go to ``cfg.output_dir`` when set.  With ``strict`` any
    violation raises :class:`VerificationError` after the outputs are written.
    """
    org = cfg.dram_org
    t = cfg.timing()
    spec = cfg.spec
    sources = cfg.workload.sources
    if not sources:
        raise ConfigError("workload has no traces")
    traces = [load_source(s, org) for s in sources]
    res = simulate(org, t, spec, traces, cfg.cycles, seed=cfg.seed, core_cfg=cfg.cores,
                   queues=cfg.queues, record=True, record_latency=cfg.record_latency,
                   refresh_phase=cfg.seed)
    if alone is None:
        alone = [alone_ipc(cfg, s) for s in sources]
    outcome = _summarize(cfg, res, t, alone)
    cmd_log = list(heapq.merge(*(ch.cmd_log for ch in res.channels), key=lambda c: c.issue_cycle))
    ref_log = list(heapq.merge(*(ch.refresh_log for ch in res.channels), key=lambda r: r.cycle))
    sarp = res.channels[0].sarp
    outcome.violations = verify_command_log(cmd_log, t, org, sarp, cfg.seed)
    if spec.mode != "none":
        outcome.retention = retention_audit(ref_log, org, cfg.retention_ms, 0, cfg.cycles, t, spec.mode)
        spans = debt_trace(ref_log, org, t, spec.mode, cfg.cycles)
        outcome.debt_range = (min(lo for lo, _ in spans.values()), max(hi for _, hi in spans.values()))
    if write_outputs and cfg.output_dir:
        header = LogHeader(org, t, sarp, spec.mode, cfg.retention_ms, cfg.cycles, cfg.seed)
        outcome.files = write_run_outputs(Path(cfg.output_dir), outcome, res, cmd_log, ref_log, header)
    if strict and not outcome.ok:
        first = (outcome.violations + outcome.retention)[:5]
        raise VerificationError(
            f"{cfg.policy}: {len(outcome.violations)} protocol and {len(outcome.retention)} retention "
            f"violations, first: {first}", outcome.violations, outcome.retention)
    return outcome


def _summarize(cfg: ExperimentConfig, res: SimResult, t: TimingParams, alone: Sequence[float]) -> RunOutcome:
    ranks = [rs for ch in res.channels for rs in ch.rank_stats(res.cycles)]
    accesses = res.reads_served + res.writes_served
    stats = RunStats(list(res.ipc), list(alone), ranks, accesses, res.cycles)
    shared = [max(x, 1e-12) for x in res.ipc]
    return RunOutcome(
        config=cfg, stats=stats,
        ws=weighted_speedup(res.ipc, alone), hs=harmonic_speedup(shared, alone),
        ms=max_slowdown(shared, alone), energy=energy(stats, cfg.power, t),
        refab=sum(r.refab for r in ranks), refpb=sum(r.refpb for r in ranks),
        reads=res.reads_served, writes=res.writes_served)


STATS_COLUMNS = ("policy", "density_gbit", "retention_ms", "cycles", "seed", "ws", "hs", "ms",
                 "accesses", "reads", "writes", "refab", "refpb", "debt_min", "debt_max",
                 *EnergyBreakdown.CSV_COLUMNS, "energy_per_access_nj", "violations", "retention_violations")


def stats_row(o: RunOutcome) -> list[str]:
    c = o.config
    return [c.policy, str(c.density_gbit), str(c.retention_ms), str(c.cycles), str(c.seed),
            repr(o.ws), repr(o.hs), repr(o.ms), str(o.stats.accesses), str(o.reads), str(o.writes),
            str(o.refab), str(o.refpb), str(o.debt_range[0]), str(o.debt_range[1]),
            *o.energy.csv_row(), repr(o.energy_per_access), str(len(o.violations)), str(len(o.retention))]


def write_run_outputs(out: Path, o: RunOutcome, res: SimResult, cmd_log, ref_log, header: LogHeader) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    files = {k: str(out / v) for k, v in (("commands", "commands.log"), ("refresh", "refresh.log"),
                                           ("latency", "latency.csv"), ("stats", "stats.csv"),
                                           ("cores", "cores.csv"), ("ranks", "ranks.csv"))}
    with open(files["commands"], "w") as fh:
        write_log(fh, header, map(format_command, cmd_log))
    with open(files["refresh"], "w") as fh:
        write_log(fh, header, map(format_refresh, ref_log))
    lat = sorted((a, core, kind, c) for ch in res.channels for core, kind, a, c in ch.latencies)
    write_csv(files["latency"], ("core", "kind", "arrival", "completion", "latency"),
              ([str(core), kind, str(a), str(c), str(c - a)] for a, core, kind, c in lat))
    write_csv(files["stats"], STATS_COLUMNS, [stats_row(o)])
    write_csv(files["cores"], ("core", "trace", "ipc_shared", "ipc_alone", "retired"),
              ([str(i), _source_name(s), repr(o.stats.ipc_shared[i]), repr(o.stats.ipc_alone[i]),
                str(res.retired[i])] for i, s in enumerate(o.config.workload.sources)))
    from .metrics import rank_energy
    rows = []
    nr = o.config.org.ranks_per_channel
    for i, rs in enumerate(o.stats.ranks):
        e = rank_energy(rs, o.config.power, header.timing)
        rows.append([str(i // nr), str(i % nr), *map(str, dataclasses.astuple(rs)), *e.csv_row()])
    write_csv(files["ranks"], ("channel", "rank", *(f.name for f in dataclasses.fields(rs)),
                               *EnergyBreakdown.CSV_COLUMNS), rows)
    return files


def _source_name(s: TraceSource) -> str:
    if isinstance(s, TraceSpec):
        return (f"synthetic(mpki={s.mpki},footprint={s.footprint_bytes},locality={s.bank_locality},"
                f"writes={s.write_fraction},len={s.length},seed={s.seed})")
    return str(s)


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence[str]]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def csv_text(header: Sequence[str], rows: Iterable[Sequence[str]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


# --------------------------------------------------------------------------
# workloads


@dataclass(frozen=True)
class TracePool:
    """Generator specs tagged memory-intensive or not (MPKI >= 10)."""

    intensive: tuple[TraceSource, ...]
    light: tuple[TraceSource, ...]


def default_pool(seed: int = 0, size: int = 16, length: int = 20000) -> TracePool:
    """Synthetic stand-ins: intensive MPKI 10-50, light MPKI 0.5-5."""
    rng = random.Random(f"pool:{seed}")
    intensive = tuple(TraceSpec(mpki=round(rng.uniform(10.0, 50.0), 1), bank_locality=round(rng.uniform(0, 0.3), 2),
                                write_fraction=round(rng.uniform(0.2, 0.5), 2), length=length,
                                seed=seed * 10007 + i)
                      for i in range(size))
    light = tuple(TraceSpec(mpki=round(rng.uniform(0.5, 5.0), 2), bank_locality=round(rng.uniform(0, 0.3), 2),
                            write_fraction=round(rng.uniform(0.1, 0.4), 2), length=length,
                            seed=seed * 10007 + 5000 + i)
                  for i in range(size))
    return TracePool(intensive, light)


def gen_workload_mixes(seed: int, per_category: int, cores: int = 8, pool: Optional[TracePool] = None,
                       categories: Sequence[float] = INTENSITY_CATEGORIES) -> list[Workload]:
    """``per_category`` random mixes for each intensive-fraction category."""
    pool = pool or default_pool(seed)
    for s in pool.intensive:
        if source_mpki(s) < INTENSIVE_MPKI:
            raise ConfigError(f"pool entry {s} tagged intensive has MPKI < {INTENSIVE_MPKI}")
    for s in pool.light:
        if source_mpki(s) >= INTENSIVE_MPKI:
            raise ConfigError(f"pool entry {s} tagged non-intensive has MPKI >= {INTENSIVE_MPKI}")
    rng = random.Random(f"mixes:{seed}")
    out = []
    for cat in categories:
        n_int = round(cat * cores)
        if n_int > len(pool.intensive) or cores - n_int > len(pool.light):
            raise ConfigError(f"pool too small for {cores}-core mixes at {cat:.0%} intensive")
        for k in range(per_category):
            members = rng.sample(pool.intensive, n_int) + rng.sample(pool.light, cores - n_int)
            rng.shuffle(members)
            out.append(Workload(f"mix{int(cat * 100):03d}_{k:02d}", tuple(members), cat))
    return out


# --------------------------------------------------------------------------
# matrix


MATRIX_COLUMNS = ("workload", "policy", "ws", "hs", "ms", "energy_per_access_nj", "ws_vs_refab",
                  "ws_vs_refpb", "status")
BASELINES = ("refab", "refpb")


@dataclass
class MatrixResult:
    rows: list[list[str]]
    outcomes: dict[tuple[str, str], RunOutcome]
    errors: dict[tuple[str, str], str]

    def csv(self) -> str:
        return csv_text(MATRIX_COLUMNS, self.rows)

    def ws(self, workload: str, policy: str) -> Optional[float]:
        o = self.outcomes.get((workload, policy))
        return o.ws if o else None

    def mean_ws(self, policy: str) -> float:
        vals = [o.ws for (w, p), o in self.outcomes.items() if p == policy]
        return sum(vals) / len(vals)

    def gmean_gain(self, policy: str, baseline: str) -> float:
        ratios = [o.ws / self.outcomes[(w, baseline)].ws for (w, p), o in self.outcomes.items()
                  if p == policy and (w, baseline) in self.outcomes]
        return gmean(ratios) - 1.0


def _run_cell(args):
    cfg, alone = args
    try:
        return run_single(cfg, alone, write_outputs=True, strict=True), None
    except (VerificationError, ConfigError, OSError, ValueError) as e:
        return None, f"{type(e).__name__}: {e}"


def run_matrix(cfg: ExperimentConfig, policies: Sequence[str], workloads: Sequence[Workload],
               jobs: int = 1, output_dir: Optional[str] = None) -> MatrixResult:
    """Run every (workload, policy) cell, normalizing WS to REFab and REFpb.

    Baselines are added when missing.  A failed cell is reported in the
    ``status`` column and left out of every summary.
    """
    pols = list(dict.fromkeys([*BASELINES, *(p.lower() for p in policies)]))
    for p in pols:
        policy_spec(p)
    tasks = []
    for wl in workloads:
        base = cfg.with_(workload=wl, core_count=len(wl.sources))
        alone = [alone_ipc(base, s) for s in wl.sources]
        for p in pols:
            out = os.path.join(output_dir, wl.name, p) if output_dir else None
            tasks.append(((wl.name, p), (base.with_(policy=p, output_dir=out), alone)))
    results = _map(_run_cell, [a for _, a in tasks], jobs)
    outcomes, errors = {}, {}
    for (key, _), (o, err) in zip(tasks, results):
        if o is not None:
            outcomes[key] = o
        else:
            errors[key] = err
    rows = []
    for wl in sorted(w.name for w in workloads):
        for p in pols:
            key = (wl, p)
            if key in errors:
                rows.append([wl, p, "", "", "", "", "", "", "failed: " + errors[key].replace("\n", " ")])
                continue
            o = outcomes[key]
            rel = []
            for b in BASELINES:
                ob = outcomes.get((wl, b))
                rel.append(repr(o.ws / ob.ws - 1.0) if ob else "")
            rows.append([wl, p, repr(o.ws), repr(o.hs), repr(o.ms), repr(o.energy_per_access), *rel, "ok"])
    res = MatrixResult(rows, outcomes, errors)
    for p in pols:
        gains = []
        for b in BASELINES:
            try:
                gains.append(repr(res.gmean_gain(p, b)))
            except (ValueError, ZeroDivisionError):
                gains.append("")
        ok = [o for (w, q), o in outcomes.items() if q == p]
        if ok:
            rows.append(["gmean", p, repr(gmean(o.ws for o in ok)), repr(gmean(o.hs for o in ok)),
                         repr(gmean(o.ms for o in ok)), repr(gmean(o.energy_per_access for o in ok)),
                         *gains, "summary"])
    return res


def _map(fn, items, jobs: int):
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    from concurrent.futures import ProcessPoolExecutor
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(fn, items))


# --------------------------------------------------------------------------
# sweeps


@dataclass(frozen=True)
class SweepSpec:
    axis: str
    values: tuple

    def __post_init__(self):
        if self.axis not in SWEEP_AXES:
            raise ConfigError(f"unknown sweep axis {self.axis!r}; choose from {', '.join(SWEEP_AXES)}")
        allowed = {
            "density": DENSITY_SWEEP, "tfaw": TFAW_TRRD_SWEEP, "subarrays": SUBARRAY_SWEEP,
            "retention": RETENTION_SWEEP, "fgr": FGR_SWEEP, "intensity": INTENSITY_CATEGORIES,
            "policy": tuple(POLICIES),
        }[self.axis]
        for v in self.values:
            if v not in allowed:
                raise ConfigError(f"{self.axis} sweep value {v!r} not in {allowed}")
        if not self.values:
            raise ConfigError("sweep needs at least one value")

    @classmethod
    def default(cls, axis: str) -> "SweepSpec":
        return cls(axis, {
            "density": DENSITY_SWEEP, "tfaw": TFAW_TRRD_SWEEP, "subarrays": SUBARRAY_SWEEP,
            "retention": RETENTION_SWEEP, "fgr": FGR_SWEEP, "intensity": INTENSITY_CATEGORIES,
            "policy": ("refab", "refpb", "elastic", "darp", "sarp_ab", "sarp_pb", "dsarp", "fgr2x", "fgr4x"),
        }[axis])

    @classmethod
    def parse(cls, axis: str, text: Optional[str]) -> "SweepSpec":
        if not text:
            return cls.default(axis)
        parts = [p.strip() for p in text.split(",") if p.strip()]
        if axis == "tfaw":
            vals = tuple(tuple(int(x) for x in p.split("/")) for p in parts)
        elif axis in ("density", "subarrays", "retention"):
            vals = tuple(int(p) for p in parts)
        elif axis == "intensity":
            vals = tuple(float(p) for p in parts)
        else:
            vals = tuple(parts)
        return cls(axis, vals)


SWEEP_COLUMNS = ("axis", "value", "workload", "policy", "ws", "baseline", "baseline_ws", "gain", "status")


def _fmt_value(v) -> str:
    return f"{v[0]}/{v[1]}" if isinstance(v, tuple) else str(v)


def sweep_points(sweep: SweepSpec, cfg: ExperimentConfig, policies: Sequence[str]):
    """(value, policy, baseline, config) for every point of the sweep."""
    for v in sweep.values:
        if sweep.axis == "fgr":
            pol = {"off": "refab", "2x": "fgr2x", "4x": "fgr4x"}[v]
            yield v, pol, "refab", cfg
        elif sweep.axis == "policy":
            yield v, v, "refpb", cfg
        else:
            c = {
                "density": lambda: cfg.with_(density_gbit=v),
                "tfaw": lambda: cfg.with_(tfaw=v[0], trrd=v[1]),
                "subarrays": lambda: cfg.with_(org=replace(cfg.org, subarrays_per_bank=v)),
                "retention": lambda: cfg.with_(retention_ms=v),
                "intensity": lambda: cfg,
            }[sweep.axis]()
            for p in policies:
                yield v, p, "refpb", c


def run_sweep(sweep: SweepSpec, cfg: ExperimentConfig, workloads: Sequence[Workload],
              policies: Sequence[str] = ("sarp_pb",), jobs: int = 1) -> tuple[str, list[list[str]]]:
    """WS of each policy and its gain over the baseline at each sweep value.

    Returns the CSV text and its rows.  The ``fgr`` axis compares FGR modes
    against REFab; other axes compare ``policies`` against REFpb.  For the
    ``intensity`` axis, only workloads of the matching category are used.
    """
    cells = []
    for v, pol, baseline, c in sweep_points(sweep, cfg, policies):
        wls = [w for w in workloads if sweep.axis != "intensity" or w.category == v]
        for wl in wls:
            cells.append((v, wl, pol, baseline, c))
    needed = {}
    for v, wl, pol, baseline, c in cells:
        base = c.with_(workload=wl, core_count=len(wl.sources))
        for p in (pol, baseline):
            key = (_fmt_value(v), wl.name, p)
            if key not in needed:
                needed[key] = base.with_(policy=p)
    alone_for = {}
    args = []
    for key, c in needed.items():
        akey = (key[0], key[1])
        if akey not in alone_for:
            alone_for[akey] = [alone_ipc(c, s) for s in c.workload.sources]
        args.append((c.with_(output_dir=None), alone_for[akey]))
    results = dict(zip(needed, _map(_run_cell, args, jobs)))
    rows = []
    for v, wl, pol, baseline, _ in cells:
        key = (_fmt_value(v), wl.name, pol)
        o, err = results[key]
        ob, berr = results[(key[0], wl.name, baseline)]
        if o is None or ob is None:
            rows.append([sweep.axis, key[0], wl.name, pol, "", baseline, "", "", "failed: " + (err or berr)])
            continue
        rows.append([sweep.axis, key[0], wl.name, pol, repr(o.ws), baseline, repr(ob.ws),
                     repr(o.ws / ob.ws - 1.0), "ok"])
    order = {_fmt_value(v): i for i, v in enumerate(sweep.values)}
    rows.sort(key=lambda r: (order[r[1]], r[2], r[3]))
    return csv_text(SWEEP_COLUMNS, rows), rows


def mean_gain_by_value(rows: Sequence[Sequence[str]], policy: str) -> list[tuple[str, float]]:
    """Arithmetic mean of the ``gain`` column per sweep value, in row order."""
    acc: dict[str, list[float]] = {}
    for r in rows:
        if r[3] == policy and r[8] == "ok":
            acc.setdefault(r[1], []).append(float(r[7]))
    return [(k, sum(v) / len(v)) for k, v in acc.items()]

