"""System performance metrics and a Micron-style DRAM energy model."""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .dram import REFPB_PER_REFAB, TimingParams


class MetricError(ValueError):
    pass


# --------------------------------------------------------------------------
# run statistics


@dataclass
class RankStats:
    act: int = 0
    rd: int = 0
    wr: int = 0
    refab: int = 0
    refpb: int = 0
    active_cycles: int = 0       # at least one bank open or refreshing
    precharged_cycles: int = 0   # every bank precharged and idle
    refreshing_cycles: int = 0   # some refresh in progress

    def __post_init__(self):
        if min(dataclasses.astuple(self)) < 0:
            raise MetricError("rank counters must be non-negative")


@dataclass
class RunStats:
    ipc_shared: list[float]
    ipc_alone: list[float]
    ranks: list[RankStats] = field(default_factory=list)
    accesses: int = 0
    cycles: int = 0

    def __post_init__(self):
        if len(self.ipc_shared) != len(self.ipc_alone):
            raise MetricError("shared and alone IPC vectors differ in length")


def _slowdowns(shared: Sequence[float], alone: Sequence[float]) -> list[float]:
    if len(shared) != len(alone):
        raise MetricError("shared and alone IPC vectors differ in length")
    if any(a <= 0 for a in alone):
        raise MetricError("alone IPC must be positive")
    if any(s <= 0 for s in shared):
        raise MetricError("shared IPC must be positive")
    return [a / s for s, a in zip(shared, alone)]


def weighted_speedup(shared: Sequence[float], alone: Sequence[float]) -> float:
    """Sum over cores of IPC_shared / IPC_alone."""
    if len(shared) != len(alone):
        raise MetricError("shared and alone IPC vectors differ in length")
    if any(a <= 0 for a in alone):
        raise MetricError("alone IPC must be positive")
    return math.fsum(s / a for s, a in zip(shared, alone))


def harmonic_speedup(shared: Sequence[float], alone: Sequence[float]) -> float:
    """N / sum of per-core slowdowns (IPC_alone / IPC_shared)."""
    sl = _slowdowns(shared, alone)
    return len(sl) / math.fsum(sl)


def max_slowdown(shared: Sequence[float], alone: Sequence[float]) -> float:
    return max(_slowdowns(shared, alone))


def gmean(values: Iterable[float]) -> float:
    vals = list(values)
    if not vals or any(v <= 0 for v in vals):
        raise MetricError("geometric mean needs positive values")
    return math.exp(math.fsum(math.log(v) for v in vals) / len(vals))


# --------------------------------------------------------------------------
# energy


@dataclass(frozen=True)
class PowerParams:
    """Per-device DDR3 supply and IDD currents (mA); one rank has ``devices_per_rank`` devices."""

    VDD: float = 1.5
    IDD0: float = 55.0
    IDD2N: float = 32.0
    IDD3N: float = 38.0
    IDD4R: float = 157.0
    IDD4W: float = 128.0
    IDD5B: float = 235.0
    devices_per_rank: int = 8

    def __post_init__(self):
        for f in dataclasses.fields(self):
            if getattr(self, f.name) <= 0:
                raise MetricError(f"{f.name} must be positive")


def read_power_params(path) -> PowerParams:
    """Parse a ``KEY=value`` file; ``#`` starts a comment."""
    names = {f.name: f.type for f in dataclasses.fields(PowerParams)}
    values = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            body = line.split("#", 1)[0].strip()
            if not body:
                continue
            key, sep, value = body.partition("=")
            key = key.strip()
            if not sep or key not in names:
                raise MetricError(f"{path}:{lineno}: unknown or malformed entry {line.strip()!r}")
            try:
                values[key] = int(value) if key == "devices_per_rank" else float(value)
            except ValueError:
                raise MetricError(f"{path}:{lineno}: bad value for {key}: {value.strip()!r}") from None
    return PowerParams(**values)


def write_power_params(path, p: PowerParams) -> None:
    with open(path, "w") as fh:
        for f in dataclasses.fields(p):
            fh.write(f"{f.name}={getattr(p, f.name)}\n")


@dataclass(frozen=True)
class EnergyBreakdown:
    """Energy in nJ."""

    background: float
    activate: float
    read_write: float
    refresh: float

    @property
    def total(self) -> float:
        return self.background + self.activate + self.read_write + self.refresh

    def __add__(self, other: "EnergyBreakdown") -> "EnergyBreakdown":
        return EnergyBreakdown(self.background + other.background, self.activate + other.activate,
                               self.read_write + other.read_write, self.refresh + other.refresh)

    CSV_COLUMNS = ("background_nj", "activate_nj", "read_write_nj", "refresh_nj", "total_nj")

    def csv_row(self) -> list[str]:
        return [repr(v) for v in (self.background, self.activate, self.read_write, self.refresh, self.total)]


ZERO_ENERGY = EnergyBreakdown(0.0, 0.0, 0.0, 0.0)


def rank_energy(r: RankStats, p: PowerParams, t: TimingParams) -> EnergyBreakdown:
    """Energy of one rank.

    mA x V x ns = pJ; results are scaled to nJ and multiplied by the devices
    in the rank.  A per-bank refresh costs one eighth of an all-bank refresh.
    """
    tck = t.tCK
    scale = p.VDD * p.devices_per_rank * 1e-3
    background = (p.IDD3N * r.active_cycles + p.IDD2N * r.precharged_cycles) * tck * scale
    act_charge = p.IDD0 * t.tRC - p.IDD3N * t.tRAS - p.IDD2N * (t.tRC - t.tRAS)
    activate = r.act * act_charge * tck * scale
    rw = (r.rd * (p.IDD4R - p.IDD3N) + r.wr * (p.IDD4W - p.IDD3N)) * t.tBURST * tck * scale
    refab_energy = (p.IDD5B - p.IDD3N) * t.tRFCab * tck * scale
    refresh = (r.refab + r.refpb / REFPB_PER_REFAB) * refab_energy
    return EnergyBreakdown(background, activate, rw, refresh)


def energy(stats: RunStats, p: PowerParams, t: TimingParams) -> EnergyBreakdown:
    total = ZERO_ENERGY
    for r in stats.ranks:
        total = total + rank_energy(r, p, t)
    return total


def energy_per_access(stats: RunStats, p: PowerParams, t: TimingParams) -> float:
    if stats.accesses <= 0:
        raise MetricError("no memory accesses served")
    return energy(stats, p, t).total / stats.accesses


def improvement(value: float, baseline: float) -> float:
    """Relative improvement of ``value`` over ``baseline`` (0.05 = 5 % better)."""
    if baseline <= 0:
        raise MetricError("baseline must be positive")
    return value / baseline - 1.0
