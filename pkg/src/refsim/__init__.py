"""Cycle-level, trace-driven DRAM refresh simulator.

Models DDR3 timing with all-bank, per-bank, out-of-order per-bank (DARP),
subarray-parallel (SARP), combined (DSARP), elastic and fine-granularity
refresh, and checks every run against an independent timing verifier and a
retention audit.
"""
from .dram import (
    CmdKind, Command, ConfigError, CurrentParams, DramOrg, FgrMode, RefreshMode, TimingParams,
    decode_address, derive_timing, encode_address, sarp_scaled_constraints,
)
from .experiments import (
    ExperimentConfig, SweepSpec, Workload, gen_workload_mixes, load_config, parse_config, run_matrix,
    run_single, run_sweep,
)
from .metrics import PowerParams, energy, harmonic_speedup, max_slowdown, weighted_speedup
from .policies import EVALUATED_POLICIES, POLICIES, policy_spec
from .sim import System, simulate
from .verify import retention_audit, verify_command_log

__all__ = [
    "CmdKind", "Command", "ConfigError", "CurrentParams", "DramOrg", "FgrMode", "RefreshMode", "TimingParams",
    "decode_address", "derive_timing", "encode_address", "sarp_scaled_constraints",
    "ExperimentConfig", "SweepSpec", "Workload", "gen_workload_mixes", "load_config", "parse_config",
    "run_matrix", "run_single", "run_sweep",
    "PowerParams", "energy", "harmonic_speedup", "max_slowdown", "weighted_speedup",
    "EVALUATED_POLICIES", "POLICIES", "policy_spec", "System", "simulate",
    "retention_audit", "verify_command_log",
]

__version__ = "0.1.0"
