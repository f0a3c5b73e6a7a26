"""coldloop: a liquid-cooled data-center plant simulator and control benchmark.

The package couples a lumped-parameter thermal model of cold-plate cabinets
with an evaporative cooling-tower loop, wraps the plant as a two-sided
decision process, and ships a trim-and-respond baseline, a PPO trainer for
both sides, and a decision-tree distillation pipeline with fidelity metrics.
"""

from __future__ import annotations

__version__ = "0.1.0"

from .topology import (
    CabinetParams,
    FanParams,
    HruParams,
    PhiPoly,
    SystemTopology,
    TimingConfig,
    TopologyError,
    TowerParams,
    YorkCalcCoeffs,
    parse_topology,
    serialize_topology,
    topology_fingerprint,
    validate_topology,
)
from .trace import ExogenousTrace, TraceError, load_trace, make_trace, save_trace, synthetic_trace
from .env import EnvError, PlantEnv, StepOutcome, make_env, outcome_to_dict, outcome_to_jsonl
from .baseline import TrimRespondController, TrimRespondParams
from .metrics import MetricConfig, MetricsError, compute_run_metrics, d_blade, emit_report

__all__ = [
    "__version__",
    "CabinetParams",
    "EnvError",
    "ExogenousTrace",
    "FanParams",
    "HruParams",
    "MetricConfig",
    "MetricsError",
    "PhiPoly",
    "PlantEnv",
    "StepOutcome",
    "SystemTopology",
    "TimingConfig",
    "TopologyError",
    "TowerParams",
    "TraceError",
    "TrimRespondController",
    "TrimRespondParams",
    "YorkCalcCoeffs",
    "compute_run_metrics",
    "d_blade",
    "emit_report",
    "load_trace",
    "make_env",
    "make_trace",
    "outcome_to_dict",
    "outcome_to_jsonl",
    "parse_topology",
    "save_trace",
    "serialize_topology",
    "synthetic_trace",
    "topology_fingerprint",
    "validate_topology",
]
