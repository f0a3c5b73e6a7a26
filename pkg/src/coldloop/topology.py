"""Hierarchical system description: JSON parsing, validation, serialization.

The simulated plant is described by a single JSON document: N cooling towers
of m identical cells each, C cabinets of B blade groups each, plus the
physical parameter blocks for towers, cabinets, the optional heat-recovery
unit, and the timing grid. Parsing produces an immutable `SystemTopology`
value that every other module consumes read-only.

Only the four counts (``num_towers``, ``cells_per_tower``, ``num_cabinets``,
``blade_groups_per_cabinet``) are required; every physical field has a named
default forming a small non-authoritative preset plant. Field names in the
JSON document match the dataclass attributes below exactly.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, fields, is_dataclass
from typing import Any, Optional

SCHEMA_VERSION = 1


class TopologyError(ValueError):
    """Raised on malformed, incomplete, or out-of-range topology documents."""


@dataclass(frozen=True)
class PhiPoly:
    """Heat-generation polynomial, evaluated on normalized load u = P/P_nom."""

    a1: float = 1.0
    a2: float = 0.015
    a0: float = 0.0


@dataclass(frozen=True)
class YorkCalcCoeffs:
    """Empirical approach-temperature polynomial coefficients.

    ``c`` holds c1..c10; the regression inputs are wet-bulb temperature (degC),
    the flow ratio R_F normalized by ``R_F_nom``, and (optionally) a heat-load
    ratio. Coefficient values are a synthetic preset: they shape a plausible
    tower but reproduce no particular piece of hardware.
    """

    c: tuple[float, ...] = (1.0, 0.05, 0.0, 1.2, 0.3, 0.01, 0.0, 0.0, 0.0, 0.0)
    A_R: float = 1.0
    R_F_nom: float = 1.0
    use_q_ratio: bool = False


@dataclass(frozen=True)
class FanParams:
    """Tower-cell fan: efficiency, nominal pressure rise/volume flow/power."""

    eta_fan: float = 0.35
    dp_nom: float = 170.0  # Pa
    V_nom: float = 5.0  # m^3/s at full speed
    P_nom: float = 2400.0  # W at full speed
    rho_a: float = 1.2  # kg/m^3


@dataclass(frozen=True)
class TowerParams:
    """One cooling tower (all m cells identical, sharing water flow equally)."""

    yorkcalc: YorkCalcCoeffs = field(default_factory=YorkCalcCoeffs)
    fan: FanParams = field(default_factory=FanParams)
    c_p_w: float = 4186.0  # J/(kg K)
    design_water_flow: float = 12.0  # kg/s per tower
    design_air_flow: float = 6.0  # kg dry air/s per cell at full fan speed
    lwt_max: float = 29.4  # degC, leaving-water setpoint ceiling
    min_approach: float = 2.8  # K
    optimal_approach: float = 3.5  # K


@dataclass(frozen=True)
class CabinetParams:
    """One cabinet: per-blade-group thermal lump plus the CDU coolant loop."""

    C_th: float = 3.0e5  # J/K per blade group
    G_nom: float = 4000.0  # W/K at nominal branch flow
    conductance_exponent: float = 0.8  # G ~ (flow/nominal)^e
    m_nom: float = 10.0  # kg/s nominal branch flow
    P_nom: float = 60.0e3  # W nominal blade-group power
    phi: PhiPoly = field(default_factory=PhiPoly)
    hx_effectiveness: float = 0.85
    coolant_setpoint_range: tuple[float, float] = (18.0, 30.0)  # degC
    flow_range: tuple[float, float] = (6.0, 30.0)  # kg/s, whole cabinet


@dataclass(frozen=True)
class HruParams:
    """Optional heat-recovery exchanger on the tower-bound hot stream."""

    effectiveness: float = 0.4
    sink_inlet_T: float = 293.15  # K
    sink_m_flow: float = 10.0  # kg/s
    sink_cp: float = 4186.0  # J/(kg K)


@dataclass(frozen=True)
class TimingConfig:
    """Physics substep, agent step, and episode horizon (seconds)."""

    sim_time_step: float = 1.0
    step_size: float = 60.0
    max_episode_duration: float = 12000.0


@dataclass(frozen=True)
class SystemTopology:
    """Immutable, validated description of the whole cooled system."""

    num_towers: int
    cells_per_tower: int
    num_cabinets: int
    blade_groups_per_cabinet: int
    tower: TowerParams = field(default_factory=TowerParams)
    cabinet: CabinetParams = field(default_factory=CabinetParams)
    hru: Optional[HruParams] = None
    timing: TimingConfig = field(default_factory=TimingConfig)
    ct_action_deltas: tuple[float, ...] = (-0.5, -0.25, 0.0, 0.25, 0.5)

    @property
    def substeps_per_step(self) -> int:
        return int(round(self.timing.step_size / self.timing.sim_time_step))

    @property
    def episode_steps(self) -> int:
        return int(round(self.timing.max_episode_duration / self.timing.step_size))


def _is_multiple(big: float, small: float) -> bool:
    if small <= 0.0 or big <= 0.0:
        return False
    ratio = big / small
    return abs(ratio - round(ratio)) < 1e-9 and round(ratio) >= 1


def validate_topology(t: SystemTopology) -> list[str]:
    """Return all invariant violations, ordered by field path (empty if valid)."""
    v: list[str] = []

    def bad(path: str, msg: str) -> None:
        v.append(f"{path}: {msg}")

    if t.num_towers < 1:
        bad("num_towers", "must be >= 1")
    if t.cells_per_tower < 1:
        bad("cells_per_tower", "must be >= 1")
    if t.num_cabinets < 1:
        bad("num_cabinets", "must be >= 1")
    if t.blade_groups_per_cabinet < 1:
        bad("blade_groups_per_cabinet", "must be >= 1")

    d = t.ct_action_deltas
    if len(d) == 0:
        bad("ct_action_deltas", "must be non-empty")
    else:
        if any(d[i] >= d[i + 1] for i in range(len(d) - 1)):
            bad("ct_action_deltas", "must be strictly increasing")
        if 0.0 not in d:
            bad("ct_action_deltas", "must contain 0")

    cab = t.cabinet
    if not cab.C_th > 0:
        bad("cabinet.C_th", "must be > 0")
    if not cab.G_nom > 0:
        bad("cabinet.G_nom", "must be > 0")
    if not (0 < cab.conductance_exponent <= 1.5):
        bad("cabinet.conductance_exponent", "must be in (0, 1.5]")
    if not (0 < cab.hx_effectiveness <= 1):
        bad("cabinet.hx_effectiveness", "must be in (0, 1]")
    if not cab.m_nom > 0:
        bad("cabinet.m_nom", "must be > 0")
    if not cab.P_nom > 0:
        bad("cabinet.P_nom", "must be > 0")
    if not cab.coolant_setpoint_range[0] < cab.coolant_setpoint_range[1]:
        bad("cabinet.coolant_setpoint_range", "min must be < max")
    if cab.flow_range[0] < 0 or not cab.flow_range[0] < cab.flow_range[1]:
        bad("cabinet.flow_range", "must satisfy 0 <= min < max")
    if not all(math.isfinite(x) for x in (cab.phi.a0, cab.phi.a1, cab.phi.a2)):
        bad("cabinet.phi", "coefficients must be finite")

    if t.hru is not None:
        if not (0 <= t.hru.effectiveness <= 1):
            bad("hru.effectiveness", "must be in [0, 1]")
        if t.hru.sink_cp <= 0:
            bad("hru.sink_cp", "must be > 0")
        if t.hru.sink_m_flow < 0:
            bad("hru.sink_m_flow", "must be >= 0")

    tm = t.timing
    if not tm.sim_time_step > 0:
        bad("timing.sim_time_step", "must be > 0")
    if not tm.step_size > 0:
        bad("timing.step_size", "must be > 0")
    if not tm.max_episode_duration > 0:
        bad("timing.max_episode_duration", "must be > 0")
    if tm.sim_time_step > 0 and tm.step_size > 0 and not _is_multiple(
        tm.step_size, tm.sim_time_step
    ):
        bad("timing.step_size", "must be an integer multiple of sim_time_step")
    if tm.step_size > 0 and tm.max_episode_duration > 0 and not _is_multiple(
        tm.max_episode_duration, tm.step_size
    ):
        bad("timing.max_episode_duration", "must be an integer multiple of step_size")

    tw = t.tower
    if not tw.c_p_w > 0:
        bad("tower.c_p_w", "must be > 0")
    if not tw.design_air_flow > 0:
        bad("tower.design_air_flow", "must be > 0")
    if not tw.design_water_flow > 0:
        bad("tower.design_water_flow", "must be > 0")
    if not (0 < tw.fan.eta_fan <= 1):
        bad("tower.fan.eta_fan", "must be in (0, 1]")
    for name in ("dp_nom", "V_nom", "P_nom", "rho_a"):
        if not getattr(tw.fan, name) > 0:
            bad(f"tower.fan.{name}", "must be > 0")
    if not tw.min_approach > 0:
        bad("tower.min_approach", "must be > 0")
    if not tw.optimal_approach > 0:
        bad("tower.optimal_approach", "must be > 0")
    if tw.optimal_approach < tw.min_approach:
        bad("tower.optimal_approach", "must be >= min_approach")
    yk = tw.yorkcalc
    if len(yk.c) != 10:
        bad("tower.yorkcalc.c", "must hold exactly 10 coefficients")
    elif not all(math.isfinite(x) for x in yk.c):
        bad("tower.yorkcalc.c", "coefficients must be finite")
    if not yk.A_R > 0:
        bad("tower.yorkcalc.A_R", "must be > 0")
    if not yk.R_F_nom > 0:
        bad("tower.yorkcalc.R_F_nom", "must be > 0")

    return sorted(v)


_REQUIRED = (
    "num_towers",
    "cells_per_tower",
    "num_cabinets",
    "blade_groups_per_cabinet",
)


def _build(cls, doc: dict[str, Any], path: str):
    """Build dataclass `cls` from `doc`, filling defaults, naming bad paths."""
    kwargs: dict[str, Any] = {}
    known = {f.name for f in fields(cls)}
    for key in doc:
        if key not in known:
            raise TopologyError(f"{path}{key}: unknown field")
    for f in fields(cls):
        here = f"{path}{f.name}"
        if f.name in doc:
            raw = doc[f.name]
            typ = f.type
            if is_dataclass_name(typ):
                if not isinstance(raw, dict):
                    raise TopologyError(f"{here}: expected an object")
                kwargs[f.name] = _build(_DATACLASSES[strip_optional(typ)], raw, here + ".")
            elif strip_optional(typ).startswith("tuple"):
                if not isinstance(raw, (list, tuple)):
                    raise TopologyError(f"{here}: expected an array")
                try:
                    kwargs[f.name] = tuple(float(x) for x in raw)
                except (TypeError, ValueError):
                    raise TopologyError(f"{here}: expected an array of numbers") from None
            elif strip_optional(typ) == "bool":
                if not isinstance(raw, bool):
                    raise TopologyError(f"{here}: expected a boolean")
                kwargs[f.name] = raw
            elif strip_optional(typ) == "int":
                if isinstance(raw, bool) or not isinstance(raw, int):
                    raise TopologyError(f"{here}: expected an integer")
                kwargs[f.name] = raw
            else:
                if isinstance(raw, bool) or not isinstance(raw, (int, float)):
                    raise TopologyError(f"{here}: expected a number")
                kwargs[f.name] = float(raw)
    return cls(**kwargs)


_DATACLASSES = {
    "PhiPoly": PhiPoly,
    "YorkCalcCoeffs": YorkCalcCoeffs,
    "FanParams": FanParams,
    "TowerParams": TowerParams,
    "CabinetParams": CabinetParams,
    "HruParams": HruParams,
    "TimingConfig": TimingConfig,
}


def strip_optional(typ: str) -> str:
    typ = typ.strip()
    if typ.startswith("Optional[") and typ.endswith("]"):
        return typ[len("Optional[") : -1]
    return typ


def is_dataclass_name(typ: str) -> bool:
    return strip_optional(typ) in _DATACLASSES


def parse_topology(text: str) -> SystemTopology:
    """Parse and fully validate a topology JSON document.

    Args:
        text: JSON document text.

    Returns:
        A validated SystemTopology with all defaults filled.

    Raises:
        TopologyError: malformed JSON, unknown/missing fields, or any
            out-of-range value; the message names the offending field path.
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise TopologyError(f"malformed JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise TopologyError("top-level document must be a JSON object")

    doc = dict(doc)
    version = doc.pop("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise TopologyError(f"schema_version: unsupported version {version!r}")

    for name in _REQUIRED:
        if name not in doc:
            raise TopologyError(f"{name}: required field missing")
        raw = doc[name]
        if isinstance(raw, bool) or not isinstance(raw, int):
            raise TopologyError(f"{name}: expected an integer")

    kwargs: dict[str, Any] = {k: doc[k] for k in _REQUIRED}
    nested = {
        "tower": TowerParams,
        "cabinet": CabinetParams,
        "timing": TimingConfig,
    }
    for key, cls in nested.items():
        block = doc.get(key, {})
        if not isinstance(block, dict):
            raise TopologyError(f"{key}: expected an object")
        kwargs[key] = _build(cls, block, key + ".")
    if "hru" in doc and doc["hru"] is not None:
        if not isinstance(doc["hru"], dict):
            raise TopologyError("hru: expected an object or null")
        kwargs["hru"] = _build(HruParams, doc["hru"], "hru.")
    if "ct_action_deltas" in doc:
        raw = doc["ct_action_deltas"]
        if not isinstance(raw, list):
            raise TopologyError("ct_action_deltas: expected an array")
        try:
            kwargs["ct_action_deltas"] = tuple(float(x) for x in raw)
        except (TypeError, ValueError):
            raise TopologyError("ct_action_deltas: expected an array of numbers") from None

    known_top = set(_REQUIRED) | set(nested) | {"hru", "ct_action_deltas"}
    for key in doc:
        if key not in known_top:
            raise TopologyError(f"{key}: unknown field")

    topo = SystemTopology(**kwargs)
    violations = validate_topology(topo)
    if violations:
        raise TopologyError("; ".join(violations))
    return topo


def _to_doc(obj: Any) -> Any:
    if is_dataclass(obj):
        return {f.name: _to_doc(getattr(obj, f.name)) for f in fields(obj)}
    if isinstance(obj, tuple):
        return list(obj)
    return obj


def serialize_topology(t: SystemTopology) -> str:
    """Serialize a topology to canonical JSON (round-trips via parse_topology)."""
    doc = {"schema_version": SCHEMA_VERSION}
    doc.update(_to_doc(t))
    if doc.get("hru") is None:
        doc.pop("hru")
    return json.dumps(doc, indent=2, sort_keys=True)


def topology_fingerprint(t: SystemTopology) -> str:
    """Stable hex digest identifying a topology (used in reports/checkpoints)."""
    import hashlib

    return hashlib.sha256(serialize_topology(t).encode()).hexdigest()[:16]
