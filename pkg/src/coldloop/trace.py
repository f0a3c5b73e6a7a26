"""Exogenous boundary conditions: ambient wet bulb and per-group IT load.

A trace is a time-indexed table (strictly increasing timestamps) of the
ambient wet-bulb temperature and one electrical load per blade group. The
simulator linearly interpolates between samples and holds the endpoints
outside the sampled range.

The module doubles as a dev utility: ``python -m coldloop.trace`` writes a
synthetic quasi-periodic trace CSV for a given plant layout.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np

from .topology import SystemTopology

# Accepted ambient wet-bulb window, K.
T_OWB_MIN = 243.15
T_OWB_MAX = 323.15


class TraceError(ValueError):
    """Raised for malformed or out-of-range trace data."""


def trace_columns(num_cabinets: int, blade_groups: int) -> list[str]:
    """Canonical CSV header for a (C cabinets) x (B groups) layout."""
    cols = ["timestamp_s", "t_owb_k"]
    for i in range(num_cabinets):
        for j in range(blade_groups):
            cols.append(f"load_c{i}_b{j}_w")
    return cols


@dataclass(frozen=True)
class ExogenousTrace:
    """In-memory trace: timestamps (s), wet bulb (K), loads (W).

    Attributes:
        timestamps: shape (T,), strictly increasing.
        t_owb: shape (T,), ambient wet-bulb temperature, K.
        loads: shape (T, C, B), electrical load per blade group, W.
    """

    timestamps: np.ndarray
    t_owb: np.ndarray
    loads: np.ndarray

    @property
    def duration(self) -> float:
        """Span of the sampled timestamps, s."""
        return float(self.timestamps[-1] - self.timestamps[0])

    def query(self, t: float) -> tuple[float, np.ndarray]:
        """Interpolated (wet bulb K, loads (C, B) W) at time ``t``.

        Clamp-holds the first/last sample outside the range.
        """
        ts = self.timestamps
        if t <= ts[0]:
            return float(self.t_owb[0]), self.loads[0]
        if t >= ts[-1]:
            return float(self.t_owb[-1]), self.loads[-1]
        hi = int(np.searchsorted(ts, t, side="right"))
        lo = hi - 1
        frac = (t - ts[lo]) / (ts[hi] - ts[lo])
        t_owb = self.t_owb[lo] + frac * (self.t_owb[hi] - self.t_owb[lo])
        loads = self.loads[lo] + frac * (self.loads[hi] - self.loads[lo])
        return float(t_owb), loads


def _validate_arrays(
    timestamps: np.ndarray, t_owb: np.ndarray, loads: np.ndarray
) -> None:
    if timestamps.ndim != 1 or len(timestamps) == 0:
        raise TraceError("trace must contain at least one sample row")
    if np.any(np.diff(timestamps) <= 0.0):
        raise TraceError("timestamps must be strictly increasing")
    if np.any(t_owb < T_OWB_MIN) or np.any(t_owb > T_OWB_MAX):
        raise TraceError(
            f"wet-bulb temperatures must lie in [{T_OWB_MIN}, {T_OWB_MAX}] K"
        )
    if np.any(loads < 0.0):
        raise TraceError("loads must be >= 0 W")
    if not (
        np.all(np.isfinite(timestamps))
        and np.all(np.isfinite(t_owb))
        and np.all(np.isfinite(loads))
    ):
        raise TraceError("trace values must be finite")


def make_trace(
    timestamps: np.ndarray, t_owb: np.ndarray, loads: np.ndarray
) -> ExogenousTrace:
    """Build and validate a trace from arrays (loads shaped (T, C, B))."""
    timestamps = np.asarray(timestamps, dtype=float)
    t_owb = np.asarray(t_owb, dtype=float)
    loads = np.asarray(loads, dtype=float)
    if loads.ndim != 3:
        raise TraceError(f"loads must have shape (T, C, B), got {loads.shape}")
    if not (len(timestamps) == len(t_owb) == len(loads)):
        raise TraceError("timestamps, wet bulb, and loads must share length")
    _validate_arrays(timestamps, t_owb, loads)
    return ExogenousTrace(timestamps=timestamps, t_owb=t_owb, loads=loads)


def load_trace(text: str, topology: SystemTopology) -> ExogenousTrace:
    """Parse a trace CSV for the given plant layout.

    The header must match ``trace_columns`` exactly (row-major cabinet then
    group order).

    Raises:
        TraceError: wrong header, ragged rows, non-numeric fields, or
            range/monotonicity violations.
    """
    expected = trace_columns(topology.num_cabinets, topology.blade_groups_per_cabinet)
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise TraceError("trace CSV is empty") from None
    if [h.strip() for h in header] != expected:
        raise TraceError(
            f"trace header {header} does not match expected columns {expected}"
        )

    rows = []
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != len(expected):
            raise TraceError(
                f"row {lineno}: {len(row)} fields, expected {len(expected)}"
            )
        try:
            rows.append([float(v) for v in row])
        except ValueError as exc:
            raise TraceError(f"row {lineno}: non-numeric field ({exc})") from None
    if not rows:
        raise TraceError("trace CSV has a header but no sample rows")

    data = np.asarray(rows, dtype=float)
    c = topology.num_cabinets
    b = topology.blade_groups_per_cabinet
    return make_trace(
        data[:, 0], data[:, 1], data[:, 2:].reshape(len(rows), c, b)
    )


def save_trace(trace: ExogenousTrace) -> str:
    """Serialize a trace back to CSV text (full float precision)."""
    n, c, b = trace.loads.shape
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(trace_columns(c, b))
    flat = trace.loads.reshape(n, c * b)
    for k in range(n):
        writer.writerow(
            [repr(float(trace.timestamps[k])), repr(float(trace.t_owb[k]))]
            + [repr(float(v)) for v in flat[k]]
        )
    return out.getvalue()


def synthetic_trace(
    topology: SystemTopology,
    duration: float,
    seed: int,
    sample_dt: float = 60.0,
) -> ExogenousTrace:
    """Generate a quasi-periodic synthetic trace for a plant layout.

    Loads mix two incommensurate sinusoids per blade group (periods 1 h and
    1 h divided by the golden ratio) around a per-group base drawn from the
    seed, clipped to [5%, 92%] of nominal group power. The wet bulb follows
    a daily cycle plus a slower incommensurate wobble around 15 degC.
    """
    if duration <= 0.0 or sample_dt <= 0.0:
        raise TraceError("duration and sample_dt must be > 0")
    rng = np.random.Generator(np.random.PCG64(seed))
    c = topology.num_cabinets
    b = topology.blade_groups_per_cabinet
    p_nom = topology.cabinet.P_nom

    n = int(math.floor(duration / sample_dt)) + 1
    t = np.arange(n, dtype=float) * sample_dt

    base = rng.uniform(0.25, 0.65, size=(c, b)) * p_nom
    amp = rng.uniform(0.15, 0.35, size=(c, b)) * p_nom
    phase1 = rng.uniform(0.0, 2.0 * math.pi, size=(c, b))
    phase2 = rng.uniform(0.0, 2.0 * math.pi, size=(c, b))
    golden = (1.0 + math.sqrt(5.0)) / 2.0
    p1 = 3600.0
    p2 = p1 / golden

    w1 = np.sin(2.0 * math.pi * t[:, None, None] / p1 + phase1[None])
    w2 = np.sin(2.0 * math.pi * t[:, None, None] / p2 + phase2[None])
    loads = np.clip(
        base[None] + amp[None] * (0.6 * w1 + 0.4 * w2),
        0.05 * p_nom,
        0.92 * p_nom,
    )

    p3 = 86400.0 / math.e
    t_owb = (
        288.15
        + 4.0 * np.sin(2.0 * math.pi * t / 86400.0 + 1.0)
        + 1.5 * np.sin(2.0 * math.pi * t / p3)
    )
    return make_trace(t, t_owb, loads)


def _main() -> int:
    import argparse
    from pathlib import Path

    from .topology import parse_topology

    parser = argparse.ArgumentParser(
        prog="python -m coldloop.trace",
        description="Write a synthetic quasi-periodic trace CSV.",
    )
    parser.add_argument("--topology", required=True, help="plant topology JSON")
    parser.add_argument("--duration", type=float, required=True, help="seconds")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--sample-dt", type=float, default=60.0)
    parser.add_argument("--out", required=True, help="output CSV path")
    args = parser.parse_args()

    topology = parse_topology(Path(args.topology).read_text())
    trace = synthetic_trace(topology, args.duration, args.seed, args.sample_dt)
    Path(args.out).write_text(save_trace(trace))
    print(f"wrote {len(trace.timestamps)} samples to {args.out}")
    return 0


if __name__ == "__main__":
    raise SystemExit(_main())
