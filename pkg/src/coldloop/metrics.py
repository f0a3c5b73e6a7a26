"""Run-log metrics: thermal compliance, power, rewards, carbon.

A run log is the sequence of step-outcome dicts a rollout writes (one JSON
object per line). Averages are taken over step rows; time integrals use
every row including the initial (time-zero) state.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Sequence

import numpy as np

KELVIN = 273.15

# Fixed column order of the summary table.
SUMMARY_COLUMNS = (
    "control_type",
    "control_details",
    "d_blade_pct",
    "ct_avg_power_kw",
    "it_avg_cooling_power_kw",
    "avg_episode_reward_per_cabinet",
    "avg_episode_reward_per_tower",
)


class MetricsError(ValueError):
    """Raised for empty logs or malformed metric inputs."""


@dataclass(frozen=True)
class MetricConfig:
    """Thresholds and factors for run metrics.

    Attributes:
        upper_temp_c / lower_temp_c: strict comfort band for blade-group
            temperatures, degC.
        carbon_intensity: grid emission factor, kg CO2 per kWh.
    """

    upper_temp_c: float = 40.0
    lower_temp_c: float = 20.0
    carbon_intensity: float = 0.4


def d_blade(temps_c: np.ndarray, cfg: MetricConfig | None = None) -> float:
    """Share of blade-group temperature samples strictly inside the band, %.

    Args:
        temps_c: any-shape array of temperatures, degC.
    """
    cfg = cfg or MetricConfig()
    t = np.asarray(temps_c, dtype=np.float64)
    if t.size == 0:
        raise MetricsError("no temperature samples")
    inside = (t > cfg.lower_temp_c) & (t < cfg.upper_temp_c)
    return 100.0 * float(inside.sum()) / t.size


def carbon_footprint(
    power_w: Sequence[float],
    intensity: float | Sequence[float],
    dt: float,
) -> float:
    """Carbon mass of a uniformly sampled electrical power series, tonnes CO2.

    Trapezoidal energy integral of ``power_w`` sampled every ``dt`` seconds,
    converted to kWh, times the emission intensity (kg/kWh). A per-sample
    intensity series integrates the product instead, so the result stays
    linear in intensity and additive over partitions sharing a boundary
    sample.
    """
    p = np.asarray(power_w, dtype=np.float64)
    if p.ndim != 1:
        raise MetricsError("power series must be 1-D")
    if len(p) < 2:
        raise MetricsError("need at least two samples to integrate")
    if np.any(p < 0.0):
        raise MetricsError("power samples must be >= 0")
    if dt <= 0.0:
        raise MetricsError(f"sample spacing {dt} s must be > 0")
    if isinstance(intensity, (int, float)):
        rate = p * float(intensity)
    else:
        i_arr = np.asarray(intensity, dtype=np.float64)
        if i_arr.shape != p.shape:
            raise MetricsError("intensity series must align with the power series")
        rate = p * i_arr
    kg = float(np.trapezoid(rate, dx=dt)) / 3.6e6  # W*s -> kWh times kg/kWh
    return kg / 1000.0


def read_jsonl(path: str | Path) -> list[dict[str, Any]]:
    """Load a run log (one JSON object per line)."""
    rows = []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if line:
            rows.append(json.loads(line))
    if not rows:
        raise MetricsError(f"run log {path} is empty")
    return rows


def compute_run_metrics(
    rows: Sequence[dict[str, Any]],
    control_type: str,
    control_details: str,
    cfg: MetricConfig | None = None,
) -> dict[str, Any]:
    """Aggregate one run log into the summary metrics.

    Produces the seven summary columns plus carbon accounting (tower fans
    alone and fans plus IT electrical load) and mean recovered heat.
    """
    cfg = cfg or MetricConfig()
    if not rows:
        raise MetricsError("run log is empty")
    step_rows = [r for r in rows if r["info"]["step"] > 0]
    if not step_rows:
        raise MetricsError("run log has no step rows (only the initial state)")

    temps = np.asarray(
        [r["info"]["blade_t_k"] for r in step_rows], dtype=np.float64
    ) - KELVIN
    d_pct = d_blade(temps, cfg)

    fan_kw = [
        sum(sum(cells) for cells in r["info"]["p_cell_w"]) / 1000.0 for r in step_rows
    ]
    cooling_kw = [sum(r["info"]["q_cabinet_w"]) / 1000.0 for r in step_rows]

    blade_ep, ct_ep = [], []
    blade_acc = None
    ct_acc = None
    for r in step_rows:
        br = r["blade_rewards"]
        cr = r["ct_rewards"]
        if blade_acc is None:
            blade_acc = [0.0] * len(br)
            ct_acc = [0.0] * len(cr)
        blade_acc = [a + x for a, x in zip(blade_acc, br)]
        ct_acc = [a + x for a, x in zip(ct_acc, cr)]
        if r["done"]:
            blade_ep.append(sum(blade_acc) / len(blade_acc))
            ct_ep.append(sum(ct_acc) / len(ct_acc))
            blade_acc = None
            ct_acc = None
    if not blade_ep:
        # Unfinished run: report the partial episode.
        blade_ep.append(sum(blade_acc) / len(blade_acc))
        ct_ep.append(sum(ct_acc) / len(ct_acc))

    fan_w_series = [
        sum(sum(cells) for cells in r["info"]["p_cell_w"]) for r in rows
    ]
    b = len(rows[0]["info"]["blade_t_k"][0])
    it_w_series = [
        1000.0 * sum(sum(obs[b:]) for obs in r["blade_obs"]) for r in rows
    ]

    # Concatenated episodes restart the clock at zero, so integrate each
    # segment (reset row to the next reset) separately and sum.
    seg_bounds: list[tuple[int, int]] = []
    start = 0
    for k, r in enumerate(rows):
        if k > 0 and r["info"]["step"] == 0:
            seg_bounds.append((start, k))
            start = k
    seg_bounds.append((start, len(rows)))

    def carbon_of(series: Sequence[float]) -> float:
        total = 0.0
        for lo, hi in seg_bounds:
            if hi - lo < 2:
                continue
            dt = rows[lo + 1]["info"]["elapsed_s"] - rows[lo]["info"]["elapsed_s"]
            if isinstance(cfg.carbon_intensity, (int, float)):
                intensity: float | list[float] = float(cfg.carbon_intensity)
            else:
                intensity = list(cfg.carbon_intensity[lo:hi])
            total += carbon_footprint(series[lo:hi], intensity, dt)
        return total

    carbon_tower = carbon_of(fan_w_series)
    carbon_total = carbon_of([f + i for f, i in zip(fan_w_series, it_w_series)])

    return {
        "control_type": control_type,
        "control_details": control_details,
        "d_blade_pct": d_pct,
        "ct_avg_power_kw": float(np.mean(fan_kw)),
        "it_avg_cooling_power_kw": float(np.mean(cooling_kw)),
        "avg_episode_reward_per_cabinet": float(np.mean(blade_ep)),
        "avg_episode_reward_per_tower": float(np.mean(ct_ep)),
        "episodes": len(blade_ep),
        "steps": len(step_rows),
        "carbon_tonnes_tower": carbon_tower,
        "carbon_tonnes_total": carbon_total,
        "avg_q_recovered_kw": float(
            np.mean([r["info"]["q_recovered_w"] for r in step_rows]) / 1000.0
        ),
    }


def summary_row(metrics: dict[str, Any]) -> dict[str, Any]:
    """Restrict a metrics dict to the seven summary columns, in order."""
    return {k: metrics[k] for k in SUMMARY_COLUMNS}


def emit_report(
    metrics: dict[str, Any],
    out_dir: str | Path,
    basename: str = "report",
    fingerprint: dict[str, Any] | None = None,
) -> list[Path]:
    """Write the metrics as JSON (full) and CSV (seven-column summary).

    Both files are byte-deterministic for identical inputs: sorted JSON
    keys, fixed CSV column order, plain float repr.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    doc = dict(metrics)
    if fingerprint:
        doc["fingerprint"] = fingerprint
    json_path = out / f"{basename}.json"
    json_path.write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n")

    row = summary_row(metrics)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SUMMARY_COLUMNS)
    writer.writerow([repr(row[k]) if isinstance(row[k], float) else row[k] for k in SUMMARY_COLUMNS])
    csv_path = out / f"{basename}.csv"
    csv_path.write_text(buf.getvalue())
    return [json_path, csv_path]
