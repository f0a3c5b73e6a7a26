"""Run-log metrics: band compliance, carbon integration, report emission.

The carbon oracle is a fine-grid Riemann sum over the piecewise-linear
power interpolant; the compliance oracle is a literal per-sample loop.
"""

from __future__ import annotations

import json
import math

import numpy as np
import pytest

from coldloop import MetricConfig, MetricsError, compute_run_metrics, d_blade, emit_report
from coldloop.metrics import (
    SUMMARY_COLUMNS,
    carbon_footprint,
    read_jsonl,
    summary_row,
)


def seeded(n=0):
    return np.random.Generator(np.random.PCG64(n))


# -- band compliance -----------------------------------------------------------------


def brute_d_blade(temps, lo, hi):
    flat = np.asarray(temps, dtype=np.float64).ravel()
    inside = sum(1 for t in flat if lo < t < hi)
    return 100.0 * inside / len(flat)


def test_d_blade_all_inside():
    assert d_blade(np.array([25.0, 30.0, 39.9])) == pytest.approx(100.0)


def test_d_blade_band_is_strict():
    # Boundary samples are outside the open interval (20, 40).
    assert d_blade(np.array([20.0, 40.0, 30.0])) == pytest.approx(100.0 / 3.0)


def test_d_blade_hand_fraction():
    temps = np.array([[19.0, 25.0], [41.0, 30.0]])
    assert d_blade(temps) == pytest.approx(50.0)


def test_d_blade_matches_brute_force_randomized():
    rng = seeded(1)
    for _ in range(100):
        shape = (int(rng.integers(1, 8)), int(rng.integers(1, 8)))
        temps = rng.uniform(10.0, 50.0, shape)
        got = d_blade(temps)
        want = brute_d_blade(temps, 20.0, 40.0)
        assert got == pytest.approx(want, abs=1e-12)


def test_d_blade_permutation_invariant():
    rng = seeded(2)
    temps = rng.uniform(15.0, 45.0, 40)
    assert d_blade(temps) == d_blade(temps[rng.permutation(40)])


def test_d_blade_custom_band():
    cfg = MetricConfig(upper_temp_c=35.0, lower_temp_c=25.0)
    assert d_blade(np.array([30.0, 20.0, 40.0]), cfg) == pytest.approx(100.0 / 3.0)


def test_d_blade_empty_rejected():
    with pytest.raises(MetricsError):
        d_blade(np.array([]))


# -- carbon footprint ----------------------------------------------------------------


def riemann_carbon(power_w, intensity, dt):
    """Fine-grid midpoint sum over the piecewise-linear interpolant."""
    total_kg = 0.0
    for i in range(len(power_w) - 1):
        p0, p1 = power_w[i] * intensity[i], power_w[i + 1] * intensity[i + 1]
        n = 2000
        h = dt / n
        for k in range(n):
            frac = (k + 0.5) / n
            total_kg += (p0 + (p1 - p0) * frac) * h
    return total_kg / 3.6e6 / 1000.0


def test_carbon_constant_power_hand_value():
    # 50 kW held for two hours at 0.4 kg/kWh -> 100 kWh -> 40 kg = 0.04 t.
    got = carbon_footprint([50e3, 50e3, 50e3], 0.4, 3600.0)
    assert got == pytest.approx(0.04, rel=1e-12)


def test_carbon_zero_intensity_is_zero():
    assert carbon_footprint([5e4, 8e4, 6e4], 0.0, 60.0) == 0.0


def test_carbon_matches_riemann_oracle():
    rng = seeded(3)
    for _ in range(10):
        n = int(rng.integers(3, 12))
        power = rng.uniform(0.0, 2e5, n)
        intensity = float(rng.uniform(0.1, 0.9))
        dt = float(rng.uniform(10.0, 500.0))
        got = carbon_footprint(power, intensity, dt)
        want = riemann_carbon(power, [intensity] * n, dt)
        assert got == pytest.approx(want, rel=1e-6)


def test_carbon_per_sample_intensity_series():
    rng = seeded(4)
    power = rng.uniform(1e4, 1e5, 4)
    intensity = rng.uniform(0.2, 0.8, 4)
    got = carbon_footprint(power, intensity, 60.0)
    want = riemann_carbon(power, intensity, 60.0)
    assert got == pytest.approx(want, rel=1e-6)


def test_carbon_linear_in_intensity():
    power = [5e4, 8e4, 6e4]
    one = carbon_footprint(power, 1.0, 100.0)
    half = carbon_footprint(power, 0.5, 100.0)
    assert half == pytest.approx(0.5 * one, rel=1e-12)


def test_carbon_additive_over_partitions():
    power = [5e4, 8e4, 6e4, 9e4, 2e4]
    whole = carbon_footprint(power, 0.4, 120.0)
    first = carbon_footprint(power[:3], 0.4, 120.0)
    second = carbon_footprint(power[2:], 0.4, 120.0)
    assert whole == pytest.approx(first + second, rel=1e-12)


def test_carbon_validation():
    with pytest.raises(MetricsError):
        carbon_footprint([1.0], 0.4, 60.0)
    with pytest.raises(MetricsError, match=">= 0"):
        carbon_footprint([1.0, -2.0], 0.4, 60.0)
    with pytest.raises(MetricsError):
        carbon_footprint([1.0, 2.0], 0.4, 0.0)
    with pytest.raises(MetricsError):
        carbon_footprint([1.0, 2.0], [0.4], 60.0)


# -- run-log aggregation --------------------------------------------------------------


def fake_rows(steps=4, cabinets=2, blades=2, towers=1, cells=1, step_s=60.0):
    """Minimal synthetic run log with analytically known aggregates."""
    rows = []
    for k in range(steps + 1):
        temps = [[25.0 + k + i for _ in range(blades)] for i in range(cabinets)]
        powers_kw = [[10.0 + i for _ in range(blades)] for i in range(cabinets)]
        p_cells = [[1000.0 * (k + 1) for _ in range(cells)] for _ in range(towers)]
        q_cab = [2.0e4 + 1.0e3 * k for _ in range(cabinets)]
        rows.append(
            {
                "blade_obs": [
                    [t + 273.15 for t in temps[i]] + powers_kw[i]
                    for i in range(cabinets)
                ],
                "ct_obs": [[0.0] * (cells + towers + 1) for _ in range(towers)],
                "blade_rewards": [
                    0.0 if k == 0 else -sum(row) for row in temps
                ],
                "ct_rewards": [
                    0.0 if k == 0 else -sum(c) / 1000.0 for c in p_cells
                ],
                "done": k == steps,
                "info": {
                    "step": k,
                    "elapsed_s": step_s * k,
                    "blade_t_k": [[t + 273.15 for t in row] for row in temps],
                    "p_cell_w": p_cells,
                    "q_cabinet_w": q_cab,
                    "q_recovered_w": 500.0,
                },
            }
        )
    return rows


def test_compute_run_metrics_hand_checked():
    rows = fake_rows()
    m = compute_run_metrics(rows, "baseline", "unit test")
    assert m["control_type"] == "baseline"
    assert m["control_details"] == "unit test"
    assert m["steps"] == 4 and m["episodes"] == 1

    # Temperatures over step rows: 26..29 (+i per cabinet), all inside (20, 40).
    assert m["d_blade_pct"] == pytest.approx(100.0)

    # Fan power over step rows k=1..4: (k+1) kW -> mean of 2,3,4,5.
    assert m["ct_avg_power_kw"] == pytest.approx(3.5, rel=1e-12)

    # Cabinet cooling duty: 2 cabinets * (20 + k) kW for k=1..4.
    want_cool = np.mean([2 * (20.0 + k) for k in range(1, 5)])
    assert m["it_avg_cooling_power_kw"] == pytest.approx(want_cool, rel=1e-12)

    # Episode reward per cabinet: sum_k -(2*(25+k)+1) averaged over cabinets.
    want_blade = np.mean(
        [sum(-(2 * (25.0 + k + i)) for k in range(1, 5)) for i in range(2)]
    )
    assert m["avg_episode_reward_per_cabinet"] == pytest.approx(want_blade, rel=1e-12)
    want_ct = sum(-(k + 1.0) for k in range(1, 5))
    assert m["avg_episode_reward_per_tower"] == pytest.approx(want_ct, rel=1e-12)

    # Carbon integrates over ALL rows including the initial state.
    fan_w = [1000.0 * (k + 1) for k in range(5)]
    assert m["carbon_tonnes_tower"] == pytest.approx(
        carbon_footprint(fan_w, 0.4, 60.0), rel=1e-12
    )
    it_w = [1000.0 * ((10.0 + 10.0) + (11.0 + 11.0)) for _ in range(5)]
    assert m["carbon_tonnes_total"] == pytest.approx(
        carbon_footprint([f + i for f, i in zip(fan_w, it_w)], 0.4, 60.0), rel=1e-12
    )
    assert m["avg_q_recovered_kw"] == pytest.approx(0.5, rel=1e-12)


def test_compute_run_metrics_multi_episode_mean():
    # Two identical episodes concatenated the way rollouts write them:
    # the second episode's clock restarts at zero.
    rows = fake_rows(steps=4)
    doubled = rows + fake_rows(steps=4)
    m2 = compute_run_metrics(doubled, "x", "y")
    m1 = compute_run_metrics(rows, "x", "y")
    assert m2["episodes"] == 2
    assert m2["avg_episode_reward_per_cabinet"] == pytest.approx(
        m1["avg_episode_reward_per_cabinet"], rel=1e-12
    )
    # Integrals accumulate per episode segment: twice one episode's mass.
    assert m2["carbon_tonnes_tower"] == pytest.approx(
        2.0 * m1["carbon_tonnes_tower"], rel=1e-12
    )
    assert m2["carbon_tonnes_total"] == pytest.approx(
        2.0 * m1["carbon_tonnes_total"], rel=1e-12
    )


def test_compute_run_metrics_partial_episode():
    rows = fake_rows(steps=4)
    rows[-1]["done"] = False  # never finishes
    m = compute_run_metrics(rows, "x", "y")
    assert m["episodes"] == 1  # the partial episode is reported


def test_compute_run_metrics_validation():
    with pytest.raises(MetricsError):
        compute_run_metrics([], "x", "y")
    only_reset = fake_rows(steps=1)[:1]
    with pytest.raises(MetricsError):
        compute_run_metrics(only_reset, "x", "y")


def test_summary_row_order():
    m = compute_run_metrics(fake_rows(), "baseline", "d")
    row = summary_row(m)
    assert tuple(row) == SUMMARY_COLUMNS


# -- report emission ------------------------------------------------------------------


def test_emit_report_files_and_round_trip(tmp_path):
    m = compute_run_metrics(fake_rows(), "baseline", "demo")
    paths = emit_report(m, tmp_path, fingerprint={"trace_sha": "abc"})
    names = sorted(p.name for p in paths)
    assert names == ["report.csv", "report.json"]

    doc = json.loads((tmp_path / "report.json").read_text())
    assert doc["fingerprint"] == {"trace_sha": "abc"}
    for key in SUMMARY_COLUMNS:
        assert doc[key] == m[key]

    lines = (tmp_path / "report.csv").read_text().splitlines()
    assert lines[0] == ",".join(SUMMARY_COLUMNS)
    cells = lines[1].split(",")
    assert cells[0] == "baseline" and cells[1] == "demo"
    # Float cells use repr, so they parse back exactly.
    assert float(cells[2]) == m["d_blade_pct"]
    assert float(cells[3]) == m["ct_avg_power_kw"]


def test_emit_report_byte_deterministic(tmp_path):
    m = compute_run_metrics(fake_rows(), "baseline", "demo")
    emit_report(m, tmp_path / "a")
    emit_report(m, tmp_path / "b")
    assert (tmp_path / "a/report.json").read_bytes() == (tmp_path / "b/report.json").read_bytes()
    assert (tmp_path / "a/report.csv").read_bytes() == (tmp_path / "b/report.csv").read_bytes()


def test_emit_report_custom_basename(tmp_path):
    m = compute_run_metrics(fake_rows(), "x", "y")
    paths = emit_report(m, tmp_path, basename="summary")
    assert sorted(p.name for p in paths) == ["summary.csv", "summary.json"]


def test_read_jsonl_round_trip(tmp_path):
    rows = fake_rows(steps=2)
    path = tmp_path / "steps.jsonl"
    path.write_text(
        "\n".join(json.dumps(r, sort_keys=True, separators=(",", ":")) for r in rows)
        + "\n"
    )
    back = read_jsonl(path)
    assert back == rows


def test_read_jsonl_empty_rejected(tmp_path):
    path = tmp_path / "steps.jsonl"
    path.write_text("\n\n")
    with pytest.raises(MetricsError, match="empty"):
        read_jsonl(path)


def test_metrics_from_real_rollout(small_topology, small_trace):
    """End-to-end: a genuine environment log satisfies the aggregator."""
    from coldloop import PlantEnv, outcome_to_dict
    from coldloop.ppo import UniformRandomController, run_episode

    env = PlantEnv(small_topology, small_trace, seed=0)
    outcomes = run_episode(env, UniformRandomController(small_topology, seed=1))
    rows = [outcome_to_dict(o) for o in outcomes]
    m = compute_run_metrics(rows, "random", "seed 1")
    assert 0.0 <= m["d_blade_pct"] <= 100.0
    assert m["ct_avg_power_kw"] > 0.0
    assert m["steps"] == small_topology.episode_steps
    assert math.isfinite(m["carbon_tonnes_total"])
    assert m["carbon_tonnes_total"] >= m["carbon_tonnes_tower"]
