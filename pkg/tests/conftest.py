"""Shared fixtures: small topologies, traces, and one trained policy bundle."""

from __future__ import annotations

import dataclasses

import pytest
from hypothesis import HealthCheck, settings

from coldloop import SystemTopology, synthetic_trace
from coldloop.topology import TimingConfig, TowerParams

settings.register_profile(
    "ci",
    derandomize=True,
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("ci")


def small_timing() -> TimingConfig:
    return TimingConfig(sim_time_step=5.0, step_size=60.0, max_episode_duration=1200.0)


@pytest.fixture(scope="session")
def small_topology() -> SystemTopology:
    """1 tower x 1 cell, 2 cabinets x 3 groups, 20-step episodes."""
    return SystemTopology(
        num_towers=1,
        cells_per_tower=1,
        num_cabinets=2,
        blade_groups_per_cabinet=3,
        tower=dataclasses.replace(TowerParams(), design_water_flow=6.0),
        timing=small_timing(),
    )


@pytest.fixture(scope="session")
def medium_topology() -> SystemTopology:
    """2 towers x 2 cells, 5 cabinets x 3 groups (the reference layout)."""
    return SystemTopology(
        num_towers=2,
        cells_per_tower=2,
        num_cabinets=5,
        blade_groups_per_cabinet=3,
        timing=small_timing(),
    )


@pytest.fixture(scope="session")
def small_trace(small_topology):
    return synthetic_trace(small_topology, duration=20000.0, seed=11)


@pytest.fixture(scope="session")
def medium_trace(medium_topology):
    return synthetic_trace(medium_topology, duration=20000.0, seed=11)
