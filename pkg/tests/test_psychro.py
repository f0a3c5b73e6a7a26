"""Moist-air property functions against independent oracles.

Oracle policy: saturation pressure and enthalpy are recomputed here from
their defining formulas with locally spelled-out constants; the wet-bulb
solver is checked against a brute-force bisection at 1e-6 K resolution
that shares only the property formulas, not the solver.
"""

from __future__ import annotations

import math

import numpy as np
import pytest

from coldloop.psychro import (
    KELVIN,
    MoistAirState,
    PsychroError,
    humidity_ratio_from_rh,
    latent_heat,
    moist_air_enthalpy,
    saturation_humidity_ratio,
    saturation_pressure,
    wetbulb_temperature,
)

ATM = 101325.0


def oracle_p_sat(T_k: float) -> float:
    """Magnus correlation over liquid water, spelled out independently."""
    t = T_k - 273.15
    return 610.94 * math.exp(17.625 * t / (t + 243.04))


def oracle_enthalpy(T_k: float, X: float) -> float:
    t = T_k - 273.15
    return 1006.0 * t + X * (2.501e6 + 1860.0 * t)


def oracle_x_sat(T_k: float, p: float) -> float:
    ps = oracle_p_sat(T_k)
    return 0.622 * ps / (p - ps)


def oracle_wetbulb(T_k: float, X: float, p: float) -> float:
    """Brute-force bisection at 1e-6 K on the adiabatic-saturation balance."""

    def residual(t_wb_k: float) -> float:
        x_wb = oracle_x_sat(t_wb_k, p)
        h_in = oracle_enthalpy(T_k, X)
        h_wb = oracle_enthalpy(t_wb_k, x_wb)
        liquid = (x_wb - X) * 4186.0 * (t_wb_k - 273.15)
        return h_wb - h_in - liquid

    lo, hi = T_k - 100.0, T_k
    if residual(hi) <= 0.0:
        return hi
    while hi - lo > 1e-6:
        mid = 0.5 * (lo + hi)
        if residual(mid) > 0.0:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


# -- saturation pressure -------------------------------------------------------


def test_p_sat_at_20c_matches_hand_value():
    # oracle_p_sat(293.15) evaluated by hand:
    # 610.94 * exp(17.625*20/263.04) = 610.94 * exp(1.3401004...) = 2333.44...
    got = saturation_pressure(293.15)
    assert got == pytest.approx(2333.4406, abs=0.01)
    assert got == pytest.approx(oracle_p_sat(293.15), rel=1e-12)


def test_p_sat_monotone():
    assert saturation_pressure(300.0) > saturation_pressure(290.0)
    temps = np.linspace(243.15, 323.15, 200)
    vals = [saturation_pressure(t) for t in temps]
    assert all(b > a for a, b in zip(vals, vals[1:]))


def test_p_sat_window_enforced():
    with pytest.raises(PsychroError):
        saturation_pressure(150.0)
    with pytest.raises(PsychroError):
        saturation_pressure(500.0)


# -- humidity ratio ------------------------------------------------------------


def test_humidity_ratio_zero_rh():
    assert humidity_ratio_from_rh(293.15, 0.0, ATM) == 0.0


def test_humidity_ratio_saturated_matches_oracle():
    got = humidity_ratio_from_rh(293.15, 1.0, ATM)
    ps = oracle_p_sat(293.15)
    assert got == pytest.approx(0.622 * ps / (ATM - ps), rel=1e-12)
    assert got == pytest.approx(saturation_humidity_ratio(293.15, ATM), rel=1e-12)


def test_humidity_ratio_bad_rh():
    with pytest.raises(PsychroError):
        humidity_ratio_from_rh(293.15, 1.2, ATM)
    with pytest.raises(PsychroError):
        humidity_ratio_from_rh(293.15, -0.1, ATM)


def test_humidity_ratio_vapor_pressure_guard():
    # At pressures at/below the vapor pressure the ratio diverges.
    ps = saturation_pressure(293.15)
    with pytest.raises(PsychroError):
        humidity_ratio_from_rh(293.15, 1.0, ps)


def test_humidity_ratio_increasing_in_rh():
    vals = [humidity_ratio_from_rh(293.15, phi, ATM) for phi in np.linspace(0, 1, 50)]
    assert all(b > a for a, b in zip(vals, vals[1:]))


# -- enthalpy ------------------------------------------------------------------


def test_enthalpy_reference_zero():
    assert moist_air_enthalpy(273.15, 0.0) == 0.0


def test_enthalpy_dry_air_term():
    assert moist_air_enthalpy(283.15, 0.0) == pytest.approx(10060.0, rel=1e-12)


def test_enthalpy_moist_matches_oracle():
    want = 10060.0 + 0.005 * (2.501e6 + 1860.0 * 10.0)
    assert moist_air_enthalpy(283.15, 0.005) == pytest.approx(want, rel=1e-12)


def test_enthalpy_monotone_in_t_and_x():
    assert moist_air_enthalpy(300.0, 0.01) > moist_air_enthalpy(295.0, 0.01)
    assert moist_air_enthalpy(300.0, 0.02) > moist_air_enthalpy(300.0, 0.01)


def test_enthalpy_rejects_negative_x():
    with pytest.raises(PsychroError):
        moist_air_enthalpy(293.15, -1e-3)


def test_latent_heat_linear_in_celsius():
    assert latent_heat(273.15) == pytest.approx(2.501e6, rel=1e-12)
    assert latent_heat(303.15) == pytest.approx(2.501e6 - 2361.0 * 30.0, rel=1e-12)


# -- moist-air state -----------------------------------------------------------


def test_state_rejects_supersaturation():
    x_sat = saturation_humidity_ratio(293.15, ATM)
    MoistAirState(T=293.15, X=x_sat, p=ATM)  # boundary is fine
    with pytest.raises(PsychroError):
        MoistAirState(T=293.15, X=x_sat * 1.05, p=ATM)


def test_state_relative_humidity():
    x = humidity_ratio_from_rh(293.15, 0.4, ATM)
    state = MoistAirState(T=293.15, X=x, p=ATM)
    assert state.relative_humidity == pytest.approx(0.4, rel=1e-9)


# -- wet bulb ------------------------------------------------------------------


def test_wetbulb_saturated_is_fixed_point():
    x_sat = saturation_humidity_ratio(303.15, ATM)
    got = wetbulb_temperature(303.15, x_sat, ATM)
    assert abs(got - 303.15) < 1e-3


def test_wetbulb_dry_air_strictly_below():
    assert wetbulb_temperature(303.15, 0.0, ATM) < 303.15


def test_wetbulb_specific_case_matches_bisection_oracle():
    T, x = 298.15, humidity_ratio_from_rh(298.15, 0.4, ATM)
    got = wetbulb_temperature(T, x, ATM)
    want = oracle_wetbulb(T, x, ATM)
    assert abs(got - want) < 2e-4  # solver tolerance 1e-4 K


def test_wetbulb_random_states_match_oracle():
    rng = np.random.Generator(np.random.PCG64(42))
    for _ in range(25):
        T = float(rng.uniform(278.15, 318.15))
        phi = float(rng.uniform(0.0, 1.0))
        x = humidity_ratio_from_rh(T, phi, ATM)
        got = wetbulb_temperature(T, x, ATM)
        want = oracle_wetbulb(T, x, ATM)
        assert abs(got - want) < 2e-4
        assert got <= T + 1e-9


def test_wetbulb_bounded_by_drybulb():
    rng = np.random.Generator(np.random.PCG64(7))
    for _ in range(50):
        T = float(rng.uniform(263.15, 323.15))
        phi = float(rng.uniform(0.0, 1.0))
        x = humidity_ratio_from_rh(T, phi, ATM)
        assert wetbulb_temperature(T, x, ATM) <= T + 1e-9


def test_kelvin_constant():
    assert KELVIN == 273.15
