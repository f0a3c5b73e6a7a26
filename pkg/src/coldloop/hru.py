"""Heat-recovery unit on the facility hot-water return.

An effectiveness-style exchanger diverts part of the hot return stream's
heat into a sink loop (e.g. district heating) before the water reaches the
towers. Recovered heat lowers the tower load one-for-one.
"""

from __future__ import annotations

from .topology import HruParams


class HruModelError(ValueError):
    """Raised for invalid heat-recovery inputs."""


def heat_recovered(
    stream_T: float, stream_m: float, stream_cp: float, params: HruParams
) -> float:
    """Heat moved from the hot stream into the sink, W (never negative).

    Q_rec = effectiveness * C_min * max(0, stream_T - sink_inlet_T) with
    C_min the smaller of the two capacity rates.
    """
    if stream_m <= 0.0:
        raise HruModelError(f"stream flow {stream_m} kg/s must be > 0")
    if stream_cp <= 0.0:
        raise HruModelError(f"stream specific heat {stream_cp} must be > 0")
    c_min = min(stream_m * stream_cp, params.sink_m_flow * params.sink_cp)
    return params.effectiveness * c_min * max(0.0, stream_T - params.sink_inlet_T)


def hru_step(
    stream_T: float, stream_m: float, stream_cp: float, params: HruParams
) -> tuple[float, float]:
    """Pass the hot stream through the recovery unit.

    Returns:
        (downstream_T, Q_rec): stream temperature after recovery, K, and the
        recovered heat, W.
    """
    q_rec = heat_recovered(stream_T, stream_m, stream_cp, params)
    return stream_T - q_rec / (stream_m * stream_cp), q_rec
