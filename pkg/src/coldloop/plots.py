"""Report figures rendered to PNG files.

Uses the non-interactive backend and pinned metadata so identical inputs
produce byte-identical files.
"""

from __future__ import annotations

from pathlib import Path
from typing import Any, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

KELVIN = 273.15
_SAVEFIG_KWARGS = {"dpi": 110, "metadata": {"Software": "coldloop"}}


def _finish(fig, path: Path) -> Path:
    fig.savefig(path, **_SAVEFIG_KWARGS)
    plt.close(fig)
    return path


def plot_blade_temperatures(
    rows: Sequence[dict[str, Any]],
    out_path: str | Path,
    band: tuple[float, float] = (20.0, 40.0),
) -> Path:
    """Blade-group temperatures over time with the comfort band marked."""
    hours = [r["info"]["elapsed_s"] / 3600.0 for r in rows]
    temps = [r["info"]["blade_t_k"] for r in rows]
    n_cab = len(temps[0])
    n_grp = len(temps[0][0])

    fig, ax = plt.subplots(figsize=(8, 4.5))
    for i in range(n_cab):
        for j in range(n_grp):
            series = [t[i][j] - KELVIN for t in temps]
            ax.plot(hours, series, linewidth=0.9, label=f"cab {i} grp {j}")
    ax.axhline(band[0], color="tab:blue", linestyle="--", linewidth=1.0)
    ax.axhline(band[1], color="tab:red", linestyle="--", linewidth=1.0)
    ax.set_xlabel("time [h]")
    ax.set_ylabel("blade-group temperature [degC]")
    ax.set_title("Blade-group temperatures")
    if n_cab * n_grp <= 12:
        ax.legend(fontsize=7, ncol=2)
    fig.tight_layout()
    return _finish(fig, Path(out_path))


def plot_tower_power(rows: Sequence[dict[str, Any]], out_path: str | Path) -> Path:
    """Total tower fan power and recovered heat over time."""
    hours = [r["info"]["elapsed_s"] / 3600.0 for r in rows]
    fan_kw = [sum(sum(c) for c in r["info"]["p_cell_w"]) / 1000.0 for r in rows]
    rec_kw = [r["info"]["q_recovered_w"] / 1000.0 for r in rows]

    fig, ax = plt.subplots(figsize=(8, 4.5))
    ax.plot(hours, fan_kw, color="tab:orange", label="tower fan power [kW]")
    if any(v > 0.0 for v in rec_kw):
        ax.plot(hours, rec_kw, color="tab:green", label="recovered heat [kW]")
    ax.set_xlabel("time [h]")
    ax.set_ylabel("power [kW]")
    ax.set_title("Tower-side power")
    ax.legend(fontsize=8)
    fig.tight_layout()
    return _finish(fig, Path(out_path))


def plot_training_curves(
    episode_rows: Sequence[dict[str, Any]], out_path: str | Path
) -> Path:
    """Per-episode rewards of both policies over training steps."""
    steps = [r["step"] for r in episode_rows]
    blade = [r["blade_reward"] for r in episode_rows]
    ct = [r["ct_reward"] for r in episode_rows]

    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(8, 6), sharex=True)
    ax1.plot(steps, blade, color="tab:blue")
    ax1.set_ylabel("cabinet episode reward")
    ax1.set_title("Training curves")
    ax2.plot(steps, ct, color="tab:orange")
    ax2.set_ylabel("tower episode reward")
    ax2.set_xlabel("environment steps")
    fig.tight_layout()
    return _finish(fig, Path(out_path))


def render_report_figures(
    rows: Sequence[dict[str, Any]],
    out_dir: str | Path,
    episode_rows: Sequence[dict[str, Any]] | None = None,
    band: tuple[float, float] = (20.0, 40.0),
) -> list[Path]:
    """Render the standard report figures into a directory."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = [
        plot_blade_temperatures(rows, out / "blade_temperatures.png", band),
        plot_tower_power(rows, out / "tower_power.png"),
    ]
    if episode_rows:
        paths.append(plot_training_curves(episode_rows, out / "training_curves.png"))
    return paths
