"""Command-line interface.

Subcommands:
    simulate  — roll the plant under the baseline or a fixed-action file
    train     — train both policies and write a checkpoint
    evaluate  — roll a checkpoint (modal) or the baseline and report metrics
    distill   — fit decision trees to a checkpoint and report fidelity
    report    — recompute metrics and figures from an existing step log

Exit codes: 0 success, 2 configuration error (bad flags or inputs),
3 runtime failure. All outputs land under --output-dir next to a
manifest.json; outputs are byte-deterministic for identical inputs and
seeds (the manifest stores content fingerprints, never paths).
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import io
import json
import math
import sys
from pathlib import Path
from typing import Any, Callable, Sequence

from . import __version__
from .baseline import TrimRespondController
from .distill import distill_policy, fidelity_report, fidelity_to_jsonable, tree_to_text
from .env import PlantEnv, StepOutcome, outcome_to_jsonl
from .metrics import MetricConfig, compute_run_metrics, emit_report, read_jsonl
from .plots import render_report_figures
from .ppo import (
    PolicyController,
    PpoConfig,
    load_checkpoint,
    save_checkpoint,
    train_centralized,
)
from .topology import SystemTopology, TopologyError, parse_topology, topology_fingerprint
from .trace import ExogenousTrace, TraceError, load_trace


class CliConfigError(ValueError):
    """Configuration problems that map to exit code 2."""


# -- argument plumbing ---------------------------------------------------------


def _add_common(parser: argparse.ArgumentParser, trace_required: bool = True) -> None:
    parser.add_argument("--topology", required=True, help="plant topology JSON file")
    parser.add_argument(
        "--trace", required=trace_required, help="exogenous trace CSV file"
    )
    parser.add_argument("--output-dir", "--output_dir", required=True)
    parser.add_argument("--seed", type=int, default=123)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="coldloop",
        description="Liquid-cooled plant simulator and control benchmark.",
    )
    parser.add_argument("--version", action="version", version=f"coldloop {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="roll the plant under a fixed controller")
    _add_common(p_sim)
    p_sim.add_argument(
        "--controller", choices=["baseline", "fixed"], default="baseline"
    )
    p_sim.add_argument("--actions", help="JSON action file (fixed controller)")
    p_sim.add_argument("--episodes", type=int, default=1)
    p_sim.add_argument("--max-steps", "--max_steps", type=int, default=None)
    p_sim.add_argument("--carbon-intensity", "--carbon_intensity", type=float, default=0.4)

    p_train = sub.add_parser("train", help="train both policies")
    _add_common(p_train)
    p_train.add_argument("--exp-name", "--exp_name", default="ppo_ma_ca")
    p_train.add_argument(
        "--max_training_timesteps", "--max-training-timesteps", type=int, default=200_000
    )
    p_train.add_argument("--max_ep_len", "--max-ep-len", type=int, default=None)
    p_train.add_argument("--lr_actor", "--lr-actor", type=float, default=3e-4)
    p_train.add_argument("--lr_critic", "--lr-critic", type=float, default=1e-3)
    p_train.add_argument("--K_epochs", "--k-epochs", type=int, default=50)
    p_train.add_argument("--eps_clip", "--eps-clip", type=float, default=0.2)
    p_train.add_argument("--gamma", type=float, default=0.80)
    p_train.add_argument("--gae_lambda", "--gae-lambda", type=float, default=0.95)
    p_train.add_argument("--minibatch_size", "--minibatch-size", type=int, default=32)
    p_train.add_argument("--ent-coef", "--ent_coef", type=float, default=0.01)
    p_train.add_argument("--vf-coef", "--vf_coef", type=float, default=0.5)
    p_train.add_argument("--num-agents", "--num_agents", type=int, default=1)
    p_train.add_argument("--update-interval", "--update_interval", type=int, default=2048)
    p_train.add_argument("--std-init", "--std_init", type=float, default=0.6)
    p_train.add_argument("--std-decay", "--std_decay", type=float, default=5e-4)
    p_train.add_argument("--std-min", "--std_min", type=float, default=0.1)
    p_train.add_argument("--ct-lr-actor", "--ct_lr_actor", type=float, default=6e-4)
    p_train.add_argument("--ct-gamma", "--ct_gamma", type=float, default=0.95)
    p_train.add_argument("--ct-vf-coef", "--ct_vf_coef", type=float, default=0.6)
    p_train.add_argument(
        "--checkpoint-interval", "--checkpoint_interval", type=int, default=0,
        help="write an extra checkpoint every N updates (0 = final only)",
    )

    p_eval = sub.add_parser("evaluate", help="roll a trained checkpoint or the baseline")
    _add_common(p_eval)
    p_eval.add_argument("--checkpoint", help="checkpoint JSON from `train`")
    p_eval.add_argument("--controller", choices=["baseline"], default=None)
    p_eval.add_argument("--episodes", type=int, default=5)
    p_eval.add_argument("--carbon-intensity", "--carbon_intensity", type=float, default=0.4)

    p_dist = sub.add_parser("distill", help="fit decision trees to a checkpoint")
    _add_common(p_dist)
    p_dist.add_argument("--checkpoint", required=True)
    p_dist.add_argument("--collect-episodes", "--collect_episodes", type=int, default=5)
    p_dist.add_argument("--resample-size", "--resample_size", type=int, default=20_000)
    p_dist.add_argument("--max-depth", "--max_depth", type=int, default=17)
    p_dist.add_argument("--min-leaf", "--min_leaf", type=int, default=1)
    p_dist.add_argument("--eval-episodes", "--eval_episodes", type=int, default=3)

    p_rep = sub.add_parser("report", help="metrics and figures from a step log")
    p_rep.add_argument("--input", required=True, help="steps.jsonl file or its directory")
    p_rep.add_argument("--output-dir", "--output_dir", required=True)
    p_rep.add_argument("--control-type", "--control_type", default="external")
    p_rep.add_argument("--control-details", "--control_details", default="replayed log")
    p_rep.add_argument("--carbon-intensity", "--carbon_intensity", type=float, default=0.4)

    p_gen = sub.add_parser("gen-trace", help="write a synthetic exogenous trace CSV")
    p_gen.add_argument("--topology", required=True)
    p_gen.add_argument("--duration", type=float, required=True, help="seconds")
    p_gen.add_argument("--sample-dt", "--sample_dt", type=float, default=60.0)
    p_gen.add_argument("--seed", type=int, default=123)
    p_gen.add_argument("--out", required=True, help="output CSV path")

    return parser


# -- shared helpers ------------------------------------------------------------


def _sha256_text(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def _load_inputs(args) -> tuple[SystemTopology, ExogenousTrace, dict[str, str]]:
    topo_path = Path(args.topology)
    if not topo_path.is_file():
        raise CliConfigError(f"topology file not found: {topo_path}")
    topo_text = topo_path.read_text()
    try:
        topology = parse_topology(topo_text)
    except TopologyError as exc:
        raise CliConfigError(f"invalid topology: {exc}") from exc

    trace_path = Path(args.trace)
    if not trace_path.is_file():
        raise CliConfigError(f"trace file not found: {trace_path}")
    trace_text = trace_path.read_text()
    try:
        trace = load_trace(trace_text, topology)
    except TraceError as exc:
        raise CliConfigError(f"invalid trace: {exc}") from exc

    fingerprint = {
        "topology": topology_fingerprint(topology),
        "trace_sha": _sha256_text(trace_text),
        "package_version": __version__,
    }
    return topology, trace, fingerprint


def _write_manifest(
    out_dir: Path,
    command: str,
    args_echo: dict[str, Any],
    outputs: Sequence[Path],
    fingerprint: dict[str, Any],
) -> None:
    doc = {
        "command": command,
        "args": args_echo,
        "fingerprint": fingerprint,
        "outputs": sorted(p.name for p in outputs),
    }
    (out_dir / "manifest.json").write_text(
        json.dumps(doc, sort_keys=True, indent=2) + "\n"
    )


def _args_echo(args, exclude: Sequence[str] = ()) -> dict[str, Any]:
    """Copy of parsed args for the manifest, omitting all path-typed fields."""
    skip = {"command", "output_dir", "topology", "trace", "actions", "checkpoint", "input"}
    skip.update(exclude)
    return {
        k: v for k, v in sorted(vars(args).items()) if k not in skip
    }


def _run_episodes(
    env: PlantEnv,
    controller_factory: Callable[[], Any],
    episodes: int,
    max_steps: int | None = None,
) -> list[StepOutcome]:
    """Roll full episodes (or a step-capped rollout) and collect outcomes."""
    all_outcomes: list[StepOutcome] = []
    for _ in range(episodes):
        controller = controller_factory()
        outcome = env.reset()
        all_outcomes.append(outcome)
        steps = 0
        while not outcome.done:
            if max_steps is not None and steps >= max_steps:
                break
            blade_actions, ct_actions, ct_setpoints = controller.act(outcome)
            outcome = env.step(blade_actions, ct_actions, ct_setpoints=ct_setpoints)
            all_outcomes.append(outcome)
            steps += 1
    return all_outcomes


def _write_rollout_outputs(
    out_dir: Path,
    outcomes: list[StepOutcome],
    control_type: str,
    control_details: str,
    carbon_intensity: float,
    fingerprint: dict[str, Any],
) -> list[Path]:
    steps_path = out_dir / "steps.jsonl"
    steps_path.write_text("".join(outcome_to_jsonl(o) + "\n" for o in outcomes))
    rows = [json.loads(outcome_to_jsonl(o)) for o in outcomes]
    metrics = compute_run_metrics(
        rows, control_type, control_details,
        MetricConfig(carbon_intensity=carbon_intensity),
    )
    paths = [steps_path]
    paths += emit_report(metrics, out_dir, fingerprint=fingerprint)
    paths += render_report_figures(rows, out_dir)
    return paths


def _load_bundle(checkpoint: str, topology: SystemTopology):
    """Load a checkpoint; any incompatibility is a configuration error."""
    from .ppo import PpoError

    ckpt = Path(checkpoint)
    if not ckpt.is_file():
        raise CliConfigError(f"checkpoint not found: {ckpt}")
    text = ckpt.read_text()
    try:
        bundle = load_checkpoint(ckpt, topology)
    except (PpoError, json.JSONDecodeError, KeyError, ValueError) as exc:
        raise CliConfigError(f"unusable checkpoint {ckpt}: {exc}") from exc
    return bundle, _sha256_text(text)


class _FixedActionController:
    """Replays an action file: constant actions or an explicit step list."""

    def __init__(self, doc: dict[str, Any], topology: SystemTopology):
        self.topology = topology
        if "steps" in doc:
            self.steps = doc["steps"]
            if not isinstance(self.steps, list) or not self.steps:
                raise CliConfigError("action file: 'steps' must be a non-empty list")
        else:
            self.steps = None
            self.constant = doc
        self.cursor = 0
        self._check(doc if self.steps is None else self.steps[0])

    def _check(self, entry: dict[str, Any]) -> None:
        if "blade_actions" not in entry:
            raise CliConfigError("action file entries need 'blade_actions'")
        if "ct_actions" not in entry and "ct_setpoints" not in entry:
            raise CliConfigError(
                "action file entries need 'ct_actions' or 'ct_setpoints'"
            )
        rows = entry["blade_actions"]
        want = self.topology.num_cabinets
        if len(rows) != want:
            raise CliConfigError(
                f"action file has {len(rows)} cabinet rows, topology has {want}"
            )

    def act(self, outcome: StepOutcome):
        if self.steps is None:
            entry = self.constant
        else:
            if self.cursor >= len(self.steps):
                raise CliConfigError(
                    f"action file exhausted after {len(self.steps)} steps"
                )
            entry = self.steps[self.cursor]
            self._check(entry)
            self.cursor += 1
        return (
            entry["blade_actions"],
            entry.get("ct_actions"),
            entry.get("ct_setpoints"),
        )


# -- subcommand implementations ------------------------------------------------


def _cmd_simulate(args) -> int:
    topology, trace, fingerprint = _load_inputs(args)
    out_dir = Path(args.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    if args.controller == "fixed":
        if not args.actions:
            raise CliConfigError("--controller fixed requires --actions FILE")
        actions_path = Path(args.actions)
        if not actions_path.is_file():
            raise CliConfigError(f"action file not found: {actions_path}")
        doc = json.loads(actions_path.read_text())
        fingerprint["actions_sha"] = _sha256_text(actions_path.read_text())

        def factory():
            return _FixedActionController(doc, topology)

        details = "fixed action replay"
    else:

        def factory():
            return TrimRespondController(topology)

        details = "trim-and-respond"

    env = PlantEnv(topology, trace, args.seed)
    outcomes = _run_episodes(env, factory, args.episodes, args.max_steps)
    paths = _write_rollout_outputs(
        out_dir, outcomes, args.controller, details, args.carbon_intensity, fingerprint
    )
    _write_manifest(out_dir, "simulate", _args_echo(args), paths, fingerprint)
    print(f"simulate: wrote {len(outcomes)} outcome rows to {out_dir}")
    return 0


def _csv_cell(v: Any) -> Any:
    if isinstance(v, float):
        return "" if math.isnan(v) else repr(v)
    return v


def _write_csv(path: Path, columns: Sequence[str], rows: Sequence[dict[str, Any]]) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_csv_cell(row.get(c)) for c in columns])
    path.write_text(buf.getvalue())


def _cmd_train(args) -> int:
    topology, trace, fingerprint = _load_inputs(args)
    if args.max_ep_len is not None:
        if args.max_ep_len <= 0:
            raise CliConfigError("--max_ep_len must be > 0")
        timing = dataclasses.replace(
            topology.timing,
            max_episode_duration=args.max_ep_len * topology.timing.step_size,
        )
        topology = dataclasses.replace(topology, timing=timing)
    out_dir = Path(args.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    blade_cfg = PpoConfig(
        lr_actor=args.lr_actor,
        lr_critic=args.lr_critic,
        gamma=args.gamma,
        gae_lambda=args.gae_lambda,
        K_epochs=args.K_epochs,
        eps_clip=args.eps_clip,
        minibatch_size=args.minibatch_size,
        ent_coef=args.ent_coef,
        vf_coef=args.vf_coef,
        std_init=args.std_init,
        std_decay=args.std_decay,
        std_min=args.std_min,
        update_interval=args.update_interval,
    )
    ct_cfg = dataclasses.replace(
        PpoConfig.tower_defaults(),
        lr_actor=args.ct_lr_actor,
        lr_critic=args.lr_critic,
        gamma=args.ct_gamma,
        gae_lambda=args.gae_lambda,
        K_epochs=args.K_epochs,
        eps_clip=args.eps_clip,
        minibatch_size=args.minibatch_size,
        ent_coef=args.ent_coef,
        vf_coef=args.ct_vf_coef,
        update_interval=args.update_interval,
    )

    extra_paths: list[Path] = []

    def on_update(row: dict[str, Any], bundle) -> None:
        if args.checkpoint_interval > 0 and row["update"] % args.checkpoint_interval == 0:
            p = out_dir / f"checkpoint_update{row['update']}.json"
            save_checkpoint(p, bundle, args.seed, row["step"])
            extra_paths.append(p)
        print(
            f"update {row['update']}: step {row['step']}, "
            f"episodes {row['episode']}, blade reward {row['blade_reward']:.3f}, "
            f"ct reward {row['ct_reward']:.3f}"
        )

    result = train_centralized(
        topology,
        trace,
        blade_cfg,
        ct_cfg,
        seed=args.seed,
        total_timesteps=args.max_training_timesteps,
        num_envs=args.num_agents,
        progress_cb=on_update,
    )

    ckpt_path = out_dir / "checkpoint.json"
    save_checkpoint(
        ckpt_path, result.bundle, args.seed, args.max_training_timesteps,
        extra={"exp_name": args.exp_name},
    )

    log_path = out_dir / "training_log.csv"
    _write_csv(
        log_path,
        [
            "step", "episode", "blade_reward", "ct_reward",
            "blade_policy_loss", "blade_value_loss", "blade_entropy", "std",
            "ct_policy_loss", "ct_value_loss", "ct_entropy",
        ],
        result.update_rows,
    )
    ep_path = out_dir / "episodes.csv"
    _write_csv(
        ep_path, ["step", "episode", "blade_reward", "ct_reward"], result.episode_rows
    )

    paths = [ckpt_path, log_path, ep_path] + extra_paths
    if result.episode_rows:
        from .plots import plot_training_curves

        paths.append(plot_training_curves(result.episode_rows, out_dir / "training_curves.png"))
    _write_manifest(out_dir, "train", _args_echo(args), paths, fingerprint)
    print(
        f"train: {len(result.update_rows)} updates, {len(result.episode_rows)} episodes, "
        f"checkpoint at {ckpt_path}"
    )
    return 0


def _cmd_evaluate(args) -> int:
    topology, trace, fingerprint = _load_inputs(args)
    out_dir = Path(args.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    if (args.checkpoint is None) == (args.controller is None):
        raise CliConfigError("pass exactly one of --checkpoint or --controller baseline")

    if args.checkpoint:
        bundle, sha = _load_bundle(args.checkpoint, topology)
        fingerprint["checkpoint_sha"] = sha

        def factory():
            return PolicyController(bundle)

        control_type, details = "rl_policy", "modal checkpoint rollout"
    else:

        def factory():
            return TrimRespondController(topology)

        control_type, details = "baseline", "trim-and-respond"

    env = PlantEnv(topology, trace, args.seed)
    outcomes = _run_episodes(env, factory, args.episodes)
    paths = _write_rollout_outputs(
        out_dir, outcomes, control_type, details, args.carbon_intensity, fingerprint
    )
    _write_manifest(out_dir, "evaluate", _args_echo(args), paths, fingerprint)
    print(f"evaluate: wrote {len(outcomes)} outcome rows to {out_dir}")
    return 0


def _cmd_distill(args) -> int:
    topology, trace, fingerprint = _load_inputs(args)
    out_dir = Path(args.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    bundle, sha = _load_bundle(args.checkpoint, topology)
    fingerprint["checkpoint_sha"] = sha

    env = PlantEnv(topology, trace, args.seed)
    result = distill_policy(
        bundle,
        env,
        episodes=args.collect_episodes,
        resample_size=args.resample_size,
        seed=args.seed,
        max_depth=args.max_depth,
        min_leaf=args.min_leaf,
    )
    reports = fidelity_report(result.controller, bundle, env, args.eval_episodes)

    trees_path = out_dir / "trees.json"
    trees_path.write_text(
        json.dumps(result.controller.to_jsonable(), sort_keys=True, separators=(",", ":"))
        + "\n"
    )
    text_path = out_dir / "trees.txt"
    text_path.write_text(
        "pair tree (setpoint, flow):\n"
        + tree_to_text(result.controller.pair_tree)
        + "\n\nvalve tree:\n"
        + tree_to_text(result.controller.valve_tree)
        + "\n\ntower tree (delta index):\n"
        + tree_to_text(result.controller.ct_tree)
        + "\n"
    )
    fid_path = out_dir / "fidelity.json"
    fid_doc = fidelity_to_jsonable(reports)
    fid_doc["collection"] = {
        "blade_points": result.blade_points,
        "ct_points": result.ct_points,
        "resampled": result.resampled,
        "floor_flags": result.floor_flags,
    }
    fid_path.write_text(json.dumps(fid_doc, sort_keys=True, indent=2) + "\n")

    paths = [trees_path, text_path, fid_path]
    _write_manifest(out_dir, "distill", _args_echo(args), paths, fingerprint)
    print(
        f"distill: cabinet R2 {reports['cabinet'].r2}, "
        f"tower R2 {reports['ct'].r2}, outputs in {out_dir}"
    )
    return 0


def _cmd_gen_trace(args) -> int:
    from .trace import save_trace, synthetic_trace

    topo_path = Path(args.topology)
    if not topo_path.is_file():
        raise CliConfigError(f"topology file not found: {topo_path}")
    try:
        topology = parse_topology(topo_path.read_text())
    except TopologyError as exc:
        raise CliConfigError(f"invalid topology: {exc}") from exc
    if args.duration <= 0 or args.sample_dt <= 0:
        raise CliConfigError("--duration and --sample-dt must be > 0")
    trace = synthetic_trace(
        topology, duration=args.duration, seed=args.seed, sample_dt=args.sample_dt
    )
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(save_trace(trace))
    print(f"gen-trace: wrote {trace.timestamps.size} samples to {out}")
    return 0


def _cmd_report(args) -> int:
    in_path = Path(args.input)
    if in_path.is_dir():
        in_path = in_path / "steps.jsonl"
    if not in_path.is_file():
        raise CliConfigError(f"step log not found: {in_path}")
    rows = read_jsonl(in_path)
    out_dir = Path(args.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    fingerprint = {
        "steps_sha": _sha256_text(in_path.read_text()),
        "package_version": __version__,
    }
    metrics = compute_run_metrics(
        rows, args.control_type, args.control_details,
        MetricConfig(carbon_intensity=args.carbon_intensity),
    )
    paths = emit_report(metrics, out_dir, fingerprint=fingerprint)
    paths += render_report_figures(rows, out_dir)
    _write_manifest(out_dir, "report", _args_echo(args), paths, fingerprint)
    print(f"report: metrics and figures written to {out_dir}")
    return 0


# -- entry point ---------------------------------------------------------------


_COMMANDS = {
    "simulate": _cmd_simulate,
    "train": _cmd_train,
    "evaluate": _cmd_evaluate,
    "distill": _cmd_distill,
    "report": _cmd_report,
    "gen-trace": _cmd_gen_trace,
}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except CliConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except (json.JSONDecodeError,) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failures map to exit code 3
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    raise SystemExit(main())
