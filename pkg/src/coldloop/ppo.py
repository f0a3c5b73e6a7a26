"""Clipped-surrogate policy optimization over the two plant MDPs.

One shared cabinet policy acts for every cabinet and one shared tower
policy for every tower ("centralized action": each unit feeds the same
network its own observation). Rollouts are stored per unit and never mixed
across units before advantage estimation; updates concatenate the per-unit
streams afterwards.

Determinism: all exploration noise comes from one numpy generator, torch
runs single-threaded, and minibatch shuffles use the same generator, so a
(seed, topology, trace) triple fixes the whole training stream.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np
import torch

from .env import PlantEnv, StepOutcome
from .nets import (
    Critic,
    DiscreteActor,
    MultiHeadActor,
    blade_obs_bounds,
    categorical_entropy,
    ct_obs_bounds,
    dirichlet_entropy,
    dirichlet_logpdf,
    gaussian_entropy,
    gaussian_logpdf,
    module_from_jsonable,
    module_to_jsonable,
    sample_bounded,
    sample_categorical,
    sample_simplex,
)
from .topology import SystemTopology, topology_fingerprint
from .trace import ExogenousTrace

CHECKPOINT_FORMAT_VERSION = 1


class PpoError(RuntimeError):
    """Raised when an update produces non-finite losses or shapes mismatch."""


@dataclass(frozen=True)
class PpoConfig:
    """Hyperparameters of one policy-optimization loop."""

    lr_actor: float = 3e-4
    lr_critic: float = 1e-3
    gamma: float = 0.80
    gae_lambda: float = 0.95
    K_epochs: int = 50
    eps_clip: float = 0.2
    minibatch_size: int = 32
    ent_coef: float = 0.01
    vf_coef: float = 0.5
    std_init: float = 0.6
    std_decay: float = 5e-4
    std_min: float = 0.1
    update_interval: int = 2048
    actor_hidden: tuple[int, ...] = (64, 64)
    critic_hidden: tuple[int, ...] = (64, 64)

    @staticmethod
    def tower_defaults() -> "PpoConfig":
        """Defaults for the tower-side loop (discrete actor)."""
        return PpoConfig(
            lr_actor=6e-4,
            gamma=0.95,
            vf_coef=0.6,
            actor_hidden=(32, 64),
            critic_hidden=(32, 32),
        )


@dataclass
class RolloutBuffer:
    """Transition store for one unit (one cabinet or one tower)."""

    obs: list = field(default_factory=list)
    actions: list = field(default_factory=list)
    logps: list = field(default_factory=list)
    rewards: list = field(default_factory=list)
    values: list = field(default_factory=list)
    dones: list = field(default_factory=list)

    def append(self, obs, action, logp, reward, value, done) -> None:
        self.obs.append(obs)
        self.actions.append(action)
        self.logps.append(logp)
        self.rewards.append(reward)
        self.values.append(value)
        self.dones.append(done)

    def clear(self) -> None:
        for name in ("obs", "actions", "logps", "rewards", "values", "dones"):
            getattr(self, name).clear()

    def __len__(self) -> int:
        return len(self.obs)


def gae_advantages(
    rewards: Sequence[float],
    values: Sequence[float],
    dones: Sequence[bool],
    gamma: float,
    lam: float,
) -> np.ndarray:
    """Generalized advantage estimates for one unit's stream.

    Args:
        rewards: T rewards.
        values: T + 1 value estimates; the final entry bootstraps the tail
            (pass 0 after a terminal transition).
        dones: T terminal flags; a terminal cuts both bootstrap and decay.
    """
    t_len = len(rewards)
    if len(values) != t_len + 1 or len(dones) != t_len:
        raise PpoError(
            f"stream lengths disagree: {t_len} rewards, {len(values)} values, "
            f"{len(dones)} dones"
        )
    adv = np.zeros(t_len, dtype=np.float64)
    last = 0.0
    for t in range(t_len - 1, -1, -1):
        nonterminal = 0.0 if dones[t] else 1.0
        delta = rewards[t] + gamma * values[t + 1] * nonterminal - values[t]
        last = delta + gamma * lam * nonterminal * last
        adv[t] = last
    return adv


# -- loss builders (shared by the update loop and the gradient checks) -------


def blade_ppo_loss(
    actor: MultiHeadActor,
    critic: Critic,
    std: float,
    batch: dict[str, torch.Tensor],
    cfg: PpoConfig,
) -> tuple[torch.Tensor, dict[str, float]]:
    """Clipped-surrogate loss for the multi-head cabinet policy.

    ``batch`` carries obs, act_bounded (n, 2), act_simplex (n, B),
    old_logp, adv, ret.
    """
    mean, alpha = actor(batch["obs"])
    logp = gaussian_logpdf(batch["act_bounded"], mean, std) + dirichlet_logpdf(
        batch["act_simplex"], alpha
    )
    entropy = gaussian_entropy(std, 2) + dirichlet_entropy(alpha)
    value = critic(batch["obs"])
    return _assemble_loss(logp, entropy, value, batch, cfg)


def ct_ppo_loss(
    actor: DiscreteActor,
    critic: Critic,
    batch: dict[str, torch.Tensor],
    cfg: PpoConfig,
) -> tuple[torch.Tensor, dict[str, float]]:
    """Clipped-surrogate loss for the discrete tower policy.

    ``batch`` carries obs, act_idx, old_logp, adv, ret.
    """
    logits = actor(batch["obs"])
    logp_all = torch.log_softmax(logits, dim=-1)
    logp = logp_all.gather(-1, batch["act_idx"].unsqueeze(-1)).squeeze(-1)
    entropy = categorical_entropy(logits)
    value = critic(batch["obs"])
    return _assemble_loss(logp, entropy, value, batch, cfg)


def _assemble_loss(
    logp: torch.Tensor,
    entropy: torch.Tensor,
    value: torch.Tensor,
    batch: dict[str, torch.Tensor],
    cfg: PpoConfig,
) -> tuple[torch.Tensor, dict[str, float]]:
    ratio = torch.exp(logp - batch["old_logp"])
    adv = batch["adv"]
    surr1 = ratio * adv
    surr2 = torch.clamp(ratio, 1.0 - cfg.eps_clip, 1.0 + cfg.eps_clip) * adv
    policy_loss = -torch.min(surr1, surr2).mean()
    value_loss = ((value - batch["ret"]) ** 2).mean()
    ent = entropy.mean() if isinstance(entropy, torch.Tensor) else torch.as_tensor(entropy)
    loss = policy_loss + cfg.vf_coef * value_loss - cfg.ent_coef * ent
    if not torch.isfinite(loss):
        raise PpoError(
            "non-finite loss: "
            f"policy={float(policy_loss.detach())}, value={float(value_loss.detach())}, "
            f"entropy={float(ent.detach())}, ratio_max={float(ratio.detach().max())}, "
            f"adv_absmax={float(adv.abs().max())}"
        )
    diag = {
        "policy_loss": float(policy_loss.detach()),
        "value_loss": float(value_loss.detach()),
        "entropy": float(ent.detach()),
    }
    return loss, diag


# -- agents -------------------------------------------------------------------


class BladeAgent:
    """Shared cabinet policy plus critic and their optimizers."""

    def __init__(self, topology: SystemTopology, cfg: PpoConfig):
        lo, hi = blade_obs_bounds(topology)
        b = topology.blade_groups_per_cabinet
        self.cfg = cfg
        self.actor = MultiHeadActor(lo, hi, b, hidden=cfg.actor_hidden)
        self.critic = Critic(lo, hi, hidden=cfg.critic_hidden)
        self.opt_actor = torch.optim.Adam(self.actor.parameters(), lr=cfg.lr_actor)
        self.opt_critic = torch.optim.Adam(self.critic.parameters(), lr=cfg.lr_critic)
        self.std = cfg.std_init
        self.n_valves = b

    def act(
        self, obs_rows: np.ndarray, rng: np.random.Generator
    ) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Sample actions for a batch of unit observations.

        Returns:
            (bounded (n, 2), simplex (n, B), logp (n,), value (n,)).
        """
        obs_t = torch.as_tensor(obs_rows, dtype=torch.float32)
        with torch.no_grad():
            mean, alpha = self.actor(obs_t)
            value = self.critic(obs_t)
        mean_np = mean.numpy().astype(np.float64)
        alpha_np = alpha.numpy().astype(np.float64)
        bounded = sample_bounded(mean_np, self.std, rng)
        simplex = sample_simplex(alpha_np, rng)
        with torch.no_grad():
            logp = gaussian_logpdf(
                torch.as_tensor(bounded, dtype=torch.float32), mean, self.std
            ) + dirichlet_logpdf(torch.as_tensor(simplex, dtype=torch.float32), alpha)
        return bounded, simplex, logp.numpy().astype(np.float64), value.numpy().astype(np.float64)

    def modal(self, obs_rows: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Deterministic actions: head means and normalized concentrations."""
        obs_t = torch.as_tensor(obs_rows, dtype=torch.float32)
        with torch.no_grad():
            mean, alpha = self.actor(obs_t)
        alpha_np = alpha.numpy().astype(np.float64)
        valves = alpha_np / alpha_np.sum(-1, keepdims=True)
        return mean.numpy().astype(np.float64), valves

    def value(self, obs_row: np.ndarray) -> float:
        with torch.no_grad():
            return float(
                self.critic(torch.as_tensor(obs_row, dtype=torch.float32).unsqueeze(0))[0]
            )

    def decay_std(self) -> None:
        self.std = max(self.cfg.std_min, self.std - self.cfg.std_decay)


class CtAgent:
    """Shared tower policy plus critic and their optimizers."""

    def __init__(self, topology: SystemTopology, cfg: PpoConfig):
        lo, hi = ct_obs_bounds(topology)
        self.cfg = cfg
        self.n_actions = len(topology.ct_action_deltas)
        self.actor = DiscreteActor(lo, hi, self.n_actions, hidden=cfg.actor_hidden)
        self.critic = Critic(lo, hi, hidden=cfg.critic_hidden)
        self.opt_actor = torch.optim.Adam(self.actor.parameters(), lr=cfg.lr_actor)
        self.opt_critic = torch.optim.Adam(self.critic.parameters(), lr=cfg.lr_critic)

    def act(
        self, obs_rows: np.ndarray, rng: np.random.Generator
    ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Sample delta indices for a batch of tower observations."""
        obs_t = torch.as_tensor(obs_rows, dtype=torch.float32)
        with torch.no_grad():
            logits = self.actor(obs_t)
            value = self.critic(obs_t)
            probs = torch.softmax(logits, dim=-1).numpy().astype(np.float64)
        probs = probs / probs.sum(-1, keepdims=True)
        idx = np.array([sample_categorical(p, rng) for p in probs], dtype=np.int64)
        logp = np.log(probs[np.arange(len(idx)), idx])
        return idx, logp, value.numpy().astype(np.float64)

    def modal(self, obs_rows: np.ndarray) -> np.ndarray:
        """Deterministic delta indices (argmax logits, lowest index on ties)."""
        obs_t = torch.as_tensor(obs_rows, dtype=torch.float32)
        with torch.no_grad():
            logits = self.actor(obs_t).numpy()
        return np.argmax(logits, axis=-1)

    def probs(self, obs_row: np.ndarray) -> np.ndarray:
        with torch.no_grad():
            logits = self.actor(
                torch.as_tensor(obs_row, dtype=torch.float32).unsqueeze(0)
            )
            return torch.softmax(logits, dim=-1)[0].numpy().astype(np.float64)

    def value(self, obs_row: np.ndarray) -> float:
        with torch.no_grad():
            return float(
                self.critic(torch.as_tensor(obs_row, dtype=torch.float32).unsqueeze(0))[0]
            )


# -- update -------------------------------------------------------------------


def _batched_update(
    loss_fn: Callable[[dict[str, torch.Tensor]], tuple[torch.Tensor, dict[str, float]]],
    opt_actor: torch.optim.Optimizer,
    opt_critic: torch.optim.Optimizer,
    tensors: dict[str, torch.Tensor],
    cfg: PpoConfig,
    rng: np.random.Generator,
) -> dict[str, float]:
    n = len(tensors["obs"])
    sums: dict[str, float] = {}
    count = 0
    for _ in range(cfg.K_epochs):
        perm = rng.permutation(n)
        for start in range(0, n, cfg.minibatch_size):
            rows = torch.as_tensor(perm[start : start + cfg.minibatch_size])
            mb = {k: v[rows] for k, v in tensors.items()}
            loss, diag = loss_fn(mb)
            opt_actor.zero_grad()
            opt_critic.zero_grad()
            loss.backward()
            opt_actor.step()
            opt_critic.step()
            for k, v in diag.items():
                sums[k] = sums.get(k, 0.0) + v
            count += 1
    return {k: v / count for k, v in sums.items()}


def _advantages_and_returns(
    buffers: Sequence[RolloutBuffer],
    bootstraps: Sequence[float],
    cfg: PpoConfig,
) -> tuple[np.ndarray, np.ndarray]:
    advs = []
    rets = []
    for buf, boot in zip(buffers, bootstraps):
        values = list(buf.values) + [boot]
        adv = gae_advantages(buf.rewards, values, buf.dones, cfg.gamma, cfg.gae_lambda)
        advs.append(adv)
        rets.append(adv + np.asarray(buf.values, dtype=np.float64))
    adv_all = np.concatenate(advs)
    ret_all = np.concatenate(rets)
    adv_all = (adv_all - adv_all.mean()) / max(float(adv_all.std()), 1e-8)
    return adv_all, ret_all


def ppo_update_blade(
    agent: BladeAgent,
    buffers: Sequence[RolloutBuffer],
    bootstraps: Sequence[float],
    rng: np.random.Generator,
) -> dict[str, float]:
    """One full clipped-surrogate update of the cabinet policy."""
    cfg = agent.cfg
    adv, ret = _advantages_and_returns(buffers, bootstraps, cfg)
    obs = np.concatenate([np.asarray(b.obs, dtype=np.float64) for b in buffers])
    acts = np.concatenate([np.asarray(b.actions, dtype=np.float64) for b in buffers])
    logp = np.concatenate([np.asarray(b.logps, dtype=np.float64) for b in buffers])
    tensors = {
        "obs": torch.as_tensor(obs, dtype=torch.float32),
        "act_bounded": torch.as_tensor(acts[:, :2], dtype=torch.float32),
        "act_simplex": torch.as_tensor(acts[:, 2:], dtype=torch.float32),
        "old_logp": torch.as_tensor(logp, dtype=torch.float32),
        "adv": torch.as_tensor(adv, dtype=torch.float32),
        "ret": torch.as_tensor(ret, dtype=torch.float32),
    }

    def loss_fn(mb: dict[str, torch.Tensor]) -> tuple[torch.Tensor, dict[str, float]]:
        return blade_ppo_loss(agent.actor, agent.critic, agent.std, mb, cfg)

    diag = _batched_update(loss_fn, agent.opt_actor, agent.opt_critic, tensors, cfg, rng)
    agent.decay_std()
    diag["std"] = agent.std
    return diag


def ppo_update_ct(
    agent: CtAgent,
    buffers: Sequence[RolloutBuffer],
    bootstraps: Sequence[float],
    rng: np.random.Generator,
) -> dict[str, float]:
    """One full clipped-surrogate update of the tower policy."""
    cfg = agent.cfg
    adv, ret = _advantages_and_returns(buffers, bootstraps, cfg)
    obs = np.concatenate([np.asarray(b.obs, dtype=np.float64) for b in buffers])
    idx = np.concatenate([np.asarray(b.actions, dtype=np.int64) for b in buffers])
    logp = np.concatenate([np.asarray(b.logps, dtype=np.float64) for b in buffers])
    tensors = {
        "obs": torch.as_tensor(obs, dtype=torch.float32),
        "act_idx": torch.as_tensor(idx, dtype=torch.int64),
        "old_logp": torch.as_tensor(logp, dtype=torch.float32),
        "adv": torch.as_tensor(adv, dtype=torch.float32),
        "ret": torch.as_tensor(ret, dtype=torch.float32),
    }

    def loss_fn(mb: dict[str, torch.Tensor]) -> tuple[torch.Tensor, dict[str, float]]:
        return ct_ppo_loss(agent.actor, agent.critic, mb, cfg)

    return _batched_update(loss_fn, agent.opt_actor, agent.opt_critic, tensors, cfg, rng)


# -- policy bundle and controllers -------------------------------------------


@dataclass
class PolicyBundle:
    """Both trained policies plus the topology they were built for."""

    blade: BladeAgent
    ct: CtAgent
    topology: SystemTopology

    def modal_actions(
        self, outcome: StepOutcome
    ) -> tuple[list[list[float]], list[int]]:
        """Deterministic env actions from an outcome's observations."""
        blade_obs = np.asarray(outcome.blade_obs, dtype=np.float64)
        mean, valves = self.blade.modal(blade_obs)
        blade_actions = [
            list(mean[i]) + list(valves[i]) for i in range(len(blade_obs))
        ]
        ct_obs = np.asarray(outcome.ct_obs, dtype=np.float64)
        ct_actions = [int(a) for a in self.ct.modal(ct_obs)]
        return blade_actions, ct_actions


class PolicyController:
    """Deterministic (modal) controller over a policy bundle."""

    def __init__(self, bundle: PolicyBundle):
        self.bundle = bundle

    def act(self, outcome: StepOutcome):
        blade_actions, ct_actions = self.bundle.modal_actions(outcome)
        return blade_actions, ct_actions, None


class UniformRandomController:
    """Uniform-random actions: the no-learning reference point.

    Setpoint and flow commands uniform on [-1, 1]; valve splits uniform on
    the simplex (flat Dirichlet); tower deltas uniform over the choices.
    """

    def __init__(self, topology: SystemTopology, seed: int):
        self.topology = topology
        self.rng = np.random.Generator(np.random.PCG64(seed))

    def act(self, outcome: StepOutcome):
        topo = self.topology
        b = topo.blade_groups_per_cabinet
        blade_actions = []
        for _ in range(topo.num_cabinets):
            bounded = self.rng.uniform(-1.0, 1.0, size=2)
            valves = sample_simplex(np.ones(b), self.rng)
            blade_actions.append(list(bounded) + list(valves))
        k = len(topo.ct_action_deltas)
        ct_actions = [int(self.rng.integers(0, k)) for _ in range(topo.num_towers)]
        return blade_actions, ct_actions, None


def run_episode(env: PlantEnv, controller) -> list[StepOutcome]:
    """Roll one full episode; returns all outcomes including the reset one."""
    outcome = env.reset()
    outcomes = [outcome]
    while not outcome.done:
        blade_actions, ct_actions, ct_setpoints = controller.act(outcome)
        outcome = env.step(blade_actions, ct_actions, ct_setpoints=ct_setpoints)
        outcomes.append(outcome)
    return outcomes


# -- training loop -------------------------------------------------------------


@dataclass
class TrainResult:
    """Everything the training loop hands back."""

    bundle: PolicyBundle
    episode_rows: list[dict[str, Any]]
    update_rows: list[dict[str, Any]]


def train_centralized(
    topology: SystemTopology,
    trace: ExogenousTrace,
    blade_cfg: PpoConfig,
    ct_cfg: PpoConfig,
    seed: int,
    total_timesteps: int,
    num_envs: int = 1,
    progress_cb: Callable[[dict[str, Any], "PolicyBundle"], None] | None = None,
) -> TrainResult:
    """Train both policies with synchronized environment steps.

    ``total_timesteps`` counts lockstep rounds: each round advances every
    parallel environment once. Updates trigger every
    ``blade_cfg.update_interval`` rounds and once more at the end for any
    remainder, so a run always performs ceil(total / interval) updates.
    ``progress_cb`` (if given) receives each update's log row and the live
    policy bundle — e.g. for periodic checkpoints.
    """
    if total_timesteps <= 0:
        raise PpoError("total_timesteps must be > 0")
    if num_envs <= 0:
        raise PpoError("num_envs must be > 0")
    torch.manual_seed(seed)
    torch.set_num_threads(1)
    rng = np.random.Generator(np.random.PCG64(seed))

    blade_agent = BladeAgent(topology, blade_cfg)
    ct_agent = CtAgent(topology, ct_cfg)
    bundle = PolicyBundle(blade=blade_agent, ct=ct_agent, topology=topology)

    envs = [PlantEnv(topology, trace, seed + w) for w in range(num_envs)]
    outcomes = [env.reset() for env in envs]

    c = topology.num_cabinets
    n_t = topology.num_towers
    blade_buffers = [[RolloutBuffer() for _ in range(c)] for _ in range(num_envs)]
    ct_buffers = [[RolloutBuffer() for _ in range(n_t)] for _ in range(num_envs)]
    blade_ep_ret = [[0.0] * c for _ in range(num_envs)]
    ct_ep_ret = [[0.0] * n_t for _ in range(num_envs)]

    episode_rows: list[dict[str, Any]] = []
    update_rows: list[dict[str, Any]] = []
    episodes_done = 0
    updates_done = 0
    rounds_in_buffer = 0
    rewards_since_update: list[tuple[float, float]] = []

    def flush_update(step_now: int) -> None:
        nonlocal updates_done, rounds_in_buffer
        blade_flat = [b for w in blade_buffers for b in w]
        ct_flat = [b for w in ct_buffers for b in w]
        blade_boot = []
        for w in range(num_envs):
            for i in range(c):
                buf = blade_buffers[w][i]
                if buf.dones and buf.dones[-1]:
                    blade_boot.append(0.0)
                else:
                    blade_boot.append(
                        blade_agent.value(
                            np.asarray(outcomes[w].blade_obs[i], dtype=np.float64)
                        )
                    )
        ct_boot = []
        for w in range(num_envs):
            for i in range(n_t):
                buf = ct_buffers[w][i]
                if buf.dones and buf.dones[-1]:
                    ct_boot.append(0.0)
                else:
                    ct_boot.append(
                        ct_agent.value(np.asarray(outcomes[w].ct_obs[i], dtype=np.float64))
                    )
        blade_diag = ppo_update_blade(blade_agent, blade_flat, blade_boot, rng)
        ct_diag = ppo_update_ct(ct_agent, ct_flat, ct_boot, rng)
        for buf in blade_flat + ct_flat:
            buf.clear()
        updates_done += 1
        rounds_in_buffer = 0
        if rewards_since_update:
            mean_blade = sum(r[0] for r in rewards_since_update) / len(rewards_since_update)
            mean_ct = sum(r[1] for r in rewards_since_update) / len(rewards_since_update)
        else:
            mean_blade = float("nan")
            mean_ct = float("nan")
        row = {
            "step": step_now,
            "update": updates_done,
            "episode": episodes_done,
            "blade_reward": mean_blade,
            "ct_reward": mean_ct,
            "blade_policy_loss": blade_diag["policy_loss"],
            "blade_value_loss": blade_diag["value_loss"],
            "blade_entropy": blade_diag["entropy"],
            "std": blade_diag["std"],
            "ct_policy_loss": ct_diag["policy_loss"],
            "ct_value_loss": ct_diag["value_loss"],
            "ct_entropy": ct_diag["entropy"],
        }
        update_rows.append(row)
        rewards_since_update.clear()
        if progress_cb is not None:
            progress_cb(row, bundle)

    for step in range(total_timesteps):
        for w in range(num_envs):
            outcome = outcomes[w]
            blade_obs = np.asarray(outcome.blade_obs, dtype=np.float64)
            ct_obs = np.asarray(outcome.ct_obs, dtype=np.float64)
            bounded, simplex, blade_logp, blade_value = blade_agent.act(blade_obs, rng)
            ct_idx, ct_logp, ct_value = ct_agent.act(ct_obs, rng)

            blade_actions = [
                list(bounded[i]) + list(simplex[i]) for i in range(c)
            ]
            new_outcome = envs[w].step(blade_actions, [int(a) for a in ct_idx])

            for i in range(c):
                blade_buffers[w][i].append(
                    blade_obs[i],
                    np.concatenate([bounded[i], simplex[i]]),
                    float(blade_logp[i]),
                    float(new_outcome.blade_rewards[i]),
                    float(blade_value[i]),
                    bool(new_outcome.done),
                )
                blade_ep_ret[w][i] += float(new_outcome.blade_rewards[i])
            for i in range(n_t):
                ct_buffers[w][i].append(
                    ct_obs[i],
                    int(ct_idx[i]),
                    float(ct_logp[i]),
                    float(new_outcome.ct_rewards[i]),
                    float(ct_value[i]),
                    bool(new_outcome.done),
                )
                ct_ep_ret[w][i] += float(new_outcome.ct_rewards[i])

            if new_outcome.done:
                episodes_done += 1
                mean_blade = sum(blade_ep_ret[w]) / c
                mean_ct = sum(ct_ep_ret[w]) / n_t
                episode_rows.append(
                    {
                        "step": step + 1,
                        "episode": episodes_done,
                        "blade_reward": mean_blade,
                        "ct_reward": mean_ct,
                    }
                )
                rewards_since_update.append((mean_blade, mean_ct))
                blade_ep_ret[w] = [0.0] * c
                ct_ep_ret[w] = [0.0] * n_t
                outcomes[w] = envs[w].reset()
            else:
                outcomes[w] = new_outcome

        rounds_in_buffer += 1
        if rounds_in_buffer >= blade_cfg.update_interval:
            flush_update(step + 1)

    if rounds_in_buffer > 0:
        flush_update(total_timesteps)

    return TrainResult(bundle=bundle, episode_rows=episode_rows, update_rows=update_rows)


# -- checkpoints ---------------------------------------------------------------


def save_checkpoint(
    path: str | Path,
    bundle: PolicyBundle,
    seed: int,
    steps_done: int,
    extra: dict[str, Any] | None = None,
) -> None:
    """Write both policies and their construction metadata as JSON."""
    blade, ct = bundle.blade, bundle.ct
    doc = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "topology_fingerprint": topology_fingerprint(bundle.topology),
        "seed": seed,
        "steps_done": steps_done,
        "blade": {
            "config": asdict(blade.cfg),
            "std": blade.std,
            "n_valves": blade.n_valves,
            "actor": module_to_jsonable(blade.actor),
            "critic": module_to_jsonable(blade.critic),
        },
        "ct": {
            "config": asdict(ct.cfg),
            "n_actions": ct.n_actions,
            "actor": module_to_jsonable(ct.actor),
            "critic": module_to_jsonable(ct.critic),
        },
    }
    if extra:
        doc["extra"] = extra
    Path(path).write_text(json.dumps(doc, sort_keys=True, separators=(",", ":")))


def load_checkpoint(path: str | Path, topology: SystemTopology) -> PolicyBundle:
    """Rebuild a policy bundle from a checkpoint written for this topology.

    Raises:
        PpoError: version or topology fingerprint mismatch, or tensor
            shapes that do not fit the topology's network dimensions.
    """
    doc = json.loads(Path(path).read_text())
    if doc.get("format_version") != CHECKPOINT_FORMAT_VERSION:
        raise PpoError(
            f"unsupported checkpoint format {doc.get('format_version')!r}"
        )
    fp = topology_fingerprint(topology)
    if doc["topology_fingerprint"] != fp:
        raise PpoError(
            f"checkpoint was trained for topology {doc['topology_fingerprint']}, "
            f"this run uses {fp}"
        )

    def cfg_from(d: dict[str, Any]) -> PpoConfig:
        d = dict(d)
        d["actor_hidden"] = tuple(d["actor_hidden"])
        d["critic_hidden"] = tuple(d["critic_hidden"])
        return PpoConfig(**d)

    blade = BladeAgent(topology, cfg_from(doc["blade"]["config"]))
    blade.std = float(doc["blade"]["std"])
    module_from_jsonable(blade.actor, doc["blade"]["actor"])
    module_from_jsonable(blade.critic, doc["blade"]["critic"])
    ct = CtAgent(topology, cfg_from(doc["ct"]["config"]))
    module_from_jsonable(ct.actor, doc["ct"]["actor"])
    module_from_jsonable(ct.critic, doc["ct"]["critic"])
    return PolicyBundle(blade=blade, ct=ct, topology=topology)
