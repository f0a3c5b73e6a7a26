"""Actor and critic networks plus the probability math they share.

Policies are small tanh MLPs. The cabinet actor is multi-headed over one
trunk: a bounded head (tanh) for the two continuous setpoint/flow commands
and a concentration head (softplus, floored) parameterizing a Dirichlet
over the valve split. The tower actor emits categorical logits over the
discrete setpoint deltas.

Torch carries parameters and gradients; all action SAMPLING runs on a numpy
generator supplied by the caller so that training streams are reproducible
independent of torch's global RNG state.

Observations are normalized inside the networks by fixed affine maps
derived from the physical observation windows, so checkpoints carry their
own scaling.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np
import torch
from torch import nn

from .topology import SystemTopology

ALPHA_FLOOR = 1e-3
VALVE_CLIP = 1e-12

# Observation windows (match the environment's clamps), per quantity.
T_BLADE_WINDOW = (273.15, 373.15)  # K
P_BLADE_WINDOW_KW = (0.0, 400.0)
T_RET_WINDOW = (273.15, 373.15)  # K
T_OWB_WINDOW = (243.15, 323.15)  # K


def blade_obs_bounds(topology: SystemTopology) -> tuple[list[float], list[float]]:
    """(lo, hi) per cabinet-observation entry: B temperatures then B powers."""
    b = topology.blade_groups_per_cabinet
    lo = [T_BLADE_WINDOW[0]] * b + [P_BLADE_WINDOW_KW[0]] * b
    hi = [T_BLADE_WINDOW[1]] * b + [P_BLADE_WINDOW_KW[1]] * b
    return lo, hi


def ct_obs_bounds(topology: SystemTopology) -> tuple[list[float], list[float]]:
    """(lo, hi) per tower-observation entry: cell powers, returns, wet bulb."""
    m = topology.cells_per_tower
    n = topology.num_towers
    p_max_kw = topology.tower.fan.P_nom / 1000.0
    lo = [0.0] * m + [T_RET_WINDOW[0]] * n + [T_OWB_WINDOW[0]]
    hi = [p_max_kw] * m + [T_RET_WINDOW[1]] * n + [T_OWB_WINDOW[1]]
    return lo, hi


class Mlp(nn.Module):
    """Plain MLP with tanh activations.

    Args:
        widths: layer widths including input and output.
        final_tanh: apply tanh after the last linear layer too (used for
            trunks whose output feeds further heads).
    """

    def __init__(self, widths: Sequence[int], final_tanh: bool = False):
        super().__init__()
        if len(widths) < 2:
            raise ValueError("an MLP needs at least input and output widths")
        self.layers = nn.ModuleList(
            nn.Linear(widths[i], widths[i + 1]) for i in range(len(widths) - 1)
        )
        self.final_tanh = final_tanh

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        last = len(self.layers) - 1
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < last or self.final_tanh:
                x = torch.tanh(x)
        return x


def mlp_forward(module: nn.Module, x: Sequence[float] | np.ndarray) -> np.ndarray:
    """Run a network on array-like input without tracking gradients."""
    with torch.no_grad():
        t = torch.as_tensor(np.asarray(x, dtype=np.float64), dtype=_dtype_of(module))
        out = module(t)
    if isinstance(out, tuple):
        return tuple(o.numpy().astype(np.float64) for o in out)  # type: ignore[return-value]
    return out.numpy().astype(np.float64)


def _dtype_of(module: nn.Module) -> torch.dtype:
    return next(module.parameters()).dtype


class _Normalizer(nn.Module):
    """Fixed affine map sending [lo, hi] to [-1, 1] per input entry."""

    def __init__(self, lo: Sequence[float], hi: Sequence[float]):
        super().__init__()
        lo_t = torch.tensor(lo, dtype=torch.float32)
        hi_t = torch.tensor(hi, dtype=torch.float32)
        if torch.any(hi_t <= lo_t):
            raise ValueError("normalization bounds must satisfy hi > lo")
        self.register_buffer("lo", lo_t)
        self.register_buffer("hi", hi_t)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return 2.0 * (x - self.lo) / (self.hi - self.lo) - 1.0


class MultiHeadActor(nn.Module):
    """Cabinet policy: shared trunk, bounded head, concentration head.

    forward(obs) -> (mean, alpha) with mean in (-1, 1)^2 for the setpoint
    and flow commands and alpha > ALPHA_FLOOR the Dirichlet concentrations
    over the valve split.
    """

    def __init__(
        self,
        obs_lo: Sequence[float],
        obs_hi: Sequence[float],
        n_valves: int,
        hidden: Sequence[int] = (64, 64),
    ):
        super().__init__()
        self.normalizer = _Normalizer(obs_lo, obs_hi)
        self.trunk = Mlp([len(list(obs_lo)), *hidden], final_tanh=True)
        self.bounded_head = nn.Linear(hidden[-1], 2)
        self.alpha_head = nn.Linear(hidden[-1], n_valves)
        self.n_valves = n_valves

    def forward(self, obs: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        z = self.trunk(self.normalizer(obs))
        mean = torch.tanh(self.bounded_head(z))
        alpha = nn.functional.softplus(self.alpha_head(z)) + ALPHA_FLOOR
        return mean, alpha


class DiscreteActor(nn.Module):
    """Tower policy: tanh trunk and categorical logits over delta choices."""

    def __init__(
        self,
        obs_lo: Sequence[float],
        obs_hi: Sequence[float],
        n_actions: int,
        hidden: Sequence[int] = (32, 64),
    ):
        super().__init__()
        self.normalizer = _Normalizer(obs_lo, obs_hi)
        self.trunk = Mlp([len(list(obs_lo)), *hidden], final_tanh=True)
        self.head = nn.Linear(hidden[-1], n_actions)
        self.n_actions = n_actions

    def forward(self, obs: torch.Tensor) -> torch.Tensor:
        return self.head(self.trunk(self.normalizer(obs)))


class Critic(nn.Module):
    """State-value network returning a scalar per observation."""

    def __init__(
        self,
        obs_lo: Sequence[float],
        obs_hi: Sequence[float],
        hidden: Sequence[int] = (64, 64),
    ):
        super().__init__()
        self.normalizer = _Normalizer(obs_lo, obs_hi)
        self.net = Mlp([len(list(obs_lo)), *hidden, 1])

    def forward(self, obs: torch.Tensor) -> torch.Tensor:
        return self.net(self.normalizer(obs)).squeeze(-1)


# -- probability math --------------------------------------------------------


def gaussian_logpdf(a: torch.Tensor, mean: torch.Tensor, std: float) -> torch.Tensor:
    """Log density of independent normals, summed over the last axis."""
    z = (a - mean) / std
    return (-0.5 * z * z - math.log(std) - 0.5 * math.log(2.0 * math.pi)).sum(-1)


def dirichlet_logpdf(x: torch.Tensor, alpha: torch.Tensor) -> torch.Tensor:
    """Log density of a Dirichlet at simplex points x, summed over last axis."""
    return (
        torch.lgamma(alpha.sum(-1))
        - torch.lgamma(alpha).sum(-1)
        + ((alpha - 1.0) * torch.log(x)).sum(-1)
    )


def gaussian_entropy(std: float, dim: int) -> float:
    """Entropy of ``dim`` independent normals with shared scalar std."""
    return dim * (0.5 * math.log(2.0 * math.pi * math.e) + math.log(std))


def dirichlet_entropy(alpha: torch.Tensor) -> torch.Tensor:
    """Entropy of Dirichlet distributions, per row."""
    a0 = alpha.sum(-1)
    k = alpha.shape[-1]
    log_beta = torch.lgamma(alpha).sum(-1) - torch.lgamma(a0)
    return (
        log_beta
        + (a0 - k) * torch.digamma(a0)
        - ((alpha - 1.0) * torch.digamma(alpha)).sum(-1)
    )


def categorical_entropy(logits: torch.Tensor) -> torch.Tensor:
    """Entropy of categorical distributions given unnormalized logits."""
    logp = torch.log_softmax(logits, dim=-1)
    return -(logp.exp() * logp).sum(-1)


# -- numpy-side sampling ------------------------------------------------------


def sample_bounded(mean: np.ndarray, std: float, rng: np.random.Generator) -> np.ndarray:
    """Gaussian exploration around a bounded mean, clamped back to [-1, 1]."""
    raw = mean + std * rng.standard_normal(mean.shape)
    return np.clip(raw, -1.0, 1.0)


def sample_simplex(alpha: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Dirichlet draw via normalized gamma variates, kept inside the open simplex."""
    g = rng.standard_gamma(alpha)
    g = np.clip(g, 1e-300, None)
    x = g / g.sum(-1, keepdims=True)
    x = np.clip(x, VALVE_CLIP, 1.0 - VALVE_CLIP)
    return x / x.sum(-1, keepdims=True)


def sample_categorical(probs: np.ndarray, rng: np.random.Generator) -> int:
    """Single categorical draw from a probability vector."""
    return int(rng.choice(len(probs), p=probs))


# -- checkpoint helpers -------------------------------------------------------


def module_to_jsonable(module: nn.Module) -> dict:
    """State dict as nested lists (exact float64 copies of float32 values)."""
    out = {}
    for name, tensor in module.state_dict().items():
        out[name] = {
            "shape": list(tensor.shape),
            "data": [float(v) for v in tensor.reshape(-1).tolist()],
        }
    return out


def module_from_jsonable(module: nn.Module, payload: dict) -> None:
    """Load a state dict previously produced by ``module_to_jsonable``."""
    state = module.state_dict()
    if set(payload) != set(state):
        missing = set(state) ^ set(payload)
        raise ValueError(f"checkpoint tensors do not match the network: {sorted(missing)}")
    new_state = {}
    for name, entry in payload.items():
        t = torch.tensor(entry["data"], dtype=state[name].dtype).reshape(entry["shape"])
        if tuple(t.shape) != tuple(state[name].shape):
            raise ValueError(
                f"checkpoint tensor {name} has shape {tuple(t.shape)}, "
                f"expected {tuple(state[name].shape)}"
            )
        new_state[name] = t
    module.load_state_dict(new_state)
