"""Distilling the trained policies into decision trees.

States visited by the deterministic (modal) policies are weighted by how
costly the worst admissible action would be relative to the modal one
(difference of action log densities), resampled proportionally to that
weight, and fit with hand-rolled CART trees: one classification tree for
the tower deltas and two regression trees for the cabinet side (the
setpoint/flow pair and the valve split).

Trees are plain nested nodes — JSON-serializable and printable — so a
distilled controller is fully auditable.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Any, Sequence

import numpy as np

from .env import PlantEnv, StepOutcome
from .ppo import PolicyBundle, run_episode

WEIGHT_FLOOR = 1e-12
SIMPLEX_EPS = 1e-6
IMPROVEMENT_EPS = 1e-12


class DistillError(RuntimeError):
    """Raised for empty datasets, degenerate weights, or malformed trees."""


# -- sample weights ------------------------------------------------------------


def viper_weight_categorical(probs: Sequence[float]) -> tuple[float, bool]:
    """Weight of a state under a categorical policy.

    log p(best action) - log p(worst action), with the worst probability
    floored at WEIGHT_FLOOR; the flag reports that the floor was hit.
    """
    p = np.asarray(probs, dtype=np.float64)
    if p.ndim != 1 or len(p) == 0:
        raise DistillError("probability vector must be 1-D and non-empty")
    p_best = float(p.max())
    p_worst = float(p.min())
    flagged = p_worst < WEIGHT_FLOOR
    p_worst = max(p_worst, WEIGHT_FLOOR)
    p_best = max(p_best, WEIGHT_FLOOR)
    return math.log(p_best) - math.log(p_worst), flagged


def viper_weight_bounded(mean: Sequence[float], std: float) -> float:
    """Weight contribution of the Gaussian head over [-1, 1] commands.

    For each dimension the worst admissible action is the boundary farther
    from the mean, giving (|mean| + 1)^2 / (2 std^2).
    """
    if std <= 0.0:
        raise DistillError(f"std {std} must be > 0")
    total = 0.0
    for m in mean:
        b = (abs(float(m)) + 1.0) ** 2
        total += b / (2.0 * std * std)
    return total


def _dirichlet_logpdf_np(x: np.ndarray, alpha: np.ndarray) -> float:
    return float(
        math.lgamma(float(alpha.sum()))
        - sum(math.lgamma(float(a)) for a in alpha)
        + float(((alpha - 1.0) * np.log(x)).sum())
    )


def viper_weight_simplex(alpha: Sequence[float]) -> float:
    """Weight contribution of the Dirichlet head.

    Log density at the mean minus the minimum over the admissible extreme
    points (simplex vertices pulled inward by SIMPLEX_EPS) and the mean
    itself, so the result is never negative.
    """
    a = np.asarray(alpha, dtype=np.float64)
    k = len(a)
    if k < 2:
        raise DistillError("a valve split needs at least two branches")
    mean = a / a.sum()
    lp_mean = _dirichlet_logpdf_np(mean, a)
    worst = lp_mean
    for i in range(k):
        vertex = np.full(k, SIMPLEX_EPS)
        vertex[i] = 1.0 - (k - 1) * SIMPLEX_EPS
        worst = min(worst, _dirichlet_logpdf_np(vertex, a))
    return lp_mean - worst


def viper_weight_multihead(
    mean: Sequence[float], std: float, alpha: Sequence[float]
) -> float:
    """Joint weight of the cabinet policy's two heads (sum per head)."""
    return viper_weight_bounded(mean, std) + viper_weight_simplex(alpha)


# -- experience collection and resampling -------------------------------------


@dataclass(frozen=True)
class ExperiencePoint:
    """One state visited by the expert with its action and weight."""

    obs: np.ndarray
    action: Any
    weight: float


@dataclass
class ExperienceSet:
    """Collected expert experience for both plant sides."""

    blade_points: list[ExperiencePoint]
    ct_points: list[ExperiencePoint]
    floor_flags: int


def collect_experience(
    bundle: PolicyBundle, env: PlantEnv, episodes: int
) -> ExperienceSet:
    """Roll the modal policies and record per-unit experience points.

    Every step contributes one point per cabinet (action = setpoint/flow
    means followed by the valve split) and one per tower (action = delta
    index).
    """
    if episodes <= 0:
        raise DistillError("episodes must be > 0")
    import torch

    blade_points: list[ExperiencePoint] = []
    ct_points: list[ExperiencePoint] = []
    flags = 0
    std = bundle.blade.std
    for _ in range(episodes):
        outcome = env.reset()
        while not outcome.done:
            blade_obs = np.asarray(outcome.blade_obs, dtype=np.float64)
            with torch.no_grad():
                mean_t, alpha_t = bundle.blade.actor(
                    torch.as_tensor(blade_obs, dtype=torch.float32)
                )
            mean = mean_t.numpy().astype(np.float64)
            alpha = alpha_t.numpy().astype(np.float64)
            valves = alpha / alpha.sum(-1, keepdims=True)
            for i in range(len(blade_obs)):
                w = viper_weight_multihead(mean[i], std, alpha[i])
                blade_points.append(
                    ExperiencePoint(
                        obs=blade_obs[i],
                        action=np.concatenate([mean[i], valves[i]]),
                        weight=w,
                    )
                )
            ct_obs = np.asarray(outcome.ct_obs, dtype=np.float64)
            for i in range(len(ct_obs)):
                probs = bundle.ct.probs(ct_obs[i])
                w, flagged = viper_weight_categorical(probs)
                flags += int(flagged)
                ct_points.append(
                    ExperiencePoint(obs=ct_obs[i], action=int(np.argmax(probs)), weight=w)
                )
            blade_actions = [
                list(mean[i]) + list(valves[i]) for i in range(len(blade_obs))
            ]
            ct_actions = [int(np.argmax(bundle.ct.probs(o))) for o in ct_obs]
            outcome = env.step(blade_actions, ct_actions)
    return ExperienceSet(blade_points=blade_points, ct_points=ct_points, floor_flags=flags)


def resample(
    points: Sequence[ExperiencePoint], size: int, rng: np.random.Generator
) -> list[ExperiencePoint]:
    """Draw ``size`` points with replacement, proportional to their weights."""
    if len(points) == 0:
        raise DistillError("cannot resample from an empty experience set")
    if size <= 0:
        raise DistillError("resample size must be > 0")
    w = np.asarray([p.weight for p in points], dtype=np.float64)
    if np.any(w < 0.0):
        raise DistillError("experience weights must be >= 0")
    total = float(w.sum())
    if total <= 0.0:
        raise DistillError("all experience weights are zero; nothing to prefer")
    idx = rng.choice(len(points), size=size, replace=True, p=w / total)
    return [points[i] for i in idx]


# -- CART ----------------------------------------------------------------------


@dataclass
class TreeNode:
    """One node: internal (feature, threshold, children) or leaf (value)."""

    feature: int | None = None
    threshold: float | None = None
    left: "TreeNode | None" = None
    right: "TreeNode | None" = None
    value: Any = None

    @property
    def is_leaf(self) -> bool:
        return self.feature is None


def _best_split(
    X: np.ndarray, Y: np.ndarray, w: np.ndarray, min_leaf: int
) -> tuple[int, float, float] | None:
    """Scan all features for the split minimizing total weighted impurity.

    ``Y`` is the target matrix (one-hot for classification), and impurity
    per side is sum(w * ||y||^2) - sum_j (sum(w * y_j))^2 / sum(w) — SSE
    for regression, weighted Gini (times total weight) for one-hot targets.
    Returns (feature, threshold, total impurity) of the best valid split,
    or None when no feature offers one.
    """
    n, n_features = X.shape
    best: tuple[int, float, float] | None = None
    wy_total = (w[:, None] * Y).sum(axis=0)
    w_total = float(w.sum())
    for f in range(n_features):
        order = np.argsort(X[:, f], kind="stable")
        xs = X[order, f]
        ws = w[order]
        ys = Y[order]
        wy = ws[:, None] * ys
        wyy = (wy * ys).sum(axis=1)

        cw = np.cumsum(ws)[:-1]
        cs = np.cumsum(wy, axis=0)[:-1]
        cq = np.cumsum(wyy)[:-1]

        counts = np.arange(1, n)
        valid = (
            (xs[:-1] < xs[1:])
            & (counts >= min_leaf)
            & (n - counts >= min_leaf)
            & (cw > 0.0)
            & (w_total - cw > 0.0)
        )
        if not np.any(valid):
            continue
        rs = wy_total[None, :] - cs
        rq = (cq[-1] + wyy[-1]) - cq
        with np.errstate(divide="ignore", invalid="ignore"):
            imp_left = cq - (cs * cs).sum(axis=1) / cw
            imp_right = rq - (rs * rs).sum(axis=1) / (w_total - cw)
        cost = imp_left + imp_right
        cost[~valid | ~np.isfinite(cost)] = np.inf
        i = int(np.argmin(cost))
        if not np.isfinite(cost[i]):
            continue
        threshold = 0.5 * (xs[i] + xs[i + 1])
        if best is None or cost[i] < best[2]:
            best = (f, float(threshold), float(cost[i]))
    return best


def _node_impurity(Y: np.ndarray, w: np.ndarray) -> float:
    w_total = float(w.sum())
    wy = (w[:, None] * Y).sum(axis=0)
    wyy = float((w[:, None] * Y * Y).sum())
    return wyy - float((wy * wy).sum()) / w_total


def _fit_node(
    X: np.ndarray,
    Y: np.ndarray,
    w: np.ndarray,
    depth: int,
    max_depth: int,
    min_leaf: int,
    leaf_value,
) -> TreeNode:
    if depth >= max_depth or len(X) < 2 * min_leaf:
        return TreeNode(value=leaf_value(Y, w))
    parent = _node_impurity(Y, w)
    found = _best_split(X, Y, w, min_leaf)
    if found is None or found[2] >= parent - IMPROVEMENT_EPS:
        return TreeNode(value=leaf_value(Y, w))
    f, threshold, _ = found
    mask = X[:, f] <= threshold
    left = _fit_node(X[mask], Y[mask], w[mask], depth + 1, max_depth, min_leaf, leaf_value)
    right = _fit_node(
        X[~mask], Y[~mask], w[~mask], depth + 1, max_depth, min_leaf, leaf_value
    )
    return TreeNode(feature=f, threshold=threshold, left=left, right=right)


def _check_training_arrays(X: np.ndarray, w: np.ndarray, n_rows: int) -> None:
    if len(X) == 0:
        raise DistillError("cannot fit a tree on an empty dataset")
    if len(w) != n_rows or len(X) != n_rows:
        raise DistillError("features, targets, and weights must share length")
    if np.any(w < 0.0) or float(w.sum()) <= 0.0:
        raise DistillError("weights must be >= 0 with a positive sum")


def fit_regression_tree(
    X: np.ndarray,
    Y: np.ndarray,
    w: np.ndarray | None = None,
    max_depth: int = 17,
    min_leaf: int = 1,
    simplex_leaves: bool = False,
) -> TreeNode:
    """Weighted multi-output CART regression (SSE criterion, midpoint splits).

    Splits are accepted only on a strict impurity decrease; ties resolve to
    the lowest feature index and threshold. With ``simplex_leaves`` each
    leaf mean is clipped to [1e-6, 1] and renormalized to sum 1.
    """
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if Y.ndim == 1:
        Y = Y[:, None]
    w_arr = np.ones(len(X)) if w is None else np.asarray(w, dtype=np.float64)
    _check_training_arrays(X, w_arr, len(Y))

    def leaf_value(Yn: np.ndarray, wn: np.ndarray) -> np.ndarray:
        mean = (wn[:, None] * Yn).sum(axis=0) / wn.sum()
        if simplex_leaves:
            mean = np.clip(mean, 1e-6, 1.0)
            mean = mean / mean.sum()
        return mean

    return _fit_node(X, Y, w_arr, 0, max_depth, min_leaf, leaf_value)


def fit_classification_tree(
    X: np.ndarray,
    y: np.ndarray,
    n_classes: int,
    w: np.ndarray | None = None,
    max_depth: int = 17,
    min_leaf: int = 1,
) -> TreeNode:
    """Weighted CART classification (Gini criterion, midpoint splits).

    Leaves store the weighted-majority class index (lowest index on ties).
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if n_classes <= 0 or (len(y) and (y.min() < 0 or y.max() >= n_classes)):
        raise DistillError("class labels must lie in [0, n_classes)")
    w_arr = np.ones(len(X)) if w is None else np.asarray(w, dtype=np.float64)
    _check_training_arrays(X, w_arr, len(y))
    onehot = np.zeros((len(y), n_classes), dtype=np.float64)
    onehot[np.arange(len(y)), y] = 1.0

    def leaf_value(Yn: np.ndarray, wn: np.ndarray) -> int:
        return int(np.argmax((wn[:, None] * Yn).sum(axis=0)))

    return _fit_node(X, onehot, w_arr, 0, max_depth, min_leaf, leaf_value)


def tree_predict(tree: TreeNode, x: Sequence[float]):
    """Single prediction: descend with x[feature] <= threshold going left."""
    node = tree
    while not node.is_leaf:
        node = node.left if x[node.feature] <= node.threshold else node.right
    return node.value


def tree_predict_batch(tree: TreeNode, X: np.ndarray) -> np.ndarray:
    """Row-wise predictions stacked into an array."""
    return np.asarray([tree_predict(tree, row) for row in np.asarray(X)])


def tree_complexity(tree: TreeNode) -> dict[str, int]:
    """Node, leaf, and depth counts (a lone leaf has depth 0)."""

    def walk(node: TreeNode) -> tuple[int, int, int]:
        if node.is_leaf:
            return 1, 1, 0
        ln, ll, ld = walk(node.left)
        rn, rl, rd = walk(node.right)
        return ln + rn + 1, ll + rl, max(ld, rd) + 1

    nodes, leaves, depth = walk(tree)
    return {"nodes": nodes, "leaves": leaves, "depth": depth}


def tree_to_jsonable(tree: TreeNode) -> dict[str, Any]:
    """Nested-dict form of a tree (leaf values as lists or ints)."""
    if tree.is_leaf:
        v = tree.value
        if isinstance(v, np.ndarray):
            v = [float(x) for x in v]
        return {"value": v}
    return {
        "feature": tree.feature,
        "threshold": tree.threshold,
        "left": tree_to_jsonable(tree.left),
        "right": tree_to_jsonable(tree.right),
    }


def tree_from_jsonable(doc: dict[str, Any]) -> TreeNode:
    """Rebuild a tree from its nested-dict form."""
    if "value" in doc:
        v = doc["value"]
        if isinstance(v, list):
            v = np.asarray(v, dtype=np.float64)
        return TreeNode(value=v)
    for key in ("feature", "threshold", "left", "right"):
        if key not in doc:
            raise DistillError(f"malformed tree node: missing {key!r}")
    return TreeNode(
        feature=int(doc["feature"]),
        threshold=float(doc["threshold"]),
        left=tree_from_jsonable(doc["left"]),
        right=tree_from_jsonable(doc["right"]),
    )


def tree_to_text(tree: TreeNode, feature_names: Sequence[str] | None = None) -> str:
    """Human-readable outline of a tree."""

    def name(f: int) -> str:
        return feature_names[f] if feature_names else f"x[{f}]"

    lines: list[str] = []

    def walk(node: TreeNode, indent: int) -> None:
        pad = "  " * indent
        if node.is_leaf:
            v = node.value
            if isinstance(v, np.ndarray):
                v = "[" + ", ".join(f"{x:.6g}" for x in v) + "]"
            lines.append(f"{pad}-> {v}")
            return
        lines.append(f"{pad}if {name(node.feature)} <= {node.threshold:.6g}:")
        walk(node.left, indent + 1)
        lines.append(f"{pad}else:")
        walk(node.right, indent + 1)

    walk(tree, 0)
    return "\n".join(lines)


# -- distilled controller and fidelity -----------------------------------------


@dataclass
class TreeController:
    """Decision-tree controller mirroring the policy bundle's action layout."""

    pair_tree: TreeNode
    valve_tree: TreeNode
    ct_tree: TreeNode

    def act(self, outcome: StepOutcome):
        blade_actions = []
        for obs in outcome.blade_obs:
            pair = tree_predict(self.pair_tree, obs)
            valves = tree_predict(self.valve_tree, obs)
            blade_actions.append([float(pair[0]), float(pair[1])] + [float(v) for v in valves])
        ct_actions = [int(tree_predict(self.ct_tree, obs)) for obs in outcome.ct_obs]
        return blade_actions, ct_actions, None

    def to_jsonable(self) -> dict[str, Any]:
        return {
            "pair_tree": tree_to_jsonable(self.pair_tree),
            "valve_tree": tree_to_jsonable(self.valve_tree),
            "ct_tree": tree_to_jsonable(self.ct_tree),
        }

    @staticmethod
    def from_jsonable(doc: dict[str, Any]) -> "TreeController":
        return TreeController(
            pair_tree=tree_from_jsonable(doc["pair_tree"]),
            valve_tree=tree_from_jsonable(doc["valve_tree"]),
            ct_tree=tree_from_jsonable(doc["ct_tree"]),
        )


@dataclass
class DistillResult:
    """Trees plus bookkeeping from one distillation run."""

    controller: TreeController
    blade_points: int
    ct_points: int
    resampled: int
    floor_flags: int


def distill_policy(
    bundle: PolicyBundle,
    env: PlantEnv,
    episodes: int,
    resample_size: int,
    seed: int,
    max_depth: int = 17,
    min_leaf: int = 1,
) -> DistillResult:
    """Full pipeline: collect modal experience, resample by weight, fit trees."""
    rng = np.random.Generator(np.random.PCG64(seed))
    exp = collect_experience(bundle, env, episodes)

    blade_sample = resample(exp.blade_points, resample_size, rng)
    ct_sample = resample(exp.ct_points, resample_size, rng)

    bx = np.asarray([p.obs for p in blade_sample])
    ba = np.asarray([p.action for p in blade_sample])
    pair_tree = fit_regression_tree(bx, ba[:, :2], max_depth=max_depth, min_leaf=min_leaf)
    valve_tree = fit_regression_tree(
        bx, ba[:, 2:], max_depth=max_depth, min_leaf=min_leaf, simplex_leaves=True
    )
    cx = np.asarray([p.obs for p in ct_sample])
    cy = np.asarray([p.action for p in ct_sample], dtype=np.int64)
    ct_tree = fit_classification_tree(
        cx, cy, n_classes=len(bundle.topology.ct_action_deltas),
        max_depth=max_depth, min_leaf=min_leaf,
    )
    return DistillResult(
        controller=TreeController(pair_tree=pair_tree, valve_tree=valve_tree, ct_tree=ct_tree),
        blade_points=len(exp.blade_points),
        ct_points=len(exp.ct_points),
        resampled=resample_size,
        floor_flags=exp.floor_flags,
    )


def r_squared(pred: np.ndarray, truth: np.ndarray) -> float:
    """Coefficient of determination; a constant truth column scores 1 when
    matched exactly and 0 otherwise."""
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    ss_res = float(((pred - truth) ** 2).sum())
    ss_tot = float(((truth - truth.mean()) ** 2).sum())
    if ss_tot <= 1e-12:
        return 1.0 if ss_res <= 1e-12 else 0.0
    return 1.0 - ss_res / ss_tot


@dataclass(frozen=True)
class FidelityReport:
    """Controller quality of one distilled tree set.

    Attributes:
        avg_reward: mean per-unit episode return running the trees.
        r2: per action dimension, tree vs expert on expert-visited states.
        mae: mean absolute error per action dimension, same states.
        complexity: per-tree node/leaf/depth counts.
    """

    avg_reward: float
    r2: tuple[float, ...]
    mae: tuple[float, ...]
    complexity: dict[str, dict[str, int]]


def fidelity_report(
    controller: TreeController,
    bundle: PolicyBundle,
    env: PlantEnv,
    episodes: int,
) -> dict[str, FidelityReport]:
    """Measure tree fidelity against the expert for both plant sides.

    The R^2/MAE columns compare tree predictions with expert modal actions
    on the states the EXPERT visits; the rewards come from running the
    trees themselves. Tower actions are compared on the delta values (degC)
    behind the indices.
    """
    if episodes <= 0:
        raise DistillError("episodes must be > 0")
    exp = collect_experience(bundle, env, episodes)

    bx = np.asarray([p.obs for p in exp.blade_points])
    ba = np.asarray([p.action for p in exp.blade_points])
    pair_pred = tree_predict_batch(controller.pair_tree, bx)
    valve_pred = tree_predict_batch(controller.valve_tree, bx)
    blade_pred = np.concatenate([pair_pred, valve_pred], axis=1)
    blade_r2 = tuple(r_squared(blade_pred[:, j], ba[:, j]) for j in range(ba.shape[1]))
    blade_mae = tuple(
        float(np.abs(blade_pred[:, j] - ba[:, j]).mean()) for j in range(ba.shape[1])
    )

    deltas = np.asarray(bundle.topology.ct_action_deltas, dtype=np.float64)
    cx = np.asarray([p.obs for p in exp.ct_points])
    cy = np.asarray([p.action for p in exp.ct_points], dtype=np.int64)
    ct_pred_idx = tree_predict_batch(controller.ct_tree, cx).astype(np.int64)
    ct_r2 = (r_squared(deltas[ct_pred_idx], deltas[cy]),)
    ct_mae = (float(np.abs(deltas[ct_pred_idx] - deltas[cy]).mean()),)

    blade_rewards = []
    ct_rewards = []
    for _ in range(episodes):
        outcomes = run_episode(env, controller)
        c = env.num_cabinets
        n = env.num_towers
        blade_rewards.append(
            sum(sum(o.blade_rewards) for o in outcomes) / c
        )
        ct_rewards.append(sum(sum(o.ct_rewards) for o in outcomes) / n)

    blade_report = FidelityReport(
        avg_reward=float(np.mean(blade_rewards)),
        r2=blade_r2,
        mae=blade_mae,
        complexity={
            "pair_tree": tree_complexity(controller.pair_tree),
            "valve_tree": tree_complexity(controller.valve_tree),
        },
    )
    ct_report = FidelityReport(
        avg_reward=float(np.mean(ct_rewards)),
        r2=ct_r2,
        mae=ct_mae,
        complexity={"ct_tree": tree_complexity(controller.ct_tree)},
    )
    return {"cabinet": blade_report, "ct": ct_report}


def fidelity_to_jsonable(reports: dict[str, FidelityReport]) -> dict[str, Any]:
    """JSON-ready form of the fidelity reports."""
    out: dict[str, Any] = {}
    for side, rep in reports.items():
        out[side] = {
            "avg_reward": rep.avg_reward,
            "r2": list(rep.r2),
            "mae": list(rep.mae),
            "complexity": rep.complexity,
        }
    return out
