"""Tree distillation: sample weights, resampling, CART fitting, fidelity.

The CART implementation is checked against a brute-force greedy reference
that enumerates every midpoint split, and the weight formulas against
hand-evaluated densities (scipy for the Dirichlet case).
"""

from __future__ import annotations

import math

import numpy as np
import pytest
import torch
from scipy import stats

from coldloop import PlantEnv
from coldloop.distill import (
    DistillError,
    DistillResult,
    TreeController,
    TreeNode,
    collect_experience,
    distill_policy,
    ExperiencePoint,
    fidelity_report,
    fidelity_to_jsonable,
    fit_classification_tree,
    fit_regression_tree,
    r_squared,
    resample,
    tree_complexity,
    tree_from_jsonable,
    tree_predict,
    tree_predict_batch,
    tree_to_jsonable,
    tree_to_text,
    viper_weight_bounded,
    viper_weight_categorical,
    viper_weight_multihead,
    viper_weight_simplex,
)
from coldloop.ppo import BladeAgent, CtAgent, PolicyBundle, PpoConfig, run_episode


def seeded(n=0):
    return np.random.Generator(np.random.PCG64(n))


# -- sample weights ------------------------------------------------------------------


def test_weight_categorical_hand_value():
    w, flagged = viper_weight_categorical([0.7, 0.2, 0.1])
    assert w == pytest.approx(math.log(0.7) - math.log(0.1), rel=1e-12)
    assert not flagged


def test_weight_categorical_uniform_is_zero():
    w, flagged = viper_weight_categorical([0.25] * 4)
    assert w == pytest.approx(0.0, abs=1e-15)
    assert not flagged


def test_weight_categorical_floors_zero_probability():
    w, flagged = viper_weight_categorical([1.0, 0.0])
    assert flagged
    assert w == pytest.approx(math.log(1.0) - math.log(1e-12), rel=1e-12)


def test_weight_categorical_validation():
    with pytest.raises(DistillError):
        viper_weight_categorical([])


def test_weight_bounded_hand_value():
    # ((0.5 + 1)^2 + (0.25 + 1)^2) / (2 * 0.6^2)
    w = viper_weight_bounded([0.5, -0.25], 0.6)
    want = (1.5**2 + 1.25**2) / (2 * 0.36)
    assert w == pytest.approx(want, rel=1e-12)


def test_weight_bounded_grows_with_mean_magnitude():
    assert viper_weight_bounded([0.9], 0.5) > viper_weight_bounded([0.1], 0.5)


def test_weight_bounded_rejects_bad_std():
    with pytest.raises(DistillError):
        viper_weight_bounded([0.0], 0.0)


def test_weight_simplex_uniform_alpha_is_zero():
    # A flat Dirichlet has constant density: best and worst points coincide.
    assert viper_weight_simplex([1.0, 1.0, 1.0]) == pytest.approx(0.0, abs=1e-12)


def test_weight_simplex_matches_scipy_density_gap():
    alpha = np.array([2.0, 5.0, 1.5])
    mean = alpha / alpha.sum()
    lp_mean = stats.dirichlet.logpdf(mean, alpha)
    eps = 1e-6
    candidates = [lp_mean]
    for i in range(3):
        v = np.full(3, eps)
        v[i] = 1.0 - 2 * eps
        candidates.append(stats.dirichlet.logpdf(v / v.sum(), alpha))
    want = lp_mean - min(candidates)
    assert viper_weight_simplex(alpha) == pytest.approx(want, rel=1e-6)


def test_weight_simplex_nonnegative_randomized():
    rng = seeded(1)
    for _ in range(100):
        alpha = rng.uniform(0.05, 8.0, int(rng.integers(2, 6)))
        assert viper_weight_simplex(alpha) >= 0.0


def test_weight_simplex_needs_two_branches():
    with pytest.raises(DistillError):
        viper_weight_simplex([2.0])


def test_weight_multihead_is_sum_of_heads():
    mean, std, alpha = [0.3, -0.6], 0.5, [2.0, 3.0, 1.0]
    want = viper_weight_bounded(mean, std) + viper_weight_simplex(alpha)
    assert viper_weight_multihead(mean, std, alpha) == pytest.approx(want, rel=1e-12)


# -- resampling ----------------------------------------------------------------------


def pts(weights):
    return [
        ExperiencePoint(obs=np.array([float(i)]), action=i, weight=w)
        for i, w in enumerate(weights)
    ]


def test_resample_proportional_to_weight():
    sample = resample(pts([5.0, 0.0]), 200, seeded(2))
    assert all(p.action == 0 for p in sample)


def test_resample_frequency_tracks_weights():
    sample = resample(pts([3.0, 1.0]), 8000, seeded(3))
    frac = sum(1 for p in sample if p.action == 0) / len(sample)
    assert frac == pytest.approx(0.75, abs=0.02)


def test_resample_validation():
    with pytest.raises(DistillError):
        resample([], 10, seeded(0))
    with pytest.raises(DistillError):
        resample(pts([1.0]), 0, seeded(0))
    with pytest.raises(DistillError):
        resample(pts([-1.0, 2.0]), 5, seeded(0))
    with pytest.raises(DistillError):
        resample(pts([0.0, 0.0]), 5, seeded(0))


def test_resample_deterministic_by_seed():
    a = [p.action for p in resample(pts([1.0, 2.0, 3.0]), 50, seeded(7))]
    b = [p.action for p in resample(pts([1.0, 2.0, 3.0]), 50, seeded(7))]
    assert a == b


# -- CART vs brute force -------------------------------------------------------------

IMPROVEMENT_EPS = 1e-12


def brute_sse(Y, w):
    w_total = w.sum()
    mean = (w[:, None] * Y).sum(axis=0) / w_total
    return float((w[:, None] * (Y - mean) ** 2).sum())


def brute_best_split(X, Y, w, min_leaf):
    """Enumerate every midpoint split; first strictly better wins ties."""
    best = None
    n, n_features = X.shape
    for f in range(n_features):
        xs = np.unique(X[:, f])
        for lo, hi in zip(xs[:-1], xs[1:]):
            threshold = 0.5 * (lo + hi)
            mask = X[:, f] <= threshold
            n_l = int(mask.sum())
            if n_l < min_leaf or n - n_l < min_leaf:
                continue
            cost = brute_sse(Y[mask], w[mask]) + brute_sse(Y[~mask], w[~mask])
            if best is None or cost < best[2]:
                best = (f, threshold, cost)
    return best


def brute_tree(X, Y, w, depth, max_depth, min_leaf):
    if depth >= max_depth or len(X) < 2 * min_leaf:
        return ("leaf", (w[:, None] * Y).sum(axis=0) / w.sum())
    parent = brute_sse(Y, w)
    found = brute_best_split(X, Y, w, min_leaf)
    if found is None or found[2] >= parent - IMPROVEMENT_EPS:
        return ("leaf", (w[:, None] * Y).sum(axis=0) / w.sum())
    f, threshold, _ = found
    mask = X[:, f] <= threshold
    return (
        "split",
        f,
        threshold,
        brute_tree(X[mask], Y[mask], w[mask], depth + 1, max_depth, min_leaf),
        brute_tree(X[~mask], Y[~mask], w[~mask], depth + 1, max_depth, min_leaf),
    )


def brute_predict(node, x):
    while node[0] == "split":
        _, f, threshold, left, right = node
        node = left if x[f] <= threshold else right
    return node[1]


def test_regression_tree_step_function():
    X = np.array([[0.25], [0.25], [0.75], [0.75]])
    Y = np.array([0.0, 0.0, 1.0, 1.0])
    tree = fit_regression_tree(X, Y)
    assert not tree.is_leaf
    assert tree.feature == 0
    assert tree.threshold == pytest.approx(0.5)
    assert tree_predict(tree, [0.1])[0] == pytest.approx(0.0)
    assert tree_predict(tree, [0.9])[0] == pytest.approx(1.0)
    assert tree_complexity(tree) == {"nodes": 3, "leaves": 2, "depth": 1}


def test_regression_tree_midpoint_thresholds():
    tree = fit_regression_tree(np.array([[0.0], [1.0]]), np.array([0.0, 2.0]))
    assert tree.threshold == pytest.approx(0.5, abs=0.0)


def test_regression_tree_constant_target_is_lone_leaf():
    tree = fit_regression_tree(np.array([[0.0], [1.0], [2.0]]), np.array([4.0, 4.0, 4.0]))
    assert tree.is_leaf
    assert tree_complexity(tree) == {"nodes": 1, "leaves": 1, "depth": 0}
    assert tree_predict(tree, [5.0])[0] == pytest.approx(4.0)


def test_regression_tree_tie_prefers_lowest_feature():
    # Both columns are identical, so both offer the same best split; the
    # scan must keep the first feature it saw.
    x = np.array([0.0, 1.0, 2.0, 3.0])
    X = np.column_stack([x, x])
    Y = np.array([0.0, 0.0, 5.0, 5.0])
    tree = fit_regression_tree(X, Y)
    assert tree.feature == 0


def test_regression_tree_min_leaf_respected():
    x = np.arange(8.0)
    Y = np.array([0.0, 0, 0, 0, 10, 10, 10, 10])
    tree = fit_regression_tree(x[:, None], Y, min_leaf=3)

    def check(node):
        if node.is_leaf:
            return
        # A split honoring min_leaf=3 can only be the 4/4 cut here.
        assert node.threshold == pytest.approx(3.5)
        check(node.left)
        check(node.right)

    check(tree)


def test_regression_tree_max_depth_zero_is_weighted_mean():
    X = np.array([[0.0], [1.0]])
    Y = np.array([1.0, 3.0])
    w = np.array([3.0, 1.0])
    tree = fit_regression_tree(X, Y, w=w, max_depth=0)
    assert tree.is_leaf
    assert tree_predict(tree, [0.0])[0] == pytest.approx(1.5)


def test_regression_tree_matches_brute_force_randomized():
    rng = seeded(4)
    for trial in range(10):
        n = int(rng.integers(6, 16))
        X = rng.normal(size=(n, 2))
        Y = rng.normal(size=(n, 2))
        w = rng.uniform(0.5, 2.0, n)
        max_depth = int(rng.integers(1, 4))
        min_leaf = int(rng.integers(1, 3))
        tree = fit_regression_tree(X, Y, w=w, max_depth=max_depth, min_leaf=min_leaf)
        ref = brute_tree(X, Y, w, 0, max_depth, min_leaf)
        queries = np.vstack([X, rng.normal(size=(20, 2))])
        for q in queries:
            got = tree_predict(tree, q)
            want = brute_predict(ref, q)
            assert np.allclose(got, want, rtol=1e-10, atol=1e-12), (
                f"trial {trial}: {got} != {want} at {q}"
            )


def test_regression_tree_simplex_leaves():
    X = np.array([[0.0], [1.0], [2.0], [3.0]])
    Y = np.array([[0.9, 0.1], [0.8, 0.2], [0.1, 0.9], [0.2, 0.8]])
    tree = fit_regression_tree(X, Y, simplex_leaves=True)

    def walk(node):
        if node.is_leaf:
            assert node.value.sum() == pytest.approx(1.0, abs=1e-12)
            assert np.all(node.value >= 1e-7)
            return
        walk(node.left)
        walk(node.right)

    walk(tree)


def test_regression_tree_validation():
    with pytest.raises(DistillError):
        fit_regression_tree(np.empty((0, 2)), np.empty(0))
    with pytest.raises(DistillError):
        fit_regression_tree(np.zeros((3, 1)), np.zeros(2))
    with pytest.raises(DistillError):
        fit_regression_tree(np.zeros((2, 1)), np.zeros(2), w=np.array([-1.0, 1.0]))
    with pytest.raises(DistillError):
        fit_regression_tree(np.zeros((2, 1)), np.zeros(2), w=np.zeros(2))


def test_classification_tree_hand_case():
    X = np.array([[0.0], [1.0], [2.0], [3.0]])
    y = np.array([0, 0, 1, 1])
    tree = fit_classification_tree(X, y, n_classes=2)
    assert tree.threshold == pytest.approx(1.5)
    assert tree_predict(tree, [0.0]) == 0
    assert tree_predict(tree, [3.0]) == 1


def test_classification_tree_weighted_majority():
    # One heavy point outvotes three light ones in an unsplittable node.
    X = np.zeros((4, 1))
    y = np.array([1, 0, 0, 0])
    w = np.array([10.0, 1.0, 1.0, 1.0])
    tree = fit_classification_tree(X, y, n_classes=2, w=w)
    assert tree.is_leaf
    assert tree_predict(tree, [0.0]) == 1


def test_classification_tree_label_validation():
    with pytest.raises(DistillError):
        fit_classification_tree(np.zeros((2, 1)), np.array([0, 5]), n_classes=2)


def test_classification_tree_pure_after_split_stops():
    X = np.array([[0.0], [1.0], [2.0], [3.0], [4.0], [5.0]])
    y = np.array([0, 0, 0, 1, 1, 1])
    tree = fit_classification_tree(X, y, n_classes=2, max_depth=10)
    # One split fully separates the classes; no further splits may appear.
    assert tree_complexity(tree) == {"nodes": 3, "leaves": 2, "depth": 1}


def test_fit_is_deterministic():
    rng = seeded(5)
    X = rng.normal(size=(30, 3))
    Y = rng.normal(size=(30, 2))
    a = tree_to_jsonable(fit_regression_tree(X, Y, max_depth=4))
    b = tree_to_jsonable(fit_regression_tree(X, Y, max_depth=4))
    assert a == b


# -- serialization and inspection ----------------------------------------------------


def test_tree_json_round_trip():
    rng = seeded(6)
    X = rng.normal(size=(20, 2))
    Y = rng.normal(size=(20, 2))
    tree = fit_regression_tree(X, Y, max_depth=3)
    back = tree_from_jsonable(tree_to_jsonable(tree))
    for q in rng.normal(size=(10, 2)):
        assert np.allclose(tree_predict(back, q), tree_predict(tree, q))


def test_tree_from_jsonable_rejects_malformed():
    with pytest.raises(DistillError, match="missing"):
        tree_from_jsonable({"feature": 0, "threshold": 1.0, "left": {"value": 1}})


def test_tree_to_text_outline():
    tree = TreeNode(
        feature=1,
        threshold=0.5,
        left=TreeNode(value=np.array([1.0])),
        right=TreeNode(value=np.array([2.0])),
    )
    text = tree_to_text(tree)
    assert "if x[1] <= 0.5:" in text
    assert "-> [1]" in text
    named = tree_to_text(tree, feature_names=["a", "b"])
    assert "if b <= 0.5:" in named


def test_tree_predict_batch_stacks_rows():
    tree = fit_regression_tree(np.array([[0.0], [1.0]]), np.array([[0.0, 1.0], [2.0, 3.0]]))
    out = tree_predict_batch(tree, np.array([[0.0], [1.0]]))
    assert out.shape == (2, 2)
    assert np.allclose(out, [[0.0, 1.0], [2.0, 3.0]])


# -- r_squared conventions ------------------------------------------------------------


def test_r_squared_perfect_fit():
    y = np.array([1.0, 2.0, 3.0])
    assert r_squared(y, y) == pytest.approx(1.0)


def test_r_squared_mean_predictor_is_zero():
    truth = np.array([1.0, 2.0, 3.0])
    pred = np.full(3, 2.0)
    assert r_squared(pred, truth) == pytest.approx(0.0, abs=1e-12)


def test_r_squared_constant_truth_conventions():
    truth = np.full(4, 2.0)
    assert r_squared(np.full(4, 2.0), truth) == 1.0
    assert r_squared(np.full(4, 2.5), truth) == 0.0


def test_r_squared_hand_value():
    truth = np.array([0.0, 1.0, 2.0])
    pred = np.array([0.0, 1.0, 1.0])
    # ss_res = 1, ss_tot = 2
    assert r_squared(pred, truth) == pytest.approx(0.5, rel=1e-12)


# -- end-to-end over the plant --------------------------------------------------------


@pytest.fixture(scope="module")
def small_bundle(small_topology_module):
    torch.manual_seed(21)
    cfg = PpoConfig(K_epochs=2, minibatch_size=16, update_interval=8)
    return PolicyBundle(
        blade=BladeAgent(small_topology_module, cfg),
        ct=CtAgent(small_topology_module, PpoConfig.tower_defaults()),
        topology=small_topology_module,
    )


@pytest.fixture(scope="module")
def small_topology_module():
    from conftest import small_timing
    from coldloop.topology import SystemTopology, TowerParams

    return SystemTopology(
        num_towers=1,
        cells_per_tower=1,
        num_cabinets=2,
        blade_groups_per_cabinet=3,
        tower=TowerParams(design_water_flow=6.0),
        timing=small_timing(),
    )


@pytest.fixture(scope="module")
def small_trace_module(small_topology_module):
    from coldloop import synthetic_trace

    return synthetic_trace(small_topology_module, duration=20000.0, seed=11)


def test_collect_experience_counts(small_bundle, small_topology_module, small_trace_module):
    env = PlantEnv(small_topology_module, small_trace_module, seed=0)
    exp = collect_experience(small_bundle, env, episodes=1)
    steps = small_topology_module.episode_steps
    assert len(exp.blade_points) == steps * 2
    assert len(exp.ct_points) == steps * 1
    assert all(p.weight >= 0.0 for p in exp.blade_points)
    assert all(len(p.action) == 2 + 3 for p in exp.blade_points)
    assert all(isinstance(p.action, int) for p in exp.ct_points)


def test_distill_policy_end_to_end(small_bundle, small_topology_module, small_trace_module):
    env = PlantEnv(small_topology_module, small_trace_module, seed=0)
    result = distill_policy(
        small_bundle, env, episodes=2, resample_size=64, seed=5, max_depth=6
    )
    assert isinstance(result, DistillResult)
    assert result.blade_points == 2 * small_topology_module.episode_steps * 2
    assert result.resampled == 64
    for tree in (result.controller.pair_tree, result.controller.valve_tree,
                 result.controller.ct_tree):
        assert tree_complexity(tree)["depth"] <= 6

    # The controller plays a full episode and emits well-formed actions.
    outcomes = run_episode(PlantEnv(small_topology_module, small_trace_module, seed=1),
                           result.controller)
    assert outcomes[-1].done
    blade_actions, ct_actions, _ = result.controller.act(outcomes[0])
    for row in blade_actions:
        assert len(row) == 5
        assert sum(row[2:]) == pytest.approx(1.0, abs=1e-9)
    assert all(isinstance(a, int) for a in ct_actions)


def test_tree_controller_json_round_trip(
    small_bundle, small_topology_module, small_trace_module
):
    env = PlantEnv(small_topology_module, small_trace_module, seed=0)
    result = distill_policy(
        small_bundle, env, episodes=1, resample_size=32, seed=5, max_depth=4
    )
    doc = result.controller.to_jsonable()
    back = TreeController.from_jsonable(doc)
    out = PlantEnv(small_topology_module, small_trace_module, seed=2).reset()
    assert back.act(out) == result.controller.act(out)


def test_fidelity_report_structure(small_bundle, small_topology_module, small_trace_module):
    env = PlantEnv(small_topology_module, small_trace_module, seed=0)
    result = distill_policy(
        small_bundle, env, episodes=1, resample_size=64, seed=5, max_depth=6
    )
    reports = fidelity_report(result.controller, small_bundle, env, episodes=1)
    assert set(reports) == {"cabinet", "ct"}
    cab, ct = reports["cabinet"], reports["ct"]
    assert len(cab.r2) == 2 + 3 and len(cab.mae) == 2 + 3
    assert len(ct.r2) == 1 and len(ct.mae) == 1
    assert set(cab.complexity) == {"pair_tree", "valve_tree"}
    assert set(ct.complexity) == {"ct_tree"}
    assert math.isfinite(cab.avg_reward) and math.isfinite(ct.avg_reward)
    doc = fidelity_to_jsonable(reports)
    assert doc["cabinet"]["r2"] == list(cab.r2)
    assert doc["ct"]["complexity"]["ct_tree"] == ct.complexity["ct_tree"]


def test_distill_validation(small_bundle, small_topology_module, small_trace_module):
    env = PlantEnv(small_topology_module, small_trace_module, seed=0)
    with pytest.raises(DistillError):
        collect_experience(small_bundle, env, episodes=0)
    with pytest.raises(DistillError):
        fidelity_report(TreeController(
            pair_tree=TreeNode(value=np.zeros(2)),
            valve_tree=TreeNode(value=np.full(3, 1 / 3)),
            ct_tree=TreeNode(value=0),
        ), small_bundle, env, episodes=0)
