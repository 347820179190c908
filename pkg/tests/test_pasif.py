import numpy as np
import pytest

from opesel import nn
from opesel.bandit import LoggedDataset, sample_logged_data, softmax_policy
from opesel.errors import DegenerateSplitError
from opesel.estimators import EstimatorCandidate, make_candidate_set
from opesel.pasif import (
    ImportanceFit, PasifConfig, SubsamplingRule, bootstrap, estimate_mse_pasif, objective_d,
    objective_gradient, pasif_estimate_mses, pseudo_from_rho, pseudo_policies, record_rho_gradient,
    regularizer_gradient, regularizer_r, subsample, train_subsampler,
)

from oracles import central_difference, jitter_biases, pseudo_ratio_by_hand, relative_error

FAST = PasifConfig(learning_rate=0.01, max_steps=60, hidden=16, reg_grid=(10.0,), seeds=(0, 1))


def constant_rule(value, dim, n_actions):
    rule = SubsamplingRule.initial(dim, n_actions, 4, 0)
    for k in ("W1", "W2", "W3", "b1", "b2"):
        rule.params[k] = np.zeros_like(rule.params[k])
    rule.params["b3"] = np.array([np.log(value / (1 - value))])
    return rule


def test_hand_example():
    pair = pseudo_from_rho(np.array([[0.8, 0.2]]), np.array([[0.5, 0.5]]))
    assert np.allclose(pair.evaluation, [[0.8, 0.2]])
    assert np.allclose(pair.behavior, [[0.2, 0.8]])
    assert np.allclose(pair.ratio, [[4.0, 0.25]])


def test_constant_rule_reproduces_behavior(env, behavior, data):
    rule = constant_rule(0.3, env.dim, env.n_actions)
    pair = pseudo_policies(rule, behavior, data.context)
    pb = behavior.probs(data.context)
    assert np.allclose(pair.evaluation, pb) and np.allclose(pair.behavior, pb)
    assert objective_d(rule, behavior, behavior, data) == pytest.approx(0.0, abs=1e-20)


def test_pseudo_policies_normalize(env, behavior, data):
    rule = SubsamplingRule.initial(env.dim, env.n_actions, 16, 5)
    pair = pseudo_policies(rule, behavior, data.context)
    assert np.allclose(pair.evaluation.sum(axis=1), 1, atol=1e-10)
    assert np.allclose(pair.behavior.sum(axis=1), 1, atol=1e-10)
    assert np.all(pair.evaluation > 0) and np.all(pair.behavior > 0)


def test_objective_toy_and_nonnegativity(env, behavior, target, data):
    rule = SubsamplingRule.initial(env.dim, env.n_actions, 8, 1)
    sub = data.take(np.arange(3))
    rho = rule.rho_grid(sub.context)
    pb = behavior.probs(sub.context)
    w = target.prob_of(sub.context, sub.action) / sub.pscore
    w_tilde = [pseudo_ratio_by_hand(rho[i], pb[i], sub.action[i]) for i in range(3)]
    assert objective_d(rule, target, behavior, sub) == pytest.approx(np.mean((w - w_tilde) ** 2))
    assert objective_d(rule, target, behavior, data) >= 0


def test_regularizer_examples(env, behavior, data):
    assert regularizer_r(constant_rule(0.2, env.dim, env.n_actions), behavior, data, 0.2) == pytest.approx(0, abs=1e-20)
    rule = constant_rule(0.2, env.dim, env.n_actions)
    grads = regularizer_gradient(rule, behavior, data, 0.2)
    assert all(np.allclose(g, 0, atol=1e-14) for g in grads.values())


def test_regularizer_two_context_example():
    # E(x) = 0.3 and 0.1 with k = 0.2
    pb = np.array([[0.5, 0.5], [0.5, 0.5]])
    rho = np.array([[0.3, 0.3], [0.1, 0.1]])
    e = np.sum(pb * rho, axis=1)
    assert np.mean((e - 0.2) ** 2) == pytest.approx(0.01)


def test_record_gradient_signs(env, behavior, target, data):
    rng = np.random.default_rng(0)
    rho = rng.uniform(0.05, 0.95, (50, env.n_actions))
    pb = behavior.probs(data.context[:50])
    a = data.action[:50]
    e = np.sum(pb * rho, axis=1)
    idx = np.arange(50)
    r = rho[idx, a]
    third = 1 - pb[idx, a] * r * (1 - r) / (e * (1 - e))
    assert np.all(1 / e - 1 > 0)
    assert np.all((third >= 0) & (third <= 1))
    w_tilde = r / (1 - r) * (1 - e) / e
    assert np.allclose(record_rho_gradient(rho, pb, a, w_tilde), 0)


def test_record_gradient_matches_rho_space_differences(behavior, target, data):
    rng = np.random.default_rng(1)
    sub = data.take(np.arange(40))
    rho = rng.uniform(0.05, 0.95, (40, sub.n_actions))
    pb = behavior.probs(sub.context)
    w = target.prob_of(sub.context, sub.action) / sub.pscore
    g = record_rho_gradient(rho, pb, sub.action, w)
    for i in range(40):
        def d_i():
            return (w[i] - pseudo_ratio_by_hand(rho[i], pb[i], sub.action[i])) ** 2
        fd = central_difference(d_i, rho[i])[sub.action[i]]
        assert relative_error(g[i], fd, 1e-8) < 1e-3


def test_full_gradient_matches_parameter_differences(env, behavior, target, data):
    sub = data.take(np.arange(60))
    rule = SubsamplingRule.initial(env.dim, env.n_actions, 6, 2)
    jitter_biases(rule.params, np.random.default_rng(2))
    grads = objective_gradient(rule, target, behavior, sub, full=True)

    def d():
        return objective_d(rule, target, behavior, sub)

    for name in nn.PARAM_NAMES:
        assert relative_error(grads[name], central_difference(d, rule.params[name]), 1e-7) < 1e-4


def test_diagonal_gradient_differs_only_by_cross_terms(env, behavior, target, data):
    sub = data.take(np.arange(60))
    rule = SubsamplingRule.initial(env.dim, env.n_actions, 6, 2)
    diag = objective_gradient(rule, target, behavior, sub)
    full = objective_gradient(rule, target, behavior, sub, full=True)
    assert any(not np.allclose(diag[k], full[k]) for k in nn.PARAM_NAMES)


def test_regularizer_gradient_matches_differences(env, behavior, data):
    rule = SubsamplingRule.initial(env.dim, env.n_actions, 6, 3)
    jitter_biases(rule.params, np.random.default_rng(3))
    grads = regularizer_gradient(rule, behavior, data, 0.2)

    def r():
        return regularizer_r(rule, behavior, data, 0.2)

    for name in nn.PARAM_NAMES:
        assert relative_error(grads[name], central_difference(r, rule.params[name]), 1e-7) < 1e-4


def test_one_step_moves_rate_toward_target(env, behavior, data):
    rule = constant_rule(0.5, env.dim, env.n_actions)
    rule.params["W3"] = np.random.default_rng(0).normal(0, 0.1, rule.params["W3"].shape)
    rule.params["b1"] = np.full_like(rule.params["b1"], 0.1)
    before = ImportanceFit(behavior, behavior, data, 0.2).values(rule.params)[2]
    grads = regularizer_gradient(rule, behavior, data, 0.2)
    params, _ = nn.adam_step(rule.params, nn.adam_init(rule.params, 0.01), grads)
    after = ImportanceFit(behavior, behavior, data, 0.2).values(params)[2]
    assert before > 0.2 and after < before


def test_training_on_policy_gives_near_constant_rule(env, behavior, data):
    rule = train_subsampler(behavior, behavior, data, PasifConfig(
        learning_rate=0.01, max_steps=200, hidden=16, reg_grid=(1.0, 10.0)), seed=0)
    assert rule.objective < 0.05
    assert abs(rule.mean_rate - 0.2) < 0.05


def test_training_improves_on_initialization(env, behavior, data):
    pi_e = softmax_policy(env, 10.0)
    cfg = PasifConfig(learning_rate=0.01, max_steps=150, hidden=16, reg_grid=(10.0,))
    init = SubsamplingRule.initial(env.dim + 0, env.n_actions, 16, 0)
    rule = train_subsampler(pi_e, behavior, data, cfg, seed=0)
    assert rule.objective < objective_d(init, pi_e, behavior, data)
    loss = rule.history
    windows = loss[: len(loss) // 50 * 50].reshape(-1, 50).mean(axis=1)
    assert np.mean(np.diff(windows) <= 0) >= 0.5


def test_band_then_closest_selection(env, behavior, target, data):
    cfg = PasifConfig(learning_rate=0.01, max_steps=40, hidden=8, reg_grid=(0.0, 1000.0))
    rule = train_subsampler(target, behavior, data, cfg, seed=0)
    lo, hi = cfg.rate_band
    assert lo <= rule.mean_rate <= hi or rule.reg in cfg.reg_grid


def test_subsample_partition(env, behavior, data):
    rule = constant_rule(0.2, env.dim, env.n_actions)
    big = sample_logged_data(env, behavior, 2000, 4)
    split = subsample(rule, big, behavior, seed=0)
    assert split.eval_data.n + split.behavior_data.n == big.n
    assert abs(split.eval_data.n - 400) < 3 * np.sqrt(2000 * 0.2 * 0.8)
    # constant rule: pseudo propensities equal the behavior propensities
    assert np.allclose(split.behavior_data.pscore, big.pscore[~split.to_eval])
    nearly_all = subsample(constant_rule(0.995, env.dim, env.n_actions), big, behavior, seed=0)
    assert nearly_all.eval_data.n >= 0.98 * big.n
    with pytest.raises(DegenerateSplitError):
        subsample(constant_rule(1 - 1e-6, env.dim, env.n_actions), big, behavior, seed=0)


def test_subsample_degenerate_split(env, behavior):
    one = sample_logged_data(env, behavior, 1, 0)
    with pytest.raises(DegenerateSplitError):
        subsample(constant_rule(0.5, env.dim, env.n_actions), one, behavior, seed=0, max_resplits=5)


def test_bootstrap_size(data):
    b = bootstrap(data, 0)
    assert b.n == data.n
    assert len(np.unique(b.context, axis=0)) < data.n


class OnPolicyMean(EstimatorCandidate):
    """Returns exactly the pseudo evaluation set's mean reward."""


def test_mse_is_zero_for_a_perfect_candidate(env, behavior, target, data, monkeypatch):
    import opesel.pasif as pasif
    captured = {}
    real_subsample = pasif.subsample

    def spy(*args, **kwargs):
        split = real_subsample(*args, **kwargs)
        captured["v"] = split.v_on
        return split

    monkeypatch.setattr(pasif, "subsample", spy)
    monkeypatch.setattr(pasif, "estimate_all", lambda c, *a, **k: np.full(len(c), captured["v"]))
    res = pasif_estimate_mses([EstimatorCandidate("SNIPS")], target, behavior, data, FAST)
    assert res.mse[0] == 0.0


def test_mse_estimates_and_strict_mode_agree(env, behavior, target, data):
    pool = make_candidate_set()[:4]
    shared = pasif_estimate_mses(pool, target, behavior, data, FAST)
    strict = pasif_estimate_mses(pool, target, behavior, data,
                                 PasifConfig(**{**FAST.__dict__, "strict_alg1": True}))
    assert np.all(shared.mse >= 0)
    assert np.allclose(shared.mse, strict.mse)
    assert estimate_mse_pasif(pool[1], target, behavior, data, FAST) == pytest.approx(shared.mse[1])


def test_config_validation():
    for bad in ({"k": 0.0}, {"max_steps": 0}, {"rate_band": (0.3, 0.2)}, {"seeds": ()}):
        with pytest.raises(ValueError):
            PasifConfig(**bad)
