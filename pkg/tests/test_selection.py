import numpy as np
import pytest

from opesel.bandit import sample_logged_data, softmax_policy, true_policy_value
from opesel.estimators import EstimatorCandidate, make_candidate_set
from opesel.pasif import PasifConfig
from opesel.selection import (
    build_ops_candidates, end_to_end_ope, ground_truth_mses, ops_select, split_halves,
)

FAST = PasifConfig(learning_rate=0.01, max_steps=40, hidden=8, reg_grid=(10.0,), seeds=(0,))


def test_oracle_shapes_and_nonnegativity(env, behavior):
    pool = make_candidate_set()[:3]
    pols = [softmax_policy(env, 0.0), softmax_policy(env, 5.0)]
    table = ground_truth_mses(pool, pols, env, behavior, 200, n_reps=3, n_mc=5000, seed=0)
    assert table.mse.shape == (2, 3) and table.estimates.shape == (2, 3, 3)
    assert np.all(table.mse >= 0)
    from opesel.seeding import make_rng
    assert table.values[1] == true_policy_value(env, pols[1], 5000, make_rng("oracle-value", 0))


def test_oracle_of_a_perfect_estimator_is_near_zero(env, behavior, monkeypatch):
    import opesel.selection as selection
    pi = softmax_policy(env, 1.0)
    v = selection.true_policy_value(env, pi, 20_000, selection.make_rng("oracle-value", 0))
    monkeypatch.setattr(selection, "estimate_all", lambda c, *a, **k: np.full(len(c), v))
    table = ground_truth_mses([EstimatorCandidate("SNIPS")], [pi], env, behavior, 100, 2, 20_000, 0)
    assert table.mse[0, 0] == pytest.approx(0.0, abs=1e-20)


def test_ips_true_mse_grows_away_from_behavior():
    from opesel.bandit import SyntheticEnvironment, behavior_mixture
    ips = [EstimatorCandidate("IPSps", grid=(np.inf,))]
    grows = []
    for s in range(5):
        env = SyntheticEnvironment(seed=s, dim=5, n_actions=10)
        beh = behavior_mixture(env, [-2, 2])
        pols = [softmax_policy(env, b) for b in (0.0, 5.0, 10.0)]
        mse = ground_truth_mses(ips, pols, env, beh, 500, 30, 20_000, seed=s).mse[:, 0]
        grows.append(mse)
    mean = np.mean(grows, axis=0)
    assert mean[0] < mean[1] < mean[2]


@pytest.fixture(scope="module")
def ops_pool(env, behavior):
    train = sample_logged_data(env, behavior, 600, 1)
    return build_ops_candidates(env, train)


def test_twenty_full_support_candidates(ops_pool, data):
    assert len(ops_pool) == 20
    assert len({p.name for p in ops_pool}) == 20
    for p in ops_pool:
        probs = p.probs(data.context)
        assert np.all(probs > 0) and np.allclose(probs.sum(axis=1), 1)


def test_sharper_qlearner_is_better_on_average():
    from opesel.bandit import SyntheticEnvironment, behavior_mixture
    gaps = []
    for s in range(5):
        env = SyntheticEnvironment(seed=s, dim=5, n_actions=5)
        beh = behavior_mixture(env, [-2, 2])
        pool = build_ops_candidates(env, sample_logged_data(env, beh, 1000, s))
        q_lo, q_hi = pool[0], pool[4]  # qlearner-logistic at beta 1 and 100
        gaps.append(true_policy_value(env, q_hi, 20_000, 0) - true_policy_value(env, q_lo, 20_000, 0))
    assert np.mean(gaps) >= 0


def test_ops_picks_the_dominant_policy(env, behavior, data):
    good, bad = softmax_policy(env, 20.0), softmax_policy(env, -20.0)
    res = ops_select([bad, good], lambda pi: np.arange(3.0), make_candidate_set()[:3], data)
    assert res.chosen == 1
    assert np.all(res.selected_estimators == 0)


def test_single_estimator_ops_is_plain_ranking(ops_pool, data, env):
    cand = EstimatorCandidate("SNIPS")
    res = ops_select(ops_pool, lambda pi: np.zeros(1), [cand], data)
    direct = np.array([cand.estimate(p, data) for p in ops_pool])
    assert np.allclose(res.estimated_values, direct)
    assert res.chosen == int(np.argmax(direct))


def test_halves_partition(data):
    pre, post = split_halves(data, 3)
    assert pre.n == data.n // 2 and pre.n + post.n == data.n
    rows = {tuple(x) for x in data.context}
    a, b = {tuple(x) for x in pre.context}, {tuple(x) for x in post.context}
    assert a | b == rows and not a & b


def test_end_to_end_on_policy(env, behavior):
    data = sample_logged_data(env, behavior, 400, 8)
    pool = [EstimatorCandidate("SNIPS"), EstimatorCandidate("IPSps", grid=(np.inf, 100.0))]
    v = end_to_end_ope(pool, behavior, behavior, data, (0, 1), FAST)
    se = data.reward.std() / np.sqrt(data.n / 2)
    assert abs(v - data.reward.mean()) < 3 * se
    assert v == end_to_end_ope(pool, behavior, behavior, data, (0, 1), FAST)
