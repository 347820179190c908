import numpy as np
import pytest

from opesel.bandit import MixturePolicy, sample_logged_data, softmax_policy
from opesel.baseline import (
    HeuristicConfig, estimate_mse_nonadaptive, held_out_component, heuristic_estimate_mses,
    split_by_component,
)
from opesel.errors import NotApplicableError
from opesel.estimators import EstimatorCandidate, make_candidate_set

FAST = HeuristicConfig(seeds=(0, 1, 2))


def test_split_is_a_partition(data):
    on, rest = split_by_component(data, 1)
    assert on.n + rest.n == data.n
    assert np.all(on.policy_index == 1) and np.all(rest.policy_index != 1)


def test_modes():
    fixed = HeuristicConfig(mode="fixed", fixed_index=1, seeds=tuple(range(20)))
    assert {held_out_component(fixed, s, 2) for s in fixed.seeds} == {1}
    rand = HeuristicConfig(seeds=tuple(range(20)))
    assert {held_out_component(rand, s, 2) for s in rand.seeds} == {0, 1}
    with pytest.raises(ValueError):
        HeuristicConfig(mode="sometimes")


def test_needs_two_policies(env, data):
    single = MixturePolicy([softmax_policy(env, 1.0)], [1.0])
    one = sample_logged_data(env, single, 50, 0)
    with pytest.raises(NotApplicableError):
        heuristic_estimate_mses(make_candidate_set()[:2], one, single, FAST)


def test_mses_are_nonnegative_and_consistent(behavior, data):
    pool = make_candidate_set()[:5]
    res = heuristic_estimate_mses(pool, data, behavior, FAST)
    assert res.mse.shape == (5,) and np.all(res.mse >= 0)
    assert res.squared_gaps.shape == (3, 5)
    assert estimate_mse_nonadaptive(pool[3], data, behavior, FAST) == pytest.approx(res.mse[3])


def test_on_policy_target_gives_zero(behavior, data, monkeypatch):
    import opesel.baseline as baseline

    def perfect(candidates, target, boot, models, delta):
        on = data.policy_index == held[0]
        return np.full(len(candidates), data.reward[on].mean())

    held = [0]
    cfg = HeuristicConfig(mode="fixed", fixed_index=0, seeds=(0, 1))
    monkeypatch.setattr(baseline, "estimate_all", perfect)
    res = heuristic_estimate_mses([EstimatorCandidate("SNIPS")], data, behavior, cfg)
    assert res.mse[0] == 0.0


def test_renormalized_propensities(env, behavior, data, monkeypatch):
    import opesel.baseline as baseline
    seen = {}

    def spy(candidates, target, boot, models, delta):
        seen["boot"] = boot
        return np.zeros(len(candidates))

    monkeypatch.setattr(baseline, "estimate_all", spy)
    heuristic_estimate_mses([EstimatorCandidate("SNIPS")], data, behavior,
                            HeuristicConfig(mode="fixed", fixed_index=0, seeds=(0,)))
    boot = seen["boot"]
    assert np.all(boot.policy_index == 1)
    assert np.allclose(boot.pscore, behavior.components[1].prob_of(boot.context, boot.action))
