"""Non-adaptive MSE estimation that reuses a logging policy as the evaluation target.

When the logged data come from a mixture of ``l >= 2`` data-collection
policies, records of one component ``j`` form an on-policy sample of
``pi_j``. The remaining records, relabeled with the renormalized mixture of
the other components, play the logged data. Each candidate estimates
``V(pi_j)`` from a bootstrap of the remaining records, and the squared gap to
the mean reward of component ``j`` is averaged over seeds. The target
``pi_j`` is fixed by the data and does not depend on the evaluation policy of
interest, which is what makes the procedure non-adaptive.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .bandit import LoggedDataset, MixturePolicy
from .errors import NotApplicableError
from .estimators import EstimatorCandidate, estimate_all, fit_reward_models, required_regressors
from .seeding import make_rng
from .slope import DEFAULT_DELTA

HEURISTIC_MODES = ("random", "fixed")


@dataclass(frozen=True)
class HeuristicConfig:
    """``mode="random"`` draws the held-out component per seed; ``"fixed"`` always uses ``fixed_index``."""

    mode: str = "random"
    fixed_index: int = 0
    seeds: tuple[int, ...] = tuple(range(10))
    n_folds: int = 3
    delta: float = DEFAULT_DELTA

    def __post_init__(self) -> None:
        if self.mode not in HEURISTIC_MODES:
            raise ValueError(f"mode must be one of {HEURISTIC_MODES}, got {self.mode!r}")
        if self.fixed_index < 0:
            raise ValueError("fixed_index must be nonnegative")
        if not self.seeds:
            raise ValueError("need at least one bootstrap seed")


@dataclass
class HeuristicResult:
    mse: np.ndarray
    squared_gaps: np.ndarray
    held_out: np.ndarray

    @property
    def selected(self) -> int:
        return int(np.argmin(self.mse))


def held_out_component(config: HeuristicConfig, seed: int, n_components: int) -> int:
    if config.mode == "fixed":
        if config.fixed_index >= n_components:
            raise IndexError(f"fixed_index {config.fixed_index} out of range for {n_components} policies")
        return config.fixed_index
    return int(make_rng("heuristic-component", seed).integers(n_components))


def split_by_component(data: LoggedDataset, j: int) -> tuple[LoggedDataset, LoggedDataset]:
    """``(records logged by policy j, all other records)``."""
    mask = data.policy_index == j
    return data.take(mask), data.take(~mask)


def heuristic_estimate_mses(
    candidates: Sequence[EstimatorCandidate],
    data: LoggedDataset,
    behavior: MixturePolicy,
    config: HeuristicConfig = HeuristicConfig(),
) -> HeuristicResult:
    """Bootstrap MSE estimate of every candidate with a held-out logging policy as target."""
    candidates = list(candidates)
    l = len(behavior.components)
    if l < 2:
        raise NotApplicableError("the heuristic needs at least two data-collection policies")
    gaps = np.empty((len(config.seeds), len(candidates)))
    held = np.empty(len(config.seeds), dtype=np.int64)
    kinds = required_regressors(candidates)
    for row, s in enumerate(config.seeds):
        j = held_out_component(config, s, l)
        on_policy, rest = split_by_component(data, j)
        if on_policy.n == 0 or rest.n < 2:
            raise NotApplicableError(f"policy {j} or its complement has no logged records")
        boot = rest.take(make_rng("heuristic-bootstrap", s).integers(0, rest.n, size=rest.n))
        boot = boot.with_pscore(behavior.without(j).prob_of(boot.context, boot.action))
        models = fit_reward_models(boot, kinds, config.n_folds, make_rng("heuristic-crossfit", s))
        target = behavior.components[j]
        estimates = estimate_all(candidates, target, boot, models, config.delta)
        gaps[row] = (estimates - on_policy.reward.mean()) ** 2
        held[row] = j
    return HeuristicResult(gaps.mean(axis=0), gaps, held)


def estimate_mse_nonadaptive(
    candidate: EstimatorCandidate,
    data: LoggedDataset,
    behavior: MixturePolicy,
    config: HeuristicConfig = HeuristicConfig(),
) -> float:
    return float(heuristic_estimate_mses([candidate], data, behavior, config).mse[0])
