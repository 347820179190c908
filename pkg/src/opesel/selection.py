"""Estimator selection, ground-truth oracles, policy selection and split-sample OPE."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import minimize
from scipy.special import log_softmax, softmax as _softmax

from .bandit import (
    LoggedDataset, Policy, SoftmaxPolicy, SyntheticEnvironment, sample_logged_data,
    true_policy_value,
)
from .estimators import EstimatorCandidate, estimate_all, fit_reward_models, required_regressors
from .pasif import PasifConfig, pasif_estimate_mses
from .regressors import BoostedTrees, make_regressor
from .seeding import SeedLike, as_rng, make_rng

OPS_TEMPERATURES = (1.0, 2.0, 10.0, 20.0, 100.0)
OPS_LEARNERS = ("qlearner", "ipwlearner")
OPS_BASES = ("logistic", "gbm")

MseFn = Callable[[Policy], np.ndarray]


def select_estimator(estimated_mse) -> int:
    """Index of the smallest estimated MSE; ties go to the lowest index."""
    mse = np.asarray(estimated_mse, dtype=float)
    if mse.size == 0:
        raise ValueError("no candidates to select from")
    return int(np.argmin(mse))


@dataclass(frozen=True)
class OracleTable:
    """True values and per-candidate true MSEs for a list of evaluation policies."""

    values: np.ndarray  # (n_policies,)
    mse: np.ndarray  # (n_policies, n_candidates)
    estimates: np.ndarray  # (n_policies, n_reps, n_candidates)


def ground_truth_mses(
    candidates: Sequence[EstimatorCandidate],
    policies: Sequence[Policy],
    env: SyntheticEnvironment,
    behavior: Policy,
    n: int,
    n_reps: int = 50,
    n_mc: int = 100_000,
    seed: SeedLike = 0,
    n_folds: int = 3,
) -> OracleTable:
    """Monte-Carlo true values and candidate MSEs over fresh logged datasets.

    Every policy shares the same ``n_reps`` test datasets and their reward
    models, so columns are comparable across policies.
    """
    if n_reps < 1 or n_mc < 1 or n < 1:
        raise ValueError("n, n_reps and n_mc must be positive")
    candidates, policies = list(candidates), list(policies)
    base = int(as_rng(seed).integers(2**63 - 1)) if isinstance(seed, np.random.Generator) else seed
    values = np.array([true_policy_value(env, pi, n_mc, make_rng("oracle-value", base)) for pi in policies])
    kinds = required_regressors(candidates)
    est = np.empty((len(policies), n_reps, len(candidates)))
    for r in range(n_reps):
        data = sample_logged_data(env, behavior, n, make_rng("oracle-data", base, r))
        models = fit_reward_models(data, kinds, n_folds, make_rng("oracle-crossfit", base, r))
        for p, pi in enumerate(policies):
            est[p, r] = estimate_all(candidates, pi, data, models)
    mse = np.mean((est - values[:, None, None]) ** 2, axis=1)
    return OracleTable(values, mse, est)


def ground_truth_mse(
    candidate: EstimatorCandidate,
    pi_e: Policy,
    env: SyntheticEnvironment,
    behavior: Policy,
    n: int,
    n_reps: int = 50,
    n_mc: int = 100_000,
    seed: SeedLike = 0,
) -> float:
    return float(ground_truth_mses([candidate], [pi_e], env, behavior, n, n_reps, n_mc, seed).mse[0, 0])


# ---------------------------------------------------------------- OPS candidates


class _Memo:
    """Remember the score matrix of the most recent context array."""

    def __init__(self, fn: Callable[[np.ndarray], np.ndarray]) -> None:
        self.fn = fn
        self._key: np.ndarray | None = None
        self._value: np.ndarray | None = None

    def __call__(self, context: np.ndarray) -> np.ndarray:
        if self._key is None or self._key.shape != context.shape or not np.array_equal(self._key, context):
            self._key = np.array(context, copy=True)
            self._value = self.fn(context)
        return self._value


def _fit_weighted_multinomial(X: np.ndarray, y: np.ndarray, weight: np.ndarray, n_classes: int,
                              l2: float = 1e-3, max_iter: int = 300) -> np.ndarray:
    """Weighted multinomial logistic regression; returns a ``(d + 1, n_classes)`` coefficient matrix."""
    Xb = np.hstack([X, np.ones((X.shape[0], 1))])
    weight = weight / max(weight.mean(), 1e-12)
    onehot = np.zeros((X.shape[0], n_classes))
    onehot[np.arange(X.shape[0]), y] = 1.0
    shape = (Xb.shape[1], n_classes)

    def loss(flat):
        W = flat.reshape(shape)
        logits = Xb @ W
        lp = log_softmax(logits, axis=1)
        nll = -np.mean(weight * lp[np.arange(len(y)), y])
        grad = Xb.T @ (weight[:, None] * (_softmax(logits, axis=1) - onehot)) / len(y)
        return nll + 0.5 * l2 * flat @ flat, grad.ravel() + l2 * flat

    res = minimize(loss, np.zeros(np.prod(shape)), jac=True, method="L-BFGS-B",
                   options={"maxiter": max_iter})
    return res.x.reshape(shape)


def _q_scores(data: LoggedDataset, base: str) -> Callable[[np.ndarray], np.ndarray]:
    model = make_regressor(base).fit(data.context, data.action, data.reward, data.n_actions, data.r_max)
    return model.predict


def _ipw_scores(data: LoggedDataset, base: str) -> Callable[[np.ndarray], np.ndarray]:
    target = data.reward / data.pscore
    if base == "logistic":
        if not np.any(target > 0):
            return lambda x: np.zeros((np.atleast_2d(x).shape[0], data.n_actions))
        W = _fit_weighted_multinomial(data.context, data.action, target, data.n_actions)
        return lambda x: np.hstack([x, np.ones((x.shape[0], 1))]) @ W
    boosters = []
    for a in range(data.n_actions):
        y = np.where(data.action == a, target, 0.0)
        boosters.append(BoostedTrees().fit(data.context, y))
    return lambda x: np.column_stack([b.predict(x) for b in boosters])


def build_ops_candidates(
    env: SyntheticEnvironment, data: LoggedDataset, seed: SeedLike = 0,
    temperatures: Sequence[float] = OPS_TEMPERATURES,
) -> list[SoftmaxPolicy]:
    """Learned candidate policies: 2 learners x 2 base models x temperatures.

    ``qlearner`` scores actions by a reward regressor; ``ipwlearner`` by the
    logits of a classifier of the logged action weighted with
    ``r_i / pi_b(a_i|x_i)`` (logistic base) or per-action boosted regressions
    on ``1{a_i = a} r_i / pi_b(a_i|x_i)`` (gbm base). Each score function
    becomes a policy via ``softmax(beta * score)``.
    """
    if data.n == 0:
        raise ValueError("cannot learn policies from an empty dataset")
    del seed  # learners are deterministic given the training data
    out = []
    for learner in OPS_LEARNERS:
        for base in OPS_BASES:
            fn = _q_scores(data, base) if learner == "qlearner" else _ipw_scores(data, base)
            scores = _Memo(fn)
            for beta in temperatures:
                out.append(SoftmaxPolicy(scores, beta, env.n_actions, kind=learner,
                                         name=f"{learner}-{base}(beta={beta:g})"))
    return out


# ---------------------------------------------------------------- OPS


@dataclass(frozen=True)
class OpsResult:
    estimated_values: np.ndarray
    selected_estimators: np.ndarray
    chosen: int


def ops_select(
    policies: Sequence[Policy],
    mse_fn: MseFn,
    candidates: Sequence[EstimatorCandidate],
    data: LoggedDataset,
    seed: SeedLike = 0,
    n_folds: int = 3,
) -> OpsResult:
    """Pick, per candidate policy, the estimator with the lowest estimated MSE and rank by its estimate."""
    if len(policies) < 2:
        raise ValueError("policy selection needs at least two candidate policies")
    candidates = list(candidates)
    models = fit_reward_models(data, required_regressors(candidates), n_folds, seed)
    values = np.empty(len(policies))
    chosen_m = np.empty(len(policies), dtype=np.int64)
    for p, pi in enumerate(policies):
        m = select_estimator(mse_fn(pi))
        chosen_m[p] = m
        values[p] = candidates[m].estimate(pi, data, models)
    return OpsResult(values, chosen_m, int(np.argmax(values)))


# ---------------------------------------------------------------- split-sample OPE


def split_halves(data: LoggedDataset, seed: int) -> tuple[LoggedDataset, LoggedDataset]:
    """Uniform random 50/50 partition into (pre, post) halves."""
    perm = make_rng("e2e-split", seed).permutation(data.n)
    return data.take(np.sort(perm[: data.n // 2])), data.take(np.sort(perm[data.n // 2:]))


def end_to_end_ope(
    candidates: Sequence[EstimatorCandidate],
    pi_e: Policy,
    pi_b: Policy,
    data: LoggedDataset,
    outer_seeds: Sequence[int] = tuple(range(10)),
    config: PasifConfig = PasifConfig(),
) -> float:
    """Select on one random half, estimate on the other half, and average over ``outer_seeds``.

    The PAS-IF bootstrap seeds inside each selection come from ``config.seeds``.
    """
    candidates = list(candidates)
    if data.n < 4:
        raise ValueError("dataset too small to split")
    out = []
    for s in outer_seeds:
        pre, post = split_halves(data, s)
        m = select_estimator(pasif_estimate_mses(candidates, pi_e, pi_b, pre, config).mse)
        models = fit_reward_models(post, required_regressors([candidates[m]]), config.n_folds,
                                   make_rng("e2e-crossfit", s))
        out.append(candidates[m].estimate(pi_e, post, models, config.delta))
    return float(np.mean(out))
