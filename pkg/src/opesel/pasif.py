"""Policy-adaptive estimator selection via importance fitting (PAS-IF).

A subsampling rule ``rho(x, a)`` routes each logged record to a pseudo
evaluation set with probability ``rho`` and to a pseudo behavior set
otherwise. With ``E(x) = sum_a pi_b(a|x) rho(x, a)`` the two sets follow

    pi_e~(a|x) = pi_b(a|x) rho(x, a) / E(x)
    pi_b~(a|x) = pi_b(a|x) (1 - rho(x, a)) / (1 - E(x))

and ``rho`` is trained so that ``w~ = pi_e~ / pi_b~`` imitates the true ratio
``w = pi_e / pi_b`` while ``E(x)`` stays near a target rate ``k``. Candidate
MSEs are then the bootstrap average of the squared gap between each
candidate's estimate on the pseudo behavior set and the on-policy mean reward
of the pseudo evaluation set.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import nn
from .bandit import LoggedDataset, Policy, importance_ratio
from .errors import DegenerateRateError, DegenerateSplitError, TrainingError
from .estimators import EstimatorCandidate, estimate_all, fit_reward_models, required_regressors
from .seeding import SeedLike, as_rng, make_rng

log = logging.getLogger(__name__)

DEFAULT_REG_GRID = (0.1, 1.0, 10.0, 100.0, 1000.0)


@dataclass(frozen=True)
class PasifConfig:
    """Settings for rule training and bootstrap MSE estimation.

    Defaults follow the synthetic-experiment settings (k=0.2, lr=1e-3,
    T=5000, ten bootstrap seeds, regularization grid 1e-1..1e3, rate band
    [0.18, 0.22], hidden width 100).

    ``reuse_reg`` picks the regularization weight with the full grid on the
    first bootstrap seed only and reuses it for the remaining seeds.
    ``strict_alg1`` retrains the rule for every (candidate, seed) pair instead
    of sharing one rule per seed across candidates; results are identical.
    ``full_gradient`` adds the cross-action terms that the diagonal objective
    gradient leaves out.
    """

    k: float = 0.2
    learning_rate: float = 1e-3
    reg_grid: tuple[float, ...] = DEFAULT_REG_GRID
    max_steps: int = 5000
    seeds: tuple[int, ...] = tuple(range(10))
    rate_band: tuple[float, float] = (0.18, 0.22)
    hidden: int = 100
    full_gradient: bool = False
    strict_alg1: bool = False
    reuse_reg: bool = False
    n_folds: int = 3
    max_resplits: int = 5
    delta: float = 0.05

    def __post_init__(self) -> None:
        if not 0.0 < self.k < 1.0:
            raise ValueError("target partition rate k must lie in (0, 1)")
        if self.max_steps < 1:
            raise ValueError("max_steps must be at least 1")
        lo, hi = self.rate_band
        if not 0.0 < lo <= hi < 1.0:
            raise ValueError("rate band must be a sub-interval of (0, 1)")
        if not self.reg_grid or any(r < 0 for r in self.reg_grid):
            raise ValueError("regularization grid must be nonempty and nonnegative")
        if not self.seeds:
            raise ValueError("need at least one bootstrap seed")


@dataclass
class SubsamplingRule:
    """Trained (or freshly initialized) ``rho(x, a)`` with training diagnostics."""

    params: nn.MlpParams
    n_actions: int
    reg: float = float("nan")
    objective: float = float("nan")
    mean_rate: float = float("nan")
    history: np.ndarray | None = field(default=None, repr=False)

    @classmethod
    def initial(cls, dim: int, n_actions: int, hidden: int = 100, seed: SeedLike = 0):
        return cls(nn.init_params(dim + n_actions, hidden, seed), n_actions)

    def rho(self, context: np.ndarray, action: np.ndarray) -> np.ndarray:
        return nn.forward(self.params, nn.encode(context, action, self.n_actions))[0]

    def rho_grid(self, context: np.ndarray) -> np.ndarray:
        context = np.atleast_2d(context)
        flat = nn.forward(self.params, nn.encode_grid(context, self.n_actions))[0]
        return flat.reshape(context.shape[0], self.n_actions)


@dataclass(frozen=True)
class PseudoPolicyPair:
    evaluation: np.ndarray
    behavior: np.ndarray

    @property
    def ratio(self) -> np.ndarray:
        return self.evaluation / self.behavior


def pseudo_from_rho(rho: np.ndarray, pb: np.ndarray) -> PseudoPolicyPair:
    """Pseudo policies from ``rho`` and ``pi_b`` tables of shape ``(n, A)``."""
    expected = np.sum(pb * rho, axis=1, keepdims=True)
    if np.any(expected <= 0.0) or np.any(expected >= 1.0):
        raise DegenerateRateError("expected subsampling rate is 0 or 1 at some context")
    return PseudoPolicyPair(pb * rho / expected, pb * (1.0 - rho) / (1.0 - expected))


def pseudo_policies(rule: SubsamplingRule, pi_b: Policy, x: np.ndarray) -> PseudoPolicyPair:
    """Evaluate both pseudo policies at contexts ``x`` (one row per context)."""
    x = np.atleast_2d(x)
    return pseudo_from_rho(rule.rho_grid(x), pi_b.probs(x))


class PseudoEvaluationPolicy(Policy):
    kind = "pseudo-evaluation"

    def __init__(self, rule: SubsamplingRule, pi_b: Policy) -> None:
        self.rule, self.pi_b, self.n_actions = rule, pi_b, rule.n_actions

    def probs(self, context: np.ndarray) -> np.ndarray:
        return pseudo_policies(self.rule, self.pi_b, context).evaluation


class PseudoBehaviorPolicy(PseudoEvaluationPolicy):
    kind = "pseudo-behavior"

    def probs(self, context: np.ndarray) -> np.ndarray:
        return pseudo_policies(self.rule, self.pi_b, context).behavior


def pseudo_ratio_gradient(rho, expected, pb):
    """``d w~ / d rho(x, a)`` including the path through ``E(x)`` via ``pi_b(a|x)``.

    Equals ``(1/E - 1) / (1 - rho)^2 * (1 - pi_b rho (1 - rho) / (E (1 - E)))``.
    """
    direct = (1.0 - expected) / (expected * (1.0 - rho) ** 2)
    via_rate = -rho / ((1.0 - rho) * expected**2)
    return direct + via_rate * pb


class ImportanceFit:
    """Objective ``D + reg * R`` and its gradient for one dataset.

    Network evaluations run once per distinct context over all actions; the
    record-level terms index into that grid.
    """

    def __init__(self, pi_e: Policy, pi_b: Policy, data: LoggedDataset, k: float) -> None:
        uniq, inverse = np.unique(data.context, axis=0, return_inverse=True)
        self.n = data.n
        self.n_actions = data.n_actions
        self.k = k
        self.u = inverse.reshape(-1)
        self.a = data.action
        self.flat_index = self.u * self.n_actions + self.a
        self.n_contexts = uniq.shape[0]
        self.pb = pi_b.probs(uniq)
        self.pb_logged = self.pb[self.u, self.a]
        self.w = importance_ratio(pi_e, data)
        self.inputs = nn.encode_grid(uniq, self.n_actions)
        self.dim = data.context.shape[1]

    def terms(self, rho_grid: np.ndarray):
        expected = np.sum(self.pb * rho_grid, axis=1)
        rho_i = rho_grid[self.u, self.a]
        e_i = expected[self.u]
        w_tilde = rho_i / (1.0 - rho_i) * (1.0 - e_i) / e_i
        return rho_i, e_i, w_tilde

    def values(self, params: nn.MlpParams) -> tuple[float, float, float]:
        """``(D, R, mean rate)`` at ``params``."""
        rho, _ = nn.forward(params, self.inputs)
        _, e_i, w_tilde = self.terms(rho.reshape(self.n_contexts, self.n_actions))
        return (
            float(np.mean((self.w - w_tilde) ** 2)),
            float(np.mean((e_i - self.k) ** 2)),
            float(np.mean(e_i)),
        )

    def rho_upstream(self, rho_grid: np.ndarray, reg: float, full: bool) -> np.ndarray:
        """``d(D + reg R) / d rho`` on the context-by-action grid."""
        m, A = self.n_contexts, self.n_actions
        rho_i, e_i, w_tilde = self.terms(rho_grid)
        coef = 2.0 * (w_tilde - self.w) / self.n
        if full:
            direct = (1.0 - e_i) / (e_i * (1.0 - rho_i) ** 2)
            via_rate = -rho_i / ((1.0 - rho_i) * e_i**2)
            up = np.bincount(self.flat_index, weights=coef * direct, minlength=m * A).reshape(m, A)
            up += np.bincount(self.u, weights=coef * via_rate, minlength=m)[:, None] * self.pb
        else:
            g = pseudo_ratio_gradient(rho_i, e_i, self.pb_logged)
            up = np.bincount(self.flat_index, weights=coef * g, minlength=m * A).reshape(m, A)
        if reg:
            per_ctx = np.bincount(self.u, weights=2.0 * (e_i - self.k) / self.n, minlength=m)
            up += reg * per_ctx[:, None] * self.pb
        return up

    def loss_and_grad(self, params: nn.MlpParams, reg: float, full: bool = False):
        rho, cache = nn.forward(params, self.inputs)
        grid = rho.reshape(self.n_contexts, self.n_actions)
        rho_i, e_i, w_tilde = self.terms(grid)
        d = float(np.mean((self.w - w_tilde) ** 2))
        r = float(np.mean((e_i - self.k) ** 2))
        up = self.rho_upstream(grid, reg, full)
        grads = nn.backward(params, cache, up.reshape(-1))
        return d + reg * r, d, r, float(np.mean(e_i)), grads


def record_rho_gradient(rho: np.ndarray, pb: np.ndarray, action: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Per-record ``d (w_i - w~_i)^2 / d rho(x_i, a_i)``.

    ``rho`` and ``pb`` are ``(n, A)`` tables at each record's context; only the
    logged action's rate is differentiated, with ``E(x_i)`` moving along with it.
    """
    idx = np.arange(rho.shape[0])
    expected = np.sum(pb * rho, axis=1)
    rho_i = rho[idx, action]
    w_tilde = rho_i / (1.0 - rho_i) * (1.0 - expected) / expected
    return 2.0 * (w_tilde - w) * pseudo_ratio_gradient(rho_i, expected, pb[idx, action])


def objective_d(rule: SubsamplingRule, pi_e: Policy, pi_b: Policy, data: LoggedDataset) -> float:
    """Sample mean of ``(w - w~)^2`` over the records of ``data``."""
    return ImportanceFit(pi_e, pi_b, data, 0.5).values(rule.params)[0]


def objective_gradient(
    rule: SubsamplingRule, pi_e: Policy, pi_b: Policy, data: LoggedDataset, full: bool = False
) -> nn.MlpParams:
    """Gradient of the importance-fitting objective over the network parameters.

    By default each record only differentiates through its own logged
    ``rho(x_i, a_i)`` (see :func:`record_rho_gradient`); ``full`` also follows
    ``E(x_i)`` into the other actions' rates, giving the exact gradient of
    :func:`objective_d`.
    """
    fit = ImportanceFit(pi_e, pi_b, data, 0.5)
    return fit.loss_and_grad(rule.params, reg=0.0, full=full)[-1]


def regularizer_r(rule: SubsamplingRule, pi_b: Policy, data: LoggedDataset, k: float) -> float:
    """Mean over logged contexts of ``(E(x) - k)^2``."""
    return ImportanceFit(pi_b, pi_b, data, k).values(rule.params)[1]


def regularizer_gradient(
    rule: SubsamplingRule, pi_b: Policy, data: LoggedDataset, k: float
) -> nn.MlpParams:
    """Exact gradient of :func:`regularizer_r` over the network parameters."""
    fit = ImportanceFit(pi_b, pi_b, data, k)
    rho, cache = nn.forward(rule.params, fit.inputs)
    _, e_i, _ = fit.terms(rho.reshape(fit.n_contexts, fit.n_actions))
    per_ctx = np.bincount(fit.u, weights=2.0 * (e_i - k) / fit.n, minlength=fit.n_contexts)
    up = per_ctx[:, None] * fit.pb
    return nn.backward(rule.params, cache, up.reshape(-1))


def _train_one(fit: ImportanceFit, reg: float, config: PasifConfig, seed: SeedLike):
    params = nn.init_params(fit.dim + fit.n_actions, config.hidden, seed)
    state = nn.adam_init(params, config.learning_rate)
    history = np.empty(config.max_steps)
    for t in range(config.max_steps):
        loss, _, _, _, grads = fit.loss_and_grad(params, reg, config.full_gradient)
        if not np.isfinite(loss):
            raise TrainingError(f"non-finite loss at step {t} (reg={reg:g})")
        history[t] = loss
        params, state = nn.adam_step(params, state, grads)
    d, r, rate = fit.values(params)
    if not np.isfinite(d + reg * r):
        raise TrainingError(f"non-finite final loss (reg={reg:g})")
    return SubsamplingRule(params, fit.n_actions, reg, d, rate, history)


def train_subsampler(
    pi_e: Policy,
    pi_b: Policy,
    data: LoggedDataset,
    config: PasifConfig = PasifConfig(),
    seed: SeedLike = 0,
    reg_grid: Sequence[float] | None = None,
) -> SubsamplingRule:
    """Train one rule per regularization weight and keep the best.

    Among runs whose final mean rate lies in ``config.rate_band`` the one with
    the smallest importance-fitting objective wins; if no run lands in the
    band, the run whose mean rate is closest to ``k`` is returned.
    """
    if data.n == 0:
        raise ValueError("cannot train a subsampling rule on an empty dataset")
    fit = ImportanceFit(pi_e, pi_b, data, config.k)
    if isinstance(seed, np.random.Generator):
        seed = int(seed.integers(2**63 - 1))
    rules = []
    for reg in config.reg_grid if reg_grid is None else reg_grid:
        # Same initialization for every weight, so runs differ only by the penalty.
        try:
            rules.append(_train_one(fit, reg, config, make_rng("pasif-init", seed)))
        except TrainingError as exc:
            log.warning("subsampler training diverged: %s", exc)
    if not rules:
        raise TrainingError("every regularization weight diverged")
    lo, hi = config.rate_band
    in_band = [r for r in rules if lo <= r.mean_rate <= hi]
    if in_band:
        return min(in_band, key=lambda r: r.objective)
    return min(rules, key=lambda r: abs(r.mean_rate - config.k))


@dataclass(frozen=True)
class PseudoSplit:
    eval_data: LoggedDataset
    behavior_data: LoggedDataset
    pi_e: Policy
    pi_b: Policy
    to_eval: np.ndarray

    @property
    def v_on(self) -> float:
        return float(self.eval_data.reward.mean())


def subsample(
    rule: SubsamplingRule,
    data: LoggedDataset,
    pi_b: Policy,
    seed: SeedLike = 0,
    max_resplits: int = 5,
) -> PseudoSplit:
    """Route record ``i`` to the pseudo evaluation set with probability ``rho(x_i, a_i)``.

    The pseudo behavior set is relabeled with ``pi_b~(a_i|x_i)`` propensities.
    An empty side triggers up to ``max_resplits`` redraws from a derived seed.
    """
    rng = as_rng(seed)
    rho_grid = rule.rho_grid(data.context)
    pair = pseudo_from_rho(rho_grid, pi_b.probs(data.context))
    idx = np.arange(data.n)
    rho = rho_grid[idx, data.action]
    for attempt in range(max_resplits + 1):
        if attempt:
            rng = make_rng("resplit", int(rng.integers(2**63 - 1)), attempt)
        to_eval = rng.random(data.n) < rho
        if 0 < to_eval.sum() < data.n:
            break
    else:
        raise DegenerateSplitError(f"one partition stayed empty after {max_resplits} redraws")
    eval_data = data.take(to_eval).with_pscore(pair.evaluation[idx, data.action][to_eval])
    behavior_data = data.take(~to_eval).with_pscore(pair.behavior[idx, data.action][~to_eval])
    return PseudoSplit(
        eval_data, behavior_data,
        PseudoEvaluationPolicy(rule, pi_b), PseudoBehaviorPolicy(rule, pi_b), to_eval,
    )


@dataclass
class PasifResult:
    mse: np.ndarray
    squared_gaps: np.ndarray
    rules: list[SubsamplingRule]

    @property
    def selected(self) -> int:
        return int(np.argmin(self.mse))


def bootstrap(data: LoggedDataset, seed: SeedLike) -> LoggedDataset:
    return data.take(as_rng(seed).integers(0, data.n, size=data.n))


def _seed_gaps(candidates, pi_e, pi_b, data, config, s, reg_grid):
    boot = bootstrap(data, make_rng("pasif-bootstrap", s))
    rule = train_subsampler(pi_e, pi_b, boot, config, seed=s, reg_grid=reg_grid)
    split = subsample(rule, boot, pi_b, make_rng("pasif-subsample", s), config.max_resplits)
    models = fit_reward_models(
        split.behavior_data, required_regressors(candidates), config.n_folds,
        make_rng("pasif-crossfit", s),
    )
    estimates = estimate_all(candidates, split.pi_e, split.behavior_data, models, config.delta)
    return (estimates - split.v_on) ** 2, rule


def pasif_estimate_mses(
    candidates: Sequence[EstimatorCandidate],
    pi_e: Policy,
    pi_b: Policy,
    data: LoggedDataset,
    config: PasifConfig = PasifConfig(),
) -> PasifResult:
    """Bootstrap MSE estimate of every candidate for evaluation policy ``pi_e``."""
    candidates = list(candidates)
    gaps = np.empty((len(config.seeds), len(candidates)))
    rules: list[SubsamplingRule] = []
    reg_grid = None
    for row, s in enumerate(config.seeds):
        if config.strict_alg1:
            rule = None
            for m, cand in enumerate(candidates):
                z, rule = _seed_gaps([cand], pi_e, pi_b, data, config, s, reg_grid)
                gaps[row, m] = z[0]
        else:
            gaps[row], rule = _seed_gaps(candidates, pi_e, pi_b, data, config, s, reg_grid)
        rules.append(rule)
        if config.reuse_reg and reg_grid is None:
            reg_grid = (rule.reg,)
    return PasifResult(gaps.mean(axis=0), gaps, rules)


def estimate_mse_pasif(
    candidate: EstimatorCandidate,
    pi_e: Policy,
    pi_b: Policy,
    data: LoggedDataset,
    config: PasifConfig = PasifConfig(),
) -> float:
    return float(pasif_estimate_mses([candidate], pi_e, pi_b, data, config).mse[0])
