"""Off-policy estimators, weight transforms and cross-fitted reward models."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .bandit import LoggedDataset, Policy, action_dist, importance_ratio
from .regressors import REGRESSOR_KINDS, RewardRegressor, make_regressor
from .seeding import SeedLike, as_rng
from .slope import DEFAULT_DELTA, TuningProblem, cnf_width, slope_select

TRANSFORM_KINDS = (
    "identity", "clip", "self-normalize", "switch", "optimistic-shrinkage", "lambda-subgaussian",
)

# Ordered so index 0 is the least biased candidate.
CLIP_GRID = (np.inf, 1e5, 5e4, 1e4, 5e3, 1e3, 500.0, 100.0)
LAMBDA_GRID = tuple(round(0.1 * i, 1) for i in range(1, 11))

FAMILIES: dict[str, tuple[str | None, bool]] = {
    # family: (weight transform, uses reward model in the residual form)
    "DM": (None, True),
    "IPSps": ("clip", False),
    "DRps": ("clip", True),
    "SNIPS": ("self-normalize", False),
    "SNDR": ("self-normalize", True),
    "Switch": ("switch", True),
    "DRos": ("optimistic-shrinkage", True),
    "IPS-lambda": ("lambda-subgaussian", False),
    "DR-lambda": ("lambda-subgaussian", True),
}


@dataclass(frozen=True)
class WeightTransform:
    """Map raw importance ratios to the weights a given estimator uses."""

    kind: str = "identity"
    lam: float = np.inf
    s: float = -1.0

    def __post_init__(self) -> None:
        if self.kind not in TRANSFORM_KINDS:
            raise ValueError(f"unknown transform {self.kind!r}")
        if self.lam < 0 or np.isnan(self.lam):
            raise ValueError("transform hyperparameter must be nonnegative")
        if self.kind == "lambda-subgaussian" and not 0.0 <= self.lam <= 1.0:
            raise ValueError("lambda-subgaussian needs lam in [0, 1]")
        if self.s > 1:
            raise ValueError("lambda-subgaussian exponent must be <= 1")

    def __call__(self, w: np.ndarray) -> np.ndarray:
        w = np.asarray(w, dtype=float)
        lam = self.lam
        if self.kind == "identity":
            return w
        if self.kind == "clip":
            return np.minimum(w, lam)
        if self.kind == "self-normalize":
            mean = w.mean()
            if mean <= 0:
                raise ZeroDivisionError("all importance ratios are zero; cannot self-normalize")
            return w / mean
        if self.kind == "switch":
            return w * (w <= lam)
        if self.kind == "optimistic-shrinkage":
            if np.isinf(lam):
                return w
            return lam * w / (w**2 + lam)
        # lambda-subgaussian: ((1 - lam) w^s + lam)^(1/s)
        if lam == 1.0:
            return np.ones_like(w)
        if self.s == -1.0:
            return w / ((1.0 - lam) + lam * w)
        if self.s == 0.0:
            return w ** (1.0 - lam)
        with np.errstate(divide="ignore"):
            return ((1.0 - lam) * w**self.s + lam) ** (1.0 / self.s)


@dataclass(frozen=True)
class CrossFitModels:
    """K out-of-fold reward models for one dataset and one regressor kind.

    ``q_hat[i]`` holds predictions for record ``i`` from the model that did not
    see record ``i``'s fold.
    """

    kind: str
    folds: np.ndarray
    models: tuple[RewardRegressor, ...]
    q_hat: np.ndarray = field(repr=False)


def fold_assignment(n: int, k: int, seed: SeedLike) -> np.ndarray:
    """Random partition of ``range(n)`` into ``k`` folds with sizes differing by at most one."""
    if k < 2:
        raise ValueError("cross-fitting needs at least two folds")
    if n < k:
        raise ValueError(f"cannot split {n} records into {k} folds")
    perm = as_rng(seed).permutation(n)
    folds = np.empty(n, dtype=np.int64)
    for kappa, chunk in enumerate(np.array_split(perm, k)):
        folds[chunk] = kappa
    return folds


def cross_fit_reward_model(
    data: LoggedDataset, kind: str, k: int = 3, seed: SeedLike = 0, **params
) -> CrossFitModels:
    """Fit ``k`` reward models, model ``kappa`` on every fold except ``kappa``."""
    folds = fold_assignment(data.n, k, seed)
    q_hat = np.empty((data.n, data.n_actions))
    models = []
    for kappa in range(k):
        train = folds != kappa
        model = make_regressor(kind, **params).fit(
            data.context[train], data.action[train], data.reward[train],
            data.n_actions, data.r_max,
        )
        models.append(model)
        test = ~train
        q_hat[test] = model.predict(data.context[test])
    q_hat.setflags(write=False)
    return CrossFitModels(kind, folds, tuple(models), q_hat)


def fit_reward_models(
    data: LoggedDataset, kinds: Sequence[str], k: int = 3, seed: SeedLike = 0
) -> dict[str, CrossFitModels]:
    rng = as_rng(seed)
    fold_seed = int(rng.integers(2**63 - 1))
    # One shared partition so every kind sees the same folds.
    return {kind: cross_fit_reward_model(data, kind, k, fold_seed) for kind in kinds}


def _q_matrix(models, data: LoggedDataset) -> np.ndarray:
    q = models.q_hat if isinstance(models, CrossFitModels) else np.asarray(models, dtype=float)
    if q.ndim == 0:
        q = np.full((data.n, data.n_actions), float(q))
    if q.shape != (data.n, data.n_actions):
        raise ValueError(f"reward predictions must have shape ({data.n}, {data.n_actions})")
    return q


def dm_contributions(dist: np.ndarray, q_hat: np.ndarray) -> np.ndarray:
    return np.einsum("na,na->n", dist, q_hat)


def ips_contributions(weights: np.ndarray, data: LoggedDataset) -> np.ndarray:
    return weights * data.reward


def dr_contributions(
    weights: np.ndarray, data: LoggedDataset, dist: np.ndarray, q_hat: np.ndarray
) -> np.ndarray:
    q_logged = q_hat[np.arange(data.n), data.action]
    return weights * (data.reward - q_logged) + dm_contributions(dist, q_hat)


def estimate_dm(pi_e: Policy | np.ndarray, data: LoggedDataset, models) -> float:
    """Direct method: average of ``sum_a pi_e(a|x_i) q_hat(x_i, a)``."""
    return float(dm_contributions(action_dist(pi_e, data), _q_matrix(models, data)).mean())


def estimate_ips(
    pi_e: Policy | np.ndarray, data: LoggedDataset, transform: WeightTransform = WeightTransform()
) -> float:
    """Importance-weighted mean reward under ``transform``.

    Covers IPS, IPSps (clip), SNIPS (self-normalize) and IPS-lambda.
    """
    w = transform(importance_ratio(pi_e, data))
    return float(ips_contributions(w, data).mean())


def estimate_dr(
    pi_e: Policy | np.ndarray,
    data: LoggedDataset,
    models,
    transform: WeightTransform = WeightTransform(),
) -> float:
    """Doubly robust estimate with transformed weights on the residual term.

    Covers DR, DRps, SNDR, Switch, DRos and DR-lambda.
    """
    dist = action_dist(pi_e, data)
    w = transform(importance_ratio(dist, data))
    return float(dr_contributions(w, data, dist, _q_matrix(models, data)).mean())


@dataclass(frozen=True)
class EstimatorCandidate:
    """One entry of the estimator pool: family, reward model and tuning grid."""

    family: str
    regressor: str | None = None
    grid: tuple[float, ...] = ()

    def __post_init__(self) -> None:
        if self.family not in FAMILIES:
            raise ValueError(f"unknown estimator family {self.family!r}")
        needs_model = FAMILIES[self.family][1]
        if needs_model and self.regressor not in REGRESSOR_KINDS:
            raise ValueError(f"{self.family} needs a reward model kind from {REGRESSOR_KINDS}")
        if not needs_model and self.regressor is not None:
            raise ValueError(f"{self.family} takes no reward model")
        transform = FAMILIES[self.family][0]
        tunable = transform not in (None, "self-normalize")
        if tunable and not self.grid:
            raise ValueError(f"{self.family} needs a hyperparameter grid")
        if not tunable and self.grid:
            raise ValueError(f"{self.family} has no hyperparameter to tune")

    @property
    def name(self) -> str:
        return self.family if self.regressor is None else f"{self.family}[{self.regressor}]"

    @property
    def transform_kind(self) -> str | None:
        return FAMILIES[self.family][0]

    @property
    def uses_reward_model(self) -> bool:
        return FAMILIES[self.family][1]

    def contributions(
        self, dist: np.ndarray, w: np.ndarray, data: LoggedDataset, q_hat, lam: float = np.inf
    ) -> np.ndarray:
        """Per-record terms whose mean is the estimate at hyperparameter ``lam``."""
        if self.family == "DM":
            return dm_contributions(dist, q_hat)
        weights = WeightTransform(self.transform_kind, lam)(w)
        if self.uses_reward_model:
            return dr_contributions(weights, data, dist, q_hat)
        return ips_contributions(weights, data)

    def tune(
        self,
        pi_e: Policy | np.ndarray,
        data: LoggedDataset,
        reward_models: Mapping[str, object] | None = None,
        delta: float = DEFAULT_DELTA,
    ) -> tuple[float, float]:
        """Return ``(estimate, chosen hyperparameter)``, tuning with SLOPE when a grid exists."""
        dist = action_dist(pi_e, data)
        q_hat = None
        if self.uses_reward_model:
            if reward_models is None or self.regressor not in reward_models:
                raise KeyError(f"{self.name} needs fitted {self.regressor!r} reward models")
            q_hat = _q_matrix(reward_models[self.regressor], data)
        w = importance_ratio(dist, data) if self.family != "DM" else None
        if not self.grid:
            return float(self.contributions(dist, w, data, q_hat).mean()), np.nan
        contribs = [self.contributions(dist, w, data, q_hat, lam) for lam in self.grid]
        estimates = np.array([c.mean() for c in contribs])
        widths = np.array([cnf_width(c, delta) for c in contribs])
        m = slope_select(TuningProblem(estimates, widths))
        return float(estimates[m]), float(self.grid[m])

    def estimate(
        self,
        pi_e: Policy | np.ndarray,
        data: LoggedDataset,
        reward_models: Mapping[str, object] | None = None,
        delta: float = DEFAULT_DELTA,
    ) -> float:
        return self.tune(pi_e, data, reward_models, delta)[0]


def make_candidate_set(
    regressors: Sequence[str] = REGRESSOR_KINDS,
    clip_grid: Sequence[float] = CLIP_GRID,
    lambda_grid: Sequence[float] = LAMBDA_GRID,
) -> list[EstimatorCandidate]:
    """The default pool: 9 families crossed with reward models (21 candidates)."""
    clip_grid, lambda_grid = tuple(clip_grid), tuple(lambda_grid)
    out: list[EstimatorCandidate] = []
    for family, (transform, needs_model) in FAMILIES.items():
        if transform in ("clip", "switch", "optimistic-shrinkage"):
            grid = clip_grid
        elif transform == "lambda-subgaussian":
            grid = lambda_grid
        else:
            grid = ()
        kinds = regressors if needs_model else (None,)
        out.extend(EstimatorCandidate(family, kind, grid) for kind in kinds)
    return out


def required_regressors(candidates: Sequence[EstimatorCandidate]) -> list[str]:
    kinds = {c.regressor for c in candidates if c.regressor is not None}
    return [k for k in REGRESSOR_KINDS if k in kinds]


def estimate_all(
    candidates: Sequence[EstimatorCandidate],
    pi_e: Policy | np.ndarray,
    data: LoggedDataset,
    reward_models: Mapping[str, object] | None,
    delta: float = DEFAULT_DELTA,
) -> np.ndarray:
    """Estimates of every candidate on one dataset, sharing the action distribution."""
    dist = action_dist(pi_e, data)
    return np.array([c.estimate(dist, data, reward_models, delta) for c in candidates])
