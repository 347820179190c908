"""Reward regressors ``q_hat(x, a)`` used by DM/DR-type estimators.

Three model families stand in for the usual RandomForest / LightGBM /
LogisticRegression trio:

``logistic``
    L2-regularized logistic regression on ``[x, onehot(a), x (x) onehot(a)]``
    fitted with L-BFGS.
``gbm``
    Gradient boosting of depth-2 regression trees on ``[x, onehot(a)]``
    with histogram split search.
``knn``
    Per-action k-nearest-neighbour mean reward in context space.

Default hyperparameters live in ``DEFAULT_PARAMS`` and are not tuned.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit, log_expit

REGRESSOR_KINDS = ("logistic", "gbm", "knn")

DEFAULT_PARAMS: dict[str, dict] = {
    "logistic": {"l2": 1e-3, "max_iter": 200},
    "gbm": {"n_estimators": 60, "learning_rate": 0.1, "n_bins": 32, "min_samples_leaf": 10},
    "knn": {"k": 25},
}


class DegenerateFitWarning(UserWarning):
    """A regressor fell back to a constant predictor."""


class RewardRegressor:
    """Common interface: ``fit`` on logged triples, ``predict`` a full matrix."""

    kind = "abstract"

    def __init__(self) -> None:
        self.degenerate = False
        self._const = 0.0
        self.n_actions = 0
        self.r_max = 1.0

    def fit(self, context, action, reward, n_actions: int, r_max: float = 1.0):
        context = np.asarray(context, dtype=float)
        action = np.asarray(action, dtype=np.int64)
        reward = np.asarray(reward, dtype=float)
        self.n_actions = n_actions
        self.r_max = r_max
        self._const = float(reward.mean()) if reward.size else 0.0
        self.degenerate = False
        if reward.size == 0 or np.ptp(reward) == 0.0:
            self.degenerate = True
            warnings.warn(
                f"{self.kind} regressor got a single reward value; using a constant predictor",
                DegenerateFitWarning,
                stacklevel=2,
            )
            return self
        self._fit(context, action, reward)
        return self

    def predict(self, context) -> np.ndarray:
        """Predicted reward for every action, shape ``(n, n_actions)``."""
        context = np.atleast_2d(np.asarray(context, dtype=float))
        if self.degenerate:
            return np.full((context.shape[0], self.n_actions), self._const)
        return np.clip(self._predict(context), 0.0, self.r_max)

    def _fit(self, context, action, reward) -> None:
        raise NotImplementedError

    def _predict(self, context) -> np.ndarray:
        raise NotImplementedError


class LogisticRewardRegressor(RewardRegressor):
    kind = "logistic"

    def __init__(self, l2: float = 1e-3, max_iter: int = 200) -> None:
        super().__init__()
        self.l2 = l2
        self.max_iter = max_iter

    def _features(self, context, action) -> np.ndarray:
        n, d = context.shape
        onehot = np.zeros((n, self.n_actions))
        onehot[np.arange(n), action] = 1.0
        cross = (context[:, None, :] * onehot[:, :, None]).reshape(n, -1)
        return np.hstack([context, onehot, cross])

    def _fit(self, context, action, reward) -> None:
        n, d = context.shape
        phi = self._features(context, action)
        y = reward / self.r_max
        l2 = self.l2

        def loss(w):
            z = phi @ w
            nll = -np.mean(y * log_expit(z) + (1 - y) * log_expit(-z))
            grad = phi.T @ (expit(z) - y) / n
            return nll + 0.5 * l2 * w @ w, grad + l2 * w

        res = minimize(loss, np.zeros(phi.shape[1]), jac=True, method="L-BFGS-B",
                       options={"maxiter": self.max_iter})
        w = res.x
        self.w_ctx = w[:d]
        self.w_act = w[d:d + self.n_actions]
        self.w_cross = w[d + self.n_actions:].reshape(self.n_actions, d)

    def _predict(self, context) -> np.ndarray:
        z = context @ (self.w_ctx[:, None] + self.w_cross.T) + self.w_act
        return self.r_max * expit(z)


@dataclass
class _Tree:
    feature: int
    threshold: float
    left: "_Tree | float"
    right: "_Tree | float"

    def predict(self, X: np.ndarray) -> np.ndarray:
        go_left = X[:, self.feature] <= self.threshold
        out = np.empty(X.shape[0])
        for mask, child in ((go_left, self.left), (~go_left, self.right)):
            if isinstance(child, _Tree):
                out[mask] = child.predict(X[mask])
            else:
                out[mask] = child
        return out


@dataclass
class BoostedTrees:
    """Least-squares gradient boosting with depth-2 trees on binned features."""

    n_estimators: int = 60
    learning_rate: float = 0.1
    n_bins: int = 32
    min_samples_leaf: int = 10
    trees: list = field(default_factory=list)
    init: float = 0.0

    def fit(self, X: np.ndarray, y: np.ndarray) -> BoostedTrees:
        n, p = X.shape
        qs = np.linspace(0, 1, self.n_bins + 1)[1:-1]
        self._thresholds = [np.unique(np.quantile(X[:, f], qs)) for f in range(p)]
        nb = self.n_bins
        bins = np.empty((n, p), dtype=np.int64)
        for f in range(p):
            bins[:, f] = np.searchsorted(self._thresholds[f], X[:, f], side="left")
        self._offsets = np.arange(p) * nb
        self.init = float(y.mean())
        pred = np.full(n, self.init)
        self.trees = []
        for _ in range(self.n_estimators):
            res = y - pred
            tree = self._grow(bins, res, np.arange(n), depth=2)
            if not isinstance(tree, _Tree):
                break
            self.trees.append(tree)
            pred += tree.predict(X)
        return self

    def _best_split(self, bins, res, idx):
        p = bins.shape[1]
        nb = self.n_bins
        flat = (bins[idx] + self._offsets).ravel()
        cnt = np.bincount(flat, minlength=p * nb).reshape(p, nb)
        tot = np.bincount(flat, weights=np.repeat(res[idx], p), minlength=p * nb).reshape(p, nb)
        n_left = np.cumsum(cnt, axis=1)[:, :-1]
        s_left = np.cumsum(tot, axis=1)[:, :-1]
        m = idx.size
        s = res[idx].sum()
        n_right = m - n_left
        s_right = s - s_left
        ok = (n_left >= self.min_samples_leaf) & (n_right >= self.min_samples_leaf)
        with np.errstate(divide="ignore", invalid="ignore"):
            gain = s_left**2 / n_left + s_right**2 / n_right - s**2 / m
        gain = np.where(ok, gain, -np.inf)
        f, k = np.unravel_index(np.argmax(gain), gain.shape)
        if not np.isfinite(gain[f, k]) or gain[f, k] <= 1e-12 or k >= len(self._thresholds[f]):
            return None
        return int(f), int(k)

    def _grow(self, bins, res, idx, depth):
        leaf = self.learning_rate * float(res[idx].mean())
        if depth == 0 or idx.size < 2 * self.min_samples_leaf:
            return leaf
        split = self._best_split(bins, res, idx)
        if split is None:
            return leaf
        f, k = split
        go_left = bins[idx, f] <= k
        return _Tree(
            f, float(self._thresholds[f][k]),
            self._grow(bins, res, idx[go_left], depth - 1),
            self._grow(bins, res, idx[~go_left], depth - 1),
        )

    def predict(self, X: np.ndarray) -> np.ndarray:
        out = np.full(X.shape[0], self.init)
        for tree in self.trees:
            out += tree.predict(X)
        return out


class BoostedRewardRegressor(RewardRegressor):
    kind = "gbm"

    def __init__(self, n_estimators=60, learning_rate=0.1, n_bins=32, min_samples_leaf=10) -> None:
        super().__init__()
        self.booster = BoostedTrees(n_estimators, learning_rate, n_bins, min_samples_leaf)

    def _design(self, context, action):
        n = context.shape[0]
        onehot = np.zeros((n, self.n_actions))
        onehot[np.arange(n), action] = 1.0
        return np.hstack([context, onehot])

    def _fit(self, context, action, reward) -> None:
        self.booster.fit(self._design(context, action), reward)

    def _predict(self, context) -> np.ndarray:
        n = context.shape[0]
        out = np.empty((n, self.n_actions))
        for a in range(self.n_actions):
            out[:, a] = self.booster.predict(self._design(context, np.full(n, a)))
        return out


class KnnRewardRegressor(RewardRegressor):
    kind = "knn"

    def __init__(self, k: int = 25) -> None:
        super().__init__()
        self.k = k

    def _fit(self, context, action, reward) -> None:
        self._by_action = []
        for a in range(self.n_actions):
            mask = action == a
            self._by_action.append((context[mask], reward[mask]))

    def _predict(self, context) -> np.ndarray:
        n = context.shape[0]
        out = np.empty((n, self.n_actions))
        q_sq = np.einsum("nd,nd->n", context, context)
        for a, (xa, ra) in enumerate(self._by_action):
            if ra.size == 0:
                out[:, a] = self._const
                continue
            k = min(self.k, ra.size)
            for start in range(0, n, 4096):
                sl = slice(start, start + 4096)
                d2 = q_sq[sl, None] - 2 * context[sl] @ xa.T + np.einsum("md,md->m", xa, xa)
                if k < ra.size:
                    nn_idx = np.argpartition(d2, k - 1, axis=1)[:, :k]
                    out[sl, a] = ra[nn_idx].mean(axis=1)
                else:
                    out[sl, a] = ra.mean()
        return out


_CLASSES = {
    "logistic": LogisticRewardRegressor,
    "gbm": BoostedRewardRegressor,
    "knn": KnnRewardRegressor,
}


def make_regressor(kind: str, **params) -> RewardRegressor:
    if kind not in _CLASSES:
        raise ValueError(f"unknown regressor kind {kind!r}; expected one of {REGRESSOR_KINDS}")
    merged = {**DEFAULT_PARAMS[kind], **params}
    return _CLASSES[kind](**merged)
