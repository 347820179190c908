"""Synthetic contextual-bandit environment, policies and logged data."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import expit

from .errors import EmptyRequestError, FullSupportError
from .seeding import SeedLike, as_rng, make_rng

_MC_CHUNK = 100_000


@dataclass(frozen=True)
class SyntheticEnvironment:
    """Logistic-linear reward model ``q(x, a) = sigmoid(x . theta_a + b_a)``.

    ``theta_a`` and ``b_a`` are drawn once from ``N(0, 1/dim)`` using ``seed``,
    so two environments built with the same arguments are identical.
    """

    seed: int = 0
    dim: int = 10
    n_actions: int = 10
    theta: np.ndarray = field(init=False, repr=False, compare=False)
    bias: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if self.dim < 1:
            raise ValueError("dim must be positive")
        if self.n_actions < 2:
            raise ValueError("an action space needs at least two actions")
        rng = make_rng("environment", self.seed)
        scale = 1.0 / np.sqrt(self.dim)
        theta = rng.normal(size=(self.n_actions, self.dim)) * scale
        bias = rng.normal(size=self.n_actions) * scale
        theta.setflags(write=False)
        bias.setflags(write=False)
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "bias", bias)

    def reward_matrix(self, context: np.ndarray) -> np.ndarray:
        """Expected reward of every action, shape ``(n, n_actions)``."""
        context = np.atleast_2d(np.asarray(context, dtype=float))
        return expit(context @ self.theta.T + self.bias)


def sample_contexts(env: SyntheticEnvironment, n: int, seed: SeedLike) -> np.ndarray:
    """Draw ``n`` i.i.d. standard-normal contexts of dimension ``env.dim``."""
    if n < 1:
        raise EmptyRequestError("cannot sample zero contexts")
    return as_rng(seed).standard_normal((n, env.dim))


def expected_reward(env: SyntheticEnvironment, x: np.ndarray, a) -> np.ndarray | float:
    a_arr = np.asarray(a)
    if np.any(a_arr < 0) or np.any(a_arr >= env.n_actions):
        raise IndexError(f"action out of range [0, {env.n_actions})")
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        return float(expit(x @ env.theta[int(a_arr)] + env.bias[int(a_arr)]))
    return expit(np.einsum("nd,nd->n", x, env.theta[a_arr]) + env.bias[a_arr])


def softmax(scores: np.ndarray, beta: float) -> np.ndarray:
    z = beta * scores
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


class Policy:
    """A conditional action distribution evaluable at any context."""

    n_actions: int
    kind: str = "abstract"

    def probs(self, context: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def prob_of(self, context: np.ndarray, action: np.ndarray) -> np.ndarray:
        p = self.probs(context)
        return p[np.arange(p.shape[0]), np.asarray(action)]


class SoftmaxPolicy(Policy):
    """``pi(a|x) proportional to exp(beta * score(x, a))``.

    ``scores`` maps an ``(n, d)`` context array to ``(n, n_actions)`` scores.
    """

    def __init__(
        self,
        scores: Callable[[np.ndarray], np.ndarray],
        beta: float,
        n_actions: int,
        kind: str = "softmax-over-q",
        name: str | None = None,
    ) -> None:
        if not np.isfinite(beta):
            raise ValueError("beta must be finite")
        self.scores = scores
        self.beta = float(beta)
        self.n_actions = n_actions
        self.kind = kind
        self.name = name or f"{kind}(beta={beta:g})"

    def probs(self, context: np.ndarray) -> np.ndarray:
        context = np.atleast_2d(context)
        return softmax(self.scores(context), self.beta)

    def __repr__(self) -> str:
        return f"SoftmaxPolicy({self.name})"


class MixturePolicy(Policy):
    """``pi_b(a|x) = sum_j p(j) pi_j(a|x)`` with context-free weights."""

    kind = "mixture"

    def __init__(self, components: Sequence[Policy], weights: Sequence[float]) -> None:
        weights = np.asarray(weights, dtype=float)
        if len(components) == 0 or len(components) != len(weights):
            raise ValueError("need one weight per component policy")
        if np.any(weights < 0) or not np.isclose(weights.sum(), 1.0, atol=1e-12):
            raise ValueError("mixture weights must be nonnegative and sum to 1")
        n_actions = {c.n_actions for c in components}
        if len(n_actions) != 1:
            raise ValueError("component policies disagree on the action count")
        self.components = list(components)
        self.weights = weights
        self.n_actions = n_actions.pop()

    def component_probs(self, context: np.ndarray) -> np.ndarray:
        """Stacked component distributions, shape ``(l, n, n_actions)``."""
        return np.stack([c.probs(context) for c in self.components])

    def probs(self, context: np.ndarray) -> np.ndarray:
        return np.tensordot(self.weights, self.component_probs(context), axes=1)

    def without(self, j: int) -> MixturePolicy:
        """Mixture over the remaining components with renormalized weights."""
        keep = [i for i in range(len(self.components)) if i != j]
        if not keep:
            raise ValueError("cannot remove the only component")
        w = self.weights[keep]
        if w.sum() <= 0:
            raise ValueError("remaining components carry zero weight")
        return MixturePolicy([self.components[i] for i in keep], w / w.sum())


def as_mixture(policy: Policy) -> MixturePolicy:
    if isinstance(policy, MixturePolicy):
        return policy
    return MixturePolicy([policy], [1.0])


def softmax_policy(env: SyntheticEnvironment, beta: float) -> SoftmaxPolicy:
    return SoftmaxPolicy(env.reward_matrix, beta, env.n_actions, name=f"softmax(beta={beta:g})")


def behavior_mixture(
    env: SyntheticEnvironment, betas: Sequence[float], weights: Sequence[float] | None = None
) -> MixturePolicy:
    if weights is None:
        weights = np.full(len(betas), 1.0 / len(betas))
    return MixturePolicy([softmax_policy(env, b) for b in betas], weights)


def _readonly(a: np.ndarray, dtype) -> np.ndarray:
    out = np.array(a, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class LoggedDataset:
    """Logged bandit feedback ``{(x_i, a_i, r_i, pi_b(a_i|x_i), j_i)}``.

    ``pscore`` is the propensity of the logged action under the (mixture)
    behavior policy; ``policy_index`` is the data-collection policy that
    produced each record. Arrays are copied and frozen on construction.
    """

    context: np.ndarray
    action: np.ndarray
    reward: np.ndarray
    pscore: np.ndarray
    policy_index: np.ndarray
    n_actions: int
    r_max: float = 1.0

    def __post_init__(self) -> None:
        context = _readonly(np.atleast_2d(self.context), float)
        n = context.shape[0]
        action = _readonly(self.action, np.int64)
        reward = _readonly(self.reward, float)
        pscore = _readonly(self.pscore, float)
        policy_index = _readonly(self.policy_index, np.int64)
        for name, arr in (("action", action), ("reward", reward), ("pscore", pscore),
                          ("policy_index", policy_index)):
            if arr.shape != (n,):
                raise ValueError(f"{name} must have shape ({n},), got {arr.shape}")
        if n and (action.min() < 0 or action.max() >= self.n_actions):
            raise IndexError("logged action out of range")
        if np.any(~(pscore > 0)) or np.any(pscore > 1 + 1e-12):
            raise FullSupportError("propensities must lie in (0, 1]")
        if np.any(reward < 0) or np.any(reward > self.r_max):
            raise ValueError(f"rewards must lie in [0, {self.r_max}]")
        if not np.all(np.isfinite(context)):
            raise ValueError("contexts must be finite")
        object.__setattr__(self, "context", context)
        object.__setattr__(self, "action", action)
        object.__setattr__(self, "reward", reward)
        object.__setattr__(self, "pscore", pscore)
        object.__setattr__(self, "policy_index", policy_index)

    @property
    def n(self) -> int:
        return self.context.shape[0]

    def __len__(self) -> int:
        return self.n

    def take(self, index: np.ndarray) -> LoggedDataset:
        index = np.asarray(index)
        return LoggedDataset(
            self.context[index], self.action[index], self.reward[index],
            self.pscore[index], self.policy_index[index], self.n_actions, self.r_max,
        )

    def with_pscore(self, pscore: np.ndarray) -> LoggedDataset:
        return LoggedDataset(
            self.context, self.action, self.reward, pscore, self.policy_index,
            self.n_actions, self.r_max,
        )


def sample_logged_data(
    env: SyntheticEnvironment, behavior: Policy, n: int, seed: SeedLike
) -> LoggedDataset:
    """Generate ``n`` records under a (mixture) behavior policy.

    Draw order from the seeded stream is fixed: contexts, policy indices,
    action uniforms, reward uniforms.
    """
    mixture = as_mixture(behavior)
    rng = as_rng(seed)
    x = sample_contexts(env, n, rng)
    j = rng.choice(len(mixture.components), size=n, p=mixture.weights)
    comp = mixture.component_probs(x)  # (l, n, A)
    chosen = comp[j, np.arange(n)]
    cdf = np.cumsum(chosen, axis=1)
    u = rng.random(n)
    a = np.minimum((u[:, None] > cdf).sum(axis=1), env.n_actions - 1)
    q = env.reward_matrix(x)[np.arange(n), a]
    r = (rng.random(n) < q).astype(float)
    pscore = np.tensordot(mixture.weights, comp[:, np.arange(n), a], axes=1)
    return LoggedDataset(x, a, r, pscore, j, env.n_actions)


def true_policy_value(
    env: SyntheticEnvironment, pi: Policy, n_mc: int, seed: SeedLike
) -> float:
    """Monte-Carlo ``V(pi)`` with the inner expectation over actions taken exactly."""
    if n_mc < 1:
        raise EmptyRequestError("n_mc must be positive")
    rng = as_rng(seed)
    total = 0.0
    done = 0
    while done < n_mc:
        m = min(_MC_CHUNK, n_mc - done)
        x = sample_contexts(env, m, rng)
        total += float(np.sum(pi.probs(x) * env.reward_matrix(x)))
        done += m
    return total / n_mc


def importance_ratio(pi_e: Policy | np.ndarray, data: LoggedDataset) -> np.ndarray:
    """``w_i = pi_e(a_i|x_i) / pi_b(a_i|x_i)`` for every record.

    ``pi_e`` may be a policy or its ``(n, n_actions)`` distribution at the
    dataset contexts.
    """
    if np.any(~(data.pscore > 0)):
        raise FullSupportError("zero behavior propensity on a logged action")
    dist = action_dist(pi_e, data)
    return dist[np.arange(data.n), data.action] / data.pscore


def action_dist(pi_e: Policy | np.ndarray, data: LoggedDataset) -> np.ndarray:
    if isinstance(pi_e, Policy):
        return pi_e.probs(data.context)
    dist = np.asarray(pi_e, dtype=float)
    if dist.shape != (data.n, data.n_actions):
        raise ValueError(f"action distribution must have shape ({data.n}, {data.n_actions})")
    return dist
