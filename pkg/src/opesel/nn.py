"""A fixed 3-layer ReLU MLP with a sigmoid head, and Adam.

Parameters are a plain dict of arrays ``W1, b1, W2, b2, W3, b3``. ``forward``
returns the sigmoid output clamped to ``[RHO_EPS, 1 - RHO_EPS]`` together with
a cache; ``backward`` turns per-row upstream gradients ``dL/drho`` into
parameter gradients. Rows whose output sits on the clamp get zero gradient,
matching the flat clamp.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .errors import StaleCacheError, TrainingError
from .seeding import SeedLike, as_rng

MlpParams = dict  # str -> np.ndarray
PARAM_NAMES = ("W1", "b1", "W2", "b2", "W3", "b3")
RHO_EPS = 1e-6


def init_params(n_in: int, hidden: int = 100, seed: SeedLike = 0) -> MlpParams:
    """He-normal weights and zero biases."""
    rng = as_rng(seed)
    sizes = [(n_in, hidden), (hidden, hidden), (hidden, 1)]
    params = {}
    for i, (fan_in, fan_out) in enumerate(sizes, start=1):
        params[f"W{i}"] = rng.normal(scale=np.sqrt(2.0 / fan_in), size=(fan_in, fan_out))
        params[f"b{i}"] = np.zeros(fan_out)
    return params


def zeros_like(params: MlpParams) -> MlpParams:
    return {k: np.zeros_like(v) for k, v in params.items()}


def encode(context: np.ndarray, action: np.ndarray, n_actions: int) -> np.ndarray:
    """Concatenate contexts with one-hot actions."""
    context = np.atleast_2d(context)
    n = context.shape[0]
    onehot = np.zeros((n, n_actions))
    onehot[np.arange(n), np.asarray(action)] = 1.0
    return np.hstack([context, onehot])


def encode_grid(context: np.ndarray, n_actions: int) -> np.ndarray:
    """Inputs for every (context, action) pair, context-major: row ``i * A + a``."""
    context = np.atleast_2d(context)
    n, d = context.shape
    out = np.zeros((n, n_actions, d + n_actions))
    out[:, :, :d] = context[:, None, :]
    out[:, np.arange(n_actions), d + np.arange(n_actions)] = 1.0
    return out.reshape(n * n_actions, d + n_actions)


def forward(params: MlpParams, inputs: np.ndarray) -> tuple[np.ndarray, dict]:
    inputs = np.atleast_2d(np.asarray(inputs, dtype=float))
    if inputs.shape[1] != params["W1"].shape[0]:
        raise ValueError(
            f"input width {inputs.shape[1]} does not match network input {params['W1'].shape[0]}"
        )
    z1 = inputs @ params["W1"] + params["b1"]
    h1 = np.maximum(z1, 0.0)
    z2 = h1 @ params["W2"] + params["b2"]
    h2 = np.maximum(z2, 0.0)
    f = (h2 @ params["W3"] + params["b3"])[:, 0]
    raw = expit(f)
    rho = np.clip(raw, RHO_EPS, 1.0 - RHO_EPS)
    cache = {"params": params, "x": inputs, "h1": h1, "h2": h2, "raw": raw, "rho": rho}
    return rho, cache


def backward(params: MlpParams, cache: dict, upstream: np.ndarray) -> MlpParams:
    """Gradient of ``sum_rows upstream * rho`` with respect to every parameter."""
    if cache.get("params") is not params:
        raise StaleCacheError("cache was computed with different parameters")
    upstream = np.asarray(upstream, dtype=float)
    raw = cache["raw"]
    if upstream.shape != raw.shape:
        raise ValueError(f"upstream shape {upstream.shape} does not match batch {raw.shape}")
    inside = (raw > RHO_EPS) & (raw < 1.0 - RHO_EPS)
    g_f = (upstream * raw * (1.0 - raw) * inside)[:, None]
    h1, h2 = cache["h1"], cache["h2"]
    grads = {"W3": h2.T @ g_f, "b3": g_f.sum(axis=0)}
    g_z2 = (g_f @ params["W3"].T) * (h2 > 0)
    grads["W2"] = h1.T @ g_z2
    grads["b2"] = g_z2.sum(axis=0)
    g_z1 = (g_z2 @ params["W2"].T) * (h1 > 0)
    grads["W1"] = cache["x"].T @ g_z1
    grads["b1"] = g_z1.sum(axis=0)
    return grads


@dataclass
class AdamState:
    m: MlpParams
    v: MlpParams
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_init(params: MlpParams, lr: float = 1e-3, beta1=0.9, beta2=0.999, eps=1e-8) -> AdamState:
    return AdamState(zeros_like(params), zeros_like(params), 0, lr, beta1, beta2, eps)


def adam_step(
    params: MlpParams, state: AdamState, grads: MlpParams
) -> tuple[MlpParams, AdamState]:
    """One bias-corrected Adam update; returns new params and state."""
    for name, g in grads.items():
        if g.shape != params[name].shape:
            raise ValueError(f"gradient for {name} has shape {g.shape}, expected {params[name].shape}")
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient in {name} at step {state.step + 1}")
    t = state.step + 1
    b1, b2 = state.beta1, state.beta2
    new_params, new_m, new_v = {}, {}, {}
    for name, p in params.items():
        g = grads[name]
        m = b1 * state.m[name] + (1 - b1) * g
        v = b2 * state.v[name] + (1 - b2) * g * g
        m_hat = m / (1 - b1**t)
        v_hat = v / (1 - b2**t)
        new_params[name] = p - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
        new_m[name], new_v[name] = m, v
    return new_params, AdamState(new_m, new_v, t, state.lr, b1, b2, state.eps)
