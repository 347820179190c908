import numpy as np
import pytest

from opesel import nn
from opesel.errors import StaleCacheError, TrainingError

from oracles import central_difference, jitter_biases, relative_error


def test_shapes_and_range():
    params = nn.init_params(7, 16, 0)
    rho, _ = nn.forward(params, np.random.default_rng(0).standard_normal((9, 7)))
    assert rho.shape == (9,)
    assert np.all((rho >= nn.RHO_EPS) & (rho <= 1 - nn.RHO_EPS))


def test_encode_grid_layout():
    x = np.arange(6.0).reshape(2, 3)
    grid = nn.encode_grid(x, 4)
    assert grid.shape == (8, 7)
    for i in range(2):
        for a in range(4):
            assert np.array_equal(grid[i * 4 + a], nn.encode(x[i:i + 1], [a], 4)[0])


@pytest.mark.parametrize("seed", range(5))
def test_backward_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    params = jitter_biases(nn.init_params(5, 8, seed), rng)
    x = rng.standard_normal((6, 5))
    up = rng.standard_normal(6)

    def loss():
        return float(np.dot(up, nn.forward(params, x)[0]))

    _, cache = nn.forward(params, x)
    grads = nn.backward(params, cache, up)
    for name in nn.PARAM_NAMES:
        assert relative_error(grads[name], central_difference(loss, params[name]), 1e-6) < 1e-4


def test_stale_cache_is_rejected():
    params = nn.init_params(3, 4, 0)
    _, cache = nn.forward(params, np.ones((2, 3)))
    other = {k: v.copy() for k, v in params.items()}
    with pytest.raises(StaleCacheError):
        nn.backward(other, cache, np.ones(2))


def test_input_width_checked():
    with pytest.raises(ValueError):
        nn.forward(nn.init_params(3, 4, 0), np.ones((2, 4)))


def test_adam_descends_a_quadratic():
    params = {"W1": np.array([[3.0]])}
    state = nn.adam_init(params, lr=0.1)
    for _ in range(300):
        params, state = nn.adam_step(params, state, {"W1": 2 * params["W1"]})
    assert abs(params["W1"][0, 0]) < 0.05
    assert state.step == 300


def test_adam_first_step_moves_by_lr():
    params = {"b": np.array([1.0, -1.0])}
    new, _ = nn.adam_step(params, nn.adam_init(params, lr=0.01), {"b": np.array([5.0, -0.001])})
    assert np.allclose(new["b"], [0.99, -0.99], atol=1e-6)


def test_adam_rejects_non_finite_gradients():
    params = {"b": np.zeros(2)}
    with pytest.raises(TrainingError):
        nn.adam_step(params, nn.adam_init(params), {"b": np.array([np.nan, 0.0])})
