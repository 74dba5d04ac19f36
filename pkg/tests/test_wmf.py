import numpy as np
import pytest

from expomf.em import update_item_factors, update_user_factors
from expomf.errors import ConfigurationError
from expomf.exposure import ConstantConfidence
from expomf.state import Hyperparameters, ModelState
from expomf.wmf import WmfConfig, initial_state, wmf_train

from conftest import make_matrix


def test_config_rejects_equal_confidences():
    with pytest.raises(ConfigurationError, match="c1"):
        WmfConfig(c0=1.0, c1=1.0)
    with pytest.raises(ConfigurationError, match="c0"):
        WmfConfig(c0=-0.1)


def test_initial_state_uses_constant_confidence():
    Y = make_matrix(6, 5, 0.4, seed=0)
    state = initial_state(Y, WmfConfig(n_factors=3, seed=1))
    assert isinstance(state.exposure, ConstantConfidence)
    assert state.hyper.lambda_y == 1.0


def test_one_dimensional_closed_form():
    # single user and item, y=1: theta <- c1*beta*y / (c1*beta^2 + lam)
    Y = make_matrix(1, 1, 1.0, seed=0)
    config = WmfConfig(n_factors=1, lambda_theta=0.5, c0=0.1, c1=2.0, seed=3)
    state = initial_state(Y, config)
    state.beta = np.array([[0.8]])
    theta = update_user_factors(state, Y)
    expected = (2.0 * 0.8 * 1.0) / (2.0 * 0.8**2 + 0.5)
    assert theta[0, 0] == pytest.approx(expected, rel=1e-12)


def test_trajectories_match_expomf_with_constant_posteriors():
    Y = make_matrix(25, 18, 0.25, seed=4)
    config = WmfConfig(n_factors=4, c0=0.01, c1=1.0, seed=6, max_iters=6)

    theta_w, beta_w = wmf_train(Y, config)

    state = initial_state(Y, config)
    for _ in range(6):
        state.theta = update_user_factors(state, Y)
        state.beta = update_item_factors(state, Y)
    np.testing.assert_allclose(theta_w, state.theta, atol=1e-10)
    np.testing.assert_allclose(beta_w, state.beta, atol=1e-10)


def test_wmf_train_deterministic():
    Y = make_matrix(15, 10, 0.3, seed=8)
    config = WmfConfig(n_factors=3, seed=2, max_iters=3)
    a = wmf_train(Y, config)
    b = wmf_train(Y, config)
    np.testing.assert_array_equal(a[0], b[0])
    np.testing.assert_array_equal(a[1], b[1])
