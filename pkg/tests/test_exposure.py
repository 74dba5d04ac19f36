import numpy as np
import pytest
from scipy.special import expit

from expomf.errors import ConfigurationError
from expomf.exposure import (
    CovariateExposure,
    FixedExposure,
    PerItemExposure,
    initialize_exposure,
    psi_gradient,
    update_covariate,
    update_per_item,
)

# frozen oracle: 1/(1+exp(-2)) at 50 digits
SIGMA_2 = 0.88079707797788244


def test_fixed_prior_returns_mu():
    prior = FixedExposure(0.1)
    assert prior.mu_for_users(np.array([0, 1])) == 0.1
    assert prior.mu_for_items(np.array([3])) == 0.1


def test_fixed_prior_validates_range():
    with pytest.raises(ConfigurationError):
        FixedExposure(0.0)
    with pytest.raises(ConfigurationError):
        FixedExposure(1.0)


def test_per_item_lookup():
    prior = PerItemExposure(np.array([0.3, 0.6]))
    np.testing.assert_allclose(prior.mu_for_items(np.array([0]))[0, 0], 0.3)
    np.testing.assert_allclose(prior.mu_for_users(np.array([0, 1]))[0], [0.3, 0.6])


def test_covariate_zero_weights_give_half():
    x = np.array([[1.0, 0.0], [0.0, 1.0]])
    prior = CovariateExposure(x, psi=np.zeros((3, 2)), gamma=np.zeros(3))
    np.testing.assert_allclose(prior.mu_for_users(np.array([0]))[0], 0.5)


def test_covariate_sigmoid_value():
    x = np.array([[1.0, 0.0]])
    prior = CovariateExposure(x, psi=np.array([[2.0, 0.0]]), gamma=np.zeros(1))
    np.testing.assert_allclose(prior.mu_for_users(np.array([0]))[0, 0], SIGMA_2, rtol=1e-15)
    np.testing.assert_allclose(prior.mu_for_items(np.array([0]))[0, 0], SIGMA_2, rtol=1e-15)


# ---------------------------------------------------------------------------
# per-item conjugate update


def test_per_item_update_matches_direct_evaluation():
    prior = PerItemExposure(np.full(1, 0.5), alpha1=3.0, alpha2=4.0)
    new = update_per_item(prior, np.array([2.0]), n_users=10)
    np.testing.assert_allclose(new[0], 4.0 / 15.0, rtol=1e-15)


def test_per_item_update_uniform_prior_is_empirical_mean():
    prior = PerItemExposure(np.full(1, 0.5), alpha1=1.0, alpha2=1.0)
    new = update_per_item(prior, np.array([5.0]), n_users=10)
    np.testing.assert_allclose(new[0], 0.5, rtol=1e-15)


def test_per_item_update_clamps_at_zero_mass():
    prior = PerItemExposure(np.full(1, 0.5), alpha1=1.0, alpha2=2.0)
    new = update_per_item(prior, np.array([0.0]), n_users=10)
    assert new[0] == 1e-8


def test_per_item_update_shape_mismatch():
    prior = PerItemExposure(np.full(3, 0.5))
    with pytest.raises(ConfigurationError):
        update_per_item(prior, np.zeros(2), n_users=10)


# ---------------------------------------------------------------------------
# covariate gradient


def test_psi_gradient_zero_at_stationarity():
    x = np.array([[0.7, 0.3], [0.2, 0.8]])
    prior = CovariateExposure(x, psi=np.array([[0.5, -0.5]]), gamma=np.array([0.25]))
    mu = expit(prior.psi[0] @ x.T + prior.gamma[0])
    grad = psi_gradient(prior, 0, np.array([0, 1]), mu)
    np.testing.assert_allclose(grad, 0.0, atol=1e-15)


def test_psi_gradient_single_item_value():
    x = np.array([[1.0, 0.0]])
    prior = CovariateExposure(x, psi=np.zeros((1, 2)), gamma=np.zeros(1))
    grad = psi_gradient(prior, 0, np.array([0]), np.array([1.0]))
    np.testing.assert_allclose(grad, [0.5, 0.0, 0.5], rtol=1e-15)


def test_psi_gradient_without_bias_drops_last_coordinate():
    x = np.array([[1.0, 0.0]])
    prior = CovariateExposure(
        x, psi=np.zeros((1, 2)), gamma=np.zeros(1), user_bias=False
    )
    grad = psi_gradient(prior, 0, np.array([0]), np.array([1.0]))
    assert grad.shape == (2,)
    np.testing.assert_allclose(grad, [0.5, 0.0])


def test_psi_gradient_matches_finite_differences():
    rng = np.random.default_rng(12)
    L, n_items = 4, 6
    x = rng.dirichlet(np.ones(L), size=n_items)
    psi = rng.normal(size=(1, L))
    gamma = rng.normal(size=1)
    p = rng.random(n_items)
    prior = CovariateExposure(x, psi=psi.copy(), gamma=gamma.copy())
    items = np.arange(n_items)
    grad = psi_gradient(prior, 0, items, p)

    def loglik(w, b):
        mu = expit(w @ x.T + b)
        return float(np.mean(p * np.log(mu) + (1 - p) * np.log(1 - mu)))

    h = 1e-6
    fd = np.empty(L + 1)
    for j in range(L):
        up, down = psi[0].copy(), psi[0].copy()
        up[j] += h
        down[j] -= h
        fd[j] = (loglik(up, gamma[0]) - loglik(down, gamma[0])) / (2 * h)
    fd[L] = (loglik(psi[0], gamma[0] + h) - loglik(psi[0], gamma[0] - h)) / (2 * h)
    np.testing.assert_allclose(grad, fd, rtol=1e-5, atol=1e-9)


# ---------------------------------------------------------------------------
# covariate mini-batch update


def test_update_covariate_noop_at_stationarity():
    x = np.array([[0.6, 0.4], [0.4, 0.6]])
    prior = CovariateExposure(x, psi=np.array([[0.3, -0.3]]), gamma=np.array([0.1]))
    psi_before = prior.psi.copy()
    gamma_before = prior.gamma.copy()
    mu = expit(prior.psi @ x.T + prior.gamma[:, None])

    update_covariate(prior, lambda items: mu[:, items], np.random.default_rng(0))
    np.testing.assert_allclose(prior.psi, psi_before, atol=1e-12)
    np.testing.assert_allclose(prior.gamma, gamma_before, atol=1e-12)


def test_update_covariate_two_item_bias_fit_approaches_half():
    # two identical items, posteriors 1 and 0: the optimum of
    # log(mu) + log(1 - mu) sits at mu = 0.5 whatever the covariates are
    x = np.array([[1.0], [1.0]])
    prior = CovariateExposure(
        x,
        psi=np.array([[2.0]]),
        gamma=np.array([-1.0]),
        step_size=0.5,
        batch_size=2,
        epochs_per_m_step=10,
    )
    p = np.array([[1.0, 0.0]])
    rng = np.random.default_rng(5)
    for _ in range(60):
        update_covariate(prior, lambda items: p[:, items], rng)
    mu = expit(prior.psi @ x.T + prior.gamma[:, None])
    np.testing.assert_allclose(mu, 0.5, atol=1e-3)


def test_update_covariate_moves_toward_posteriors():
    rng = np.random.default_rng(7)
    n_users, n_items, L = 5, 30, 3
    x = rng.dirichlet(np.ones(L), size=n_items)
    prior = CovariateExposure(
        x, psi=rng.normal(0, 0.01, (n_users, L)), gamma=np.zeros(n_users)
    )
    p = rng.random((n_users, n_items))

    def loglik():
        mu = expit(prior.psi @ x.T + prior.gamma[:, None])
        return float(np.sum(p * np.log(mu) + (1 - p) * np.log(1 - mu)))

    before = loglik()
    update_covariate(prior, lambda items: p[:, items], np.random.default_rng(1))
    assert loglik() > before


# ---------------------------------------------------------------------------
# factory


def test_initialize_exposure_variants():
    rng = np.random.default_rng(0)
    fixed = initialize_exposure("fixed", 4, 3, rng, mu=0.2)
    assert fixed.variant == "fixed" and fixed.mu == 0.2
    per_item = initialize_exposure("per_item", 4, 3, rng)
    assert per_item.mu.shape == (3,)
    assert np.all((per_item.mu > 0) & (per_item.mu < 1))
    cov = initialize_exposure(
        "covariate", 4, 3, rng, covariates=np.full((3, 2), 0.5), init_scale=0.01
    )
    assert cov.psi.shape == (4, 2)
    with pytest.raises(ConfigurationError):
        initialize_exposure("bogus", 4, 3, rng)


def test_initialize_covariate_requires_matrix():
    with pytest.raises(ConfigurationError):
        initialize_exposure("covariate", 4, 3, np.random.default_rng(0))
