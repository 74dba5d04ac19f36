"""Exposure models: who was likely to see which item a priori.

Three prior variants share one interface (per-user and per-item views of the
prior probability matrix, plus an update rule), and a fourth degenerate
variant carries the constant confidence weights that turn the factor updates
into classic weighted matrix factorization.

Prior probabilities are always clamped to [EPS, 1 - EPS] so downstream logs
and ratios stay finite.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit

from .errors import ConfigurationError
from .validation import (
    check_count,
    check_nonnegative,
    check_positive,
    check_probability,
)

EPS = 1e-8


def _clamp(mu: np.ndarray) -> np.ndarray:
    return np.clip(mu, EPS, 1.0 - EPS)


class FixedExposure:
    """One shared prior probability for every (user, item) cell."""

    variant = "fixed"

    def __init__(self, mu: float = 0.1):
        self.mu = check_probability("mu", mu)

    def mu_for_users(self, users: np.ndarray):
        """Prior probabilities for a block of user rows; broadcastable to (B, I)."""
        return self.mu

    def mu_for_items(self, items: np.ndarray):
        """Prior probabilities for a block of item rows; broadcastable to (B, U)."""
        return self.mu


class PerItemExposure:
    """Per-item prior probability with a shared conjugate pseudo-count prior.

    mu[i] is the prior probability that any user was exposed to item i, so it
    tracks item popularity. alpha1/alpha2 are the pseudo-counts of exposed and
    unexposed users shaping the update.
    """

    variant = "per_item"

    def __init__(self, mu: np.ndarray, alpha1: float = 1.0, alpha2: float = 1.0):
        self.alpha1 = check_positive("alpha1", alpha1)
        self.alpha2 = check_positive("alpha2", alpha2)
        mu = np.asarray(mu, dtype=np.float64)
        if mu.ndim != 1:
            raise ConfigurationError("per-item mu must be a vector")
        self.mu = _clamp(mu)

    def mu_for_users(self, users: np.ndarray):
        return self.mu[None, :]

    def mu_for_items(self, items: np.ndarray):
        return self.mu[items][:, None]


def update_per_item(prior: PerItemExposure, exposure_sums: np.ndarray, n_users: int) -> np.ndarray:
    """Replace each mu[i] with its conjugate posterior mode.

    exposure_sums[i] is the expected number of users exposed to item i under
    the current posterior (sum over users of p_ui). The update is

        mu[i] <- (alpha1 + sum_p - 1) / (alpha1 + alpha2 + n_users - 2)

    clamped away from 0 and 1, and is exact: with the posterior fixed it is
    the maximizing value of the expected complete-data objective.
    """
    sums = np.asarray(exposure_sums, dtype=np.float64)
    if sums.shape != prior.mu.shape:
        raise ConfigurationError(
            f"exposure_sums has shape {sums.shape}, expected {prior.mu.shape}"
        )
    denom = prior.alpha1 + prior.alpha2 + n_users - 2.0
    if denom <= 0:
        raise ConfigurationError(
            "degenerate per-item update: alpha1 + alpha2 + n_users must exceed 2"
        )
    prior.mu = _clamp((prior.alpha1 + sums - 1.0) / denom)
    return prior.mu


class CovariateExposure:
    """Exposure probability driven by item covariates through a per-user model.

    mu_ui = sigmoid(psi_u . x_i + gamma_u), where x_i is the item's covariate
    row, psi_u the user's weights over covariates, and gamma_u an optional
    per-user intercept absorbing overall activity (enabled by default,
    disabled with user_bias=False).

    Args:
        covariates: (I, L) matrix of item covariate rows.
        psi: (U, L) initial weights.
        gamma: (U,) initial intercepts.
        step_size: constant ascent step for the minibatch update.
        batch_size: items per gradient step.
        epochs_per_m_step: passes over the items within one update call.
        user_bias: include gamma in the model and its update.
    """

    variant = "covariate"

    def __init__(
        self,
        covariates: np.ndarray,
        psi: np.ndarray,
        gamma: np.ndarray,
        step_size: float = 0.5,
        batch_size: int = 10,
        epochs_per_m_step: int = 10,
        user_bias: bool = True,
    ):
        self.covariates = np.asarray(covariates, dtype=np.float64)
        self.psi = np.asarray(psi, dtype=np.float64)
        self.gamma = np.asarray(gamma, dtype=np.float64)
        if self.covariates.ndim != 2:
            raise ConfigurationError("covariates must be a 2-d array")
        if self.psi.shape != (self.gamma.shape[0], self.covariates.shape[1]):
            raise ConfigurationError(
                f"psi shape {self.psi.shape} does not match "
                f"{self.gamma.shape[0]} users x {self.covariates.shape[1]} covariates"
            )
        self.step_size = check_positive("step_size", step_size)
        self.batch_size = check_count("batch_size", batch_size)
        self.epochs_per_m_step = check_count("epochs_per_m_step", epochs_per_m_step)
        self.user_bias = bool(user_bias)

    def mu_for_users(self, users: np.ndarray) -> np.ndarray:
        """(B, I) prior probabilities for a block of user rows."""
        act = self.psi[users] @ self.covariates.T + self.gamma[users][:, None]
        return _clamp(expit(act))

    def mu_for_items(self, items: np.ndarray) -> np.ndarray:
        """(B, U) prior probabilities for a block of item rows."""
        act = self.covariates[items] @ self.psi.T + self.gamma[None, :]
        return _clamp(expit(act))


def psi_gradient(
    prior: CovariateExposure, u: int, items: np.ndarray, p_values: np.ndarray
) -> np.ndarray:
    """Ascent direction for one user's covariate weights on a batch of items.

    Averages (p_ui - sigmoid(psi_u . x_i + gamma_u)) x_i over the batch; when
    the user bias is enabled the intercept coordinate (constant covariate 1)
    is appended, giving a vector of length L + 1.
    """
    items = np.asarray(items, dtype=np.intp)
    p = np.asarray(p_values, dtype=np.float64)
    x = prior.covariates[items]
    resid = p - expit(x @ prior.psi[u] + prior.gamma[u])
    g = resid @ x / len(items)
    if prior.user_bias:
        return np.concatenate([g, [resid.mean()]])
    return g


def update_covariate(prior: CovariateExposure, posterior_block, rng) -> None:
    """One partial ascent pass for all users' covariate weights.

    posterior_block(item_indices) must return the (U, B) matrix of current
    exposure posteriors for those items, held fixed while the weights move
    (callers snapshot the prior before mutating it). Runs
    epochs_per_m_step shuffled passes over the items in batches of
    batch_size, taking one averaged gradient step per batch; a short final
    batch is averaged by its own size.
    """
    n_items = prior.covariates.shape[0]
    step = prior.step_size
    for _ in range(prior.epochs_per_m_step):
        order = rng.permutation(n_items)
        for lo in range(0, n_items, prior.batch_size):
            batch = order[lo : lo + prior.batch_size]
            x = prior.covariates[batch]
            p = posterior_block(batch)
            resid = p - expit(prior.psi @ x.T + prior.gamma[:, None])
            prior.psi += step * (resid @ x) / batch.size
            if prior.user_bias:
                prior.gamma += step * resid.mean(axis=1)


class ConstantConfidence:
    """Degenerate exposure: fixed confidence weights instead of a posterior.

    Interacted cells get weight c1, the rest c0. Plugging this into the
    factor updates yields the classic weighted-factorization baseline. Equal
    weights are allowed here (c0 = c1 = 1 recovers an unweighted Gaussian
    model); the baseline's public config enforces c1 > c0.
    """

    variant = "constant"

    def __init__(self, c0: float = 0.01, c1: float = 1.0):
        self.c0 = check_nonnegative("c0", c0)
        self.c1 = check_positive("c1", c1)

    def mu_for_users(self, users: np.ndarray):
        return 1.0

    def mu_for_items(self, items: np.ndarray):
        return 1.0


def initialize_exposure(
    variant: str,
    n_users: int,
    n_items: int,
    rng: np.random.Generator,
    mu: float = 0.1,
    alpha1: float = 1.0,
    alpha2: float = 1.0,
    covariates: np.ndarray | None = None,
    init_scale: float = 0.01,
    step_size: float = 0.5,
    batch_size: int = 10,
    epochs_per_m_step: int = 10,
    user_bias: bool = True,
    c0: float = 0.01,
    c1: float = 1.0,
):
    """Build a freshly initialized exposure model of the requested variant.

    Random pieces (per-item probabilities, covariate weights) are drawn from
    rng, so the caller controls determinism.
    """
    if variant == "fixed":
        return FixedExposure(mu)
    if variant == "per_item":
        init = rng.uniform(0.01, 0.99, size=n_items)
        return PerItemExposure(init, alpha1, alpha2)
    if variant == "covariate":
        if covariates is None:
            raise ConfigurationError("covariate exposure requires a covariate matrix")
        covariates = np.asarray(covariates, dtype=np.float64)
        if covariates.shape[0] != n_items:
            raise ConfigurationError(
                f"covariates cover {covariates.shape[0]} items, expected {n_items}"
            )
        n_cov = covariates.shape[1]
        psi = rng.normal(0.0, init_scale, size=(n_users, n_cov))
        gamma = rng.normal(0.0, init_scale, size=n_users) if user_bias else np.zeros(n_users)
        return CovariateExposure(
            covariates, psi, gamma, step_size, batch_size, epochs_per_m_step, user_bias
        )
    if variant == "constant":
        return ConstantConfidence(c0, c1)
    raise ConfigurationError(f"unknown exposure variant {variant!r}")
