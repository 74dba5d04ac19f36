"""Estimator-style front end over the training engine.

These classes follow the scikit-learn conventions (constructor stores
hyperparameters verbatim, ``fit`` learns state into trailing-underscore
attributes, ``get_params``/``set_params`` work for grid search). Anything
beyond fitting delegates to the functional layer, which is also usable
directly.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
from sklearn.base import BaseEstimator

from . import em, metrics
from .data import CovariateMatrix, InteractionMatrix, SplitDataset
from .errors import ConfigurationError
from .state import (
    Hyperparameters,
    ModelState,
    init_model,
    load_checkpoint,
    save_checkpoint,
    score_items,
)
from .validation import check_is_fitted
from .wmf import WmfConfig, initial_state as wmf_initial_state

_EXPOSURE_VARIANTS = ("fixed", "per_item", "covariate")


def _empty_like(matrix: InteractionMatrix) -> InteractionMatrix:
    return InteractionMatrix.from_triples(
        [], matrix.n_users, matrix.n_items, list(matrix.user_ids), list(matrix.item_ids)
    )


def _as_split(X, validation) -> SplitDataset:
    """Accept a SplitDataset, an InteractionMatrix, or any 0/positive matrix."""
    if isinstance(X, SplitDataset):
        if validation is not None:
            raise ConfigurationError(
                "pass validation data inside the SplitDataset, not separately"
            )
        return X
    if not isinstance(X, InteractionMatrix):
        dense = sp.csr_matrix(X) if not sp.issparse(X) else X.tocsr()
        coo = dense.tocoo()
        n_users, n_items = dense.shape
        triples = list(zip(coo.row.tolist(), coo.col.tolist(), coo.data.tolist()))
        X = InteractionMatrix.from_triples(
            triples,
            n_users,
            n_items,
            [f"u{j}" for j in range(n_users)],
            [f"i{j}" for j in range(n_items)],
        )
    if validation is None:
        validation = _empty_like(X)
    elif not isinstance(validation, InteractionMatrix):
        raise ConfigurationError("validation must be an InteractionMatrix")
    if (validation.n_users, validation.n_items) != (X.n_users, X.n_items):
        raise ConfigurationError("validation dimensions must match the training matrix")
    return SplitDataset(train=X, validation=validation, test=_empty_like(X))


class _FittedModelMixin:
    """Prediction and persistence shared by the fitted estimators."""

    state_: ModelState

    def _check_fitted(self):
        check_is_fitted(self, "state_")

    def score_items(self, user: int, rule: str | None = None) -> np.ndarray:
        self._check_fitted()
        return score_items(self.state_, user, rule=rule)

    def predict_score(self, user: int, item: int, rule: str | None = None) -> float:
        self._check_fitted()
        return em.predict_score(self.state_, user, item, rule=rule)

    def rank_items(self, user: int, exclude=(), rule: str | None = None):
        self._check_fitted()
        return metrics.rank_items(self.state_, user, exclude=exclude, rule=rule)

    def evaluate(self, data: SplitDataset, **kwargs) -> metrics.EvalReport:
        self._check_fitted()
        return metrics.evaluate(self.state_, data, **kwargs)

    def save(self, path) -> None:
        self._check_fitted()
        save_checkpoint(self.state_, path)

    def _adopt(self, state: ModelState, history):
        self.state_ = state
        self.user_factors_ = state.theta
        self.item_factors_ = state.beta
        self.exposure_ = state.exposure
        self.n_users_ = state.n_users
        self.n_items_ = state.n_items
        self.history_ = history
        return self


class ExpoMF(BaseEstimator, _FittedModelMixin):
    """Matrix factorization with an explicit exposure model.

    Parameters mirror the functional layer. exposure selects the prior
    ("fixed", "per_item", or "covariate"); the covariate variant needs a
    CovariateMatrix (or plain array with rows summing to one). stop_metric
    defaults to validation NDCG when validation data is present and to the
    training objective otherwise.

    >>> model = ExpoMF(n_factors=8, exposure="per_item", max_iter=5)
    >>> model.fit(clicks)                                   # doctest: +SKIP
    """

    def __init__(
        self,
        n_factors: int = 100,
        exposure: str = "per_item",
        mu: float = 0.1,
        alpha1: float = 1.0,
        alpha2: float = 1.0,
        lambda_theta: float = 1e-2,
        lambda_beta: float = 1e-2,
        lambda_y: float = 1.0,
        init_scale: float = 0.01,
        covariates=None,
        user_bias: bool = True,
        step_size: float = 0.5,
        batch_size: int = 10,
        epochs_per_m_step: int = 10,
        max_iter: int = 20,
        stop_metric: str | None = None,
        patience: int = 3,
        ndcg_truncation: int = 100,
        random_state: int = 0,
        n_jobs: int = 1,
    ):
        self.n_factors = n_factors
        self.exposure = exposure
        self.mu = mu
        self.alpha1 = alpha1
        self.alpha2 = alpha2
        self.lambda_theta = lambda_theta
        self.lambda_beta = lambda_beta
        self.lambda_y = lambda_y
        self.init_scale = init_scale
        self.covariates = covariates
        self.user_bias = user_bias
        self.step_size = step_size
        self.batch_size = batch_size
        self.epochs_per_m_step = epochs_per_m_step
        self.max_iter = max_iter
        self.stop_metric = stop_metric
        self.patience = patience
        self.ndcg_truncation = ndcg_truncation
        self.random_state = random_state
        self.n_jobs = n_jobs

    def _covariate_values(self, data: SplitDataset):
        cov = self.covariates
        if cov is None:
            raise ConfigurationError(
                "exposure='covariate' needs the covariates parameter"
            )
        if isinstance(cov, CovariateMatrix):
            if list(cov.item_ids) != list(data.train.item_ids):
                raise ConfigurationError(
                    "covariate item ids do not match the training matrix"
                )
            return cov.values
        return np.asarray(cov, dtype=np.float64)

    def fit(self, X, validation: InteractionMatrix | None = None):
        data = _as_split(X, validation)
        if self.exposure not in _EXPOSURE_VARIANTS:
            raise ConfigurationError(
                f"exposure must be one of {_EXPOSURE_VARIANTS}, got {self.exposure!r}"
            )
        hyper = Hyperparameters(
            n_factors=self.n_factors,
            lambda_theta=self.lambda_theta,
            lambda_beta=self.lambda_beta,
            lambda_y=self.lambda_y,
            alpha1=self.alpha1,
            alpha2=self.alpha2,
            init_scale=self.init_scale,
            seed=self.random_state,
        )
        cov = self._covariate_values(data) if self.exposure == "covariate" else None
        state = init_model(
            data.train.n_users,
            data.train.n_items,
            hyper,
            variant=self.exposure,
            mu=self.mu,
            covariates=cov,
            step_size=self.step_size,
            batch_size=self.batch_size,
            epochs_per_m_step=self.epochs_per_m_step,
            user_bias=self.user_bias,
        )
        stop = self.stop_metric
        if stop is None:
            stop = (
                "validation_ndcg_at_100"
                if data.validation.nnz > 0
                else "marginal_log_posterior"
            )
        config = em.TrainConfig(
            max_iters=self.max_iter,
            stop_metric=stop,
            patience=self.patience,
            ndcg_truncation=self.ndcg_truncation,
        )
        best, records = em.train(state, data, config, n_jobs=self.n_jobs)
        return self._adopt(best, records)

    @classmethod
    def from_checkpoint(cls, path, covariates=None) -> "ExpoMF":
        """Rebuild a fitted estimator from a saved checkpoint."""
        state = load_checkpoint(
            path,
            covariates=covariates.values
            if isinstance(covariates, CovariateMatrix)
            else covariates,
        )
        variant = state.exposure.variant
        if variant == "constant":
            raise ConfigurationError(
                "checkpoint holds a constant-confidence model; use WMF.from_checkpoint"
            )
        model = cls(
            n_factors=state.hyper.n_factors,
            exposure=variant,
            lambda_theta=state.hyper.lambda_theta,
            lambda_beta=state.hyper.lambda_beta,
            lambda_y=state.hyper.lambda_y,
            alpha1=state.hyper.alpha1,
            alpha2=state.hyper.alpha2,
            init_scale=state.hyper.init_scale,
            random_state=state.hyper.seed,
        )
        return model._adopt(state, [])


class WMF(BaseEstimator, _FittedModelMixin):
    """Weighted matrix factorization baseline with constant confidence.

    Every unclicked cell carries weight c0 and every click c1. Without
    validation data it runs a fixed number of iterations; with validation
    it early-stops on NDCG like ExpoMF.
    """

    def __init__(
        self,
        n_factors: int = 100,
        c0: float = 0.01,
        c1: float = 1.0,
        lambda_theta: float = 1e-2,
        lambda_beta: float = 1e-2,
        init_scale: float = 0.01,
        max_iter: int = 20,
        patience: int = 3,
        ndcg_truncation: int = 100,
        random_state: int = 0,
        n_jobs: int = 1,
    ):
        self.n_factors = n_factors
        self.c0 = c0
        self.c1 = c1
        self.lambda_theta = lambda_theta
        self.lambda_beta = lambda_beta
        self.init_scale = init_scale
        self.max_iter = max_iter
        self.patience = patience
        self.ndcg_truncation = ndcg_truncation
        self.random_state = random_state
        self.n_jobs = n_jobs

    def fit(self, X, validation: InteractionMatrix | None = None):
        data = _as_split(X, validation)
        config = WmfConfig(
            n_factors=self.n_factors,
            lambda_theta=self.lambda_theta,
            lambda_beta=self.lambda_beta,
            c0=self.c0,
            c1=self.c1,
            init_scale=self.init_scale,
            seed=self.random_state,
        )
        state = wmf_initial_state(data.train, config)
        if data.validation.nnz > 0:
            train_config = em.TrainConfig(
                max_iters=self.max_iter,
                stop_metric="validation_ndcg_at_100",
                patience=self.patience,
                ndcg_truncation=self.ndcg_truncation,
            )
            best, records = em.train(state, data, train_config, n_jobs=self.n_jobs)
            return self._adopt(best, records)
        records = []
        for iteration in range(1, self.max_iter + 1):
            em.update_user_factors(state, data.train, n_jobs=self.n_jobs)
            em.update_item_factors(state, data.train, n_jobs=self.n_jobs)
            state.iteration = iteration
            records.append({"iteration": iteration})
        return self._adopt(state, records)

    @classmethod
    def from_checkpoint(cls, path) -> "WMF":
        state = load_checkpoint(path)
        if state.exposure.variant != "constant":
            raise ConfigurationError(
                "checkpoint holds an exposure model; use ExpoMF.from_checkpoint"
            )
        model = cls(
            n_factors=state.hyper.n_factors,
            c0=state.exposure.c0,
            c1=state.exposure.c1,
            lambda_theta=state.hyper.lambda_theta,
            lambda_beta=state.hyper.lambda_beta,
            init_scale=state.hyper.init_scale,
            random_state=state.hyper.seed,
        )
        return model._adopt(state, [])
