"""Weighted matrix factorization baseline.

The classic implicit-feedback factorizer: alternating ridge solves where
clicked cells carry confidence c1 and unclicked cells a smaller constant c0.
It is the degenerate case of the exposure model in which the posterior weight
is a constant instead of being inferred, so the trainer here delegates to the
same factor-update code with a constant-weight accessor plugged in. That
makes the special-case equivalence hold by construction instead of by
parallel maintenance of two solvers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import em
from .data import InteractionMatrix, SplitDataset
from .errors import ConfigurationError
from .state import Hyperparameters, ModelState, init_model
from .validation import check_count, check_nonnegative, check_positive, check_seed


@dataclass
class WmfConfig:
    """Latent dimension, regularizers, confidence weights, and loop length."""

    n_factors: int = 100
    lambda_theta: float = 1e-2
    lambda_beta: float = 1e-2
    c0: float = 0.01
    c1: float = 1.0
    max_iters: int = 20
    seed: int = 0
    init_scale: float = 0.01

    def __post_init__(self):
        check_count("n_factors", self.n_factors)
        check_positive("lambda_theta", self.lambda_theta)
        check_positive("lambda_beta", self.lambda_beta)
        check_nonnegative("c0", self.c0)
        check_positive("c1", self.c1)
        if self.c1 <= self.c0:
            raise ConfigurationError(
                f"confidence weights need c1 > c0, got c0={self.c0}, c1={self.c1}"
            )
        check_count("max_iters", self.max_iters)
        check_seed("seed", self.seed)
        check_positive("init_scale", self.init_scale)


def initial_state(Y: InteractionMatrix, config: WmfConfig) -> ModelState:
    """Seeded random state with the constant-confidence accessor attached."""
    hyper = Hyperparameters(
        n_factors=config.n_factors,
        lambda_theta=config.lambda_theta,
        lambda_beta=config.lambda_beta,
        lambda_y=1.0,
        init_scale=config.init_scale,
        seed=config.seed,
    )
    return init_model(
        Y.n_users, Y.n_items, hyper, variant="constant", c0=config.c0, c1=config.c1
    )


def wmf_train(
    Y: InteractionMatrix,
    config: WmfConfig,
    validation: InteractionMatrix | None = None,
    patience: int = 3,
    n_jobs: int = 1,
) -> tuple[np.ndarray, np.ndarray]:
    """Alternating confidence-weighted ridge solves; returns (theta, beta).

    Runs a fixed max_iters when no validation matrix is given; with one, uses
    the same NDCG-based early stopping as the exposure trainer and returns
    the best factors seen.
    """
    state = initial_state(Y, config)
    if validation is None:
        for _ in range(config.max_iters):
            state.theta = em.update_user_factors(state, Y, n_jobs)
            state.beta = em.update_item_factors(state, Y, n_jobs)
            state.iteration += 1
        return state.theta, state.beta
    import scipy.sparse as sp

    empty = InteractionMatrix(
        sp.csr_matrix(Y.csr.shape, dtype=np.float64), Y.user_ids, Y.item_ids
    )
    data = SplitDataset(train=Y, validation=validation, test=empty)
    train_config = em.TrainConfig(
        max_iters=config.max_iters,
        stop_metric="validation_ndcg_at_100",
        patience=patience,
    )
    best, _ = em.train(state, data, train_config, n_jobs=n_jobs)
    return best.theta, best.beta
