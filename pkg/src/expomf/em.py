"""Expectation-maximization training for exposure matrix factorization.

Each iteration runs three conditional maximizations, refreshing the exposure
posterior before each one: user factors against the frozen item factors, item
factors against the fresh user factors, then the exposure model's own update.
With exact prior updates (fixed or per-item variants) every step increases
the marginal log posterior, which the tests lean on.

The posterior over the hidden exposure indicator is never materialized as a
full users-by-items matrix; it is recomputed on the fly for one block of rows
at a time. Row updates read only frozen snapshots and write disjoint rows, so
they can run on any number of threads without changing a single bit of the
result.
"""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import scipy.linalg
from scipy.special import expit

from . import exposure as exp
from .data import InteractionMatrix, SplitDataset
from .errors import ConfigurationError, NumericalError
from .state import (
    ModelState,
    default_prediction_rule,
    predict_score,
    score_items,
)
from .validation import check_choice, check_count, check_finite_array

_logger = logging.getLogger(__name__)

_LOG_2PI = float(np.log(2.0 * np.pi))

_BLOCK_SIZE = 128

STOP_METRICS = ("validation_ndcg_at_100", "marginal_log_posterior")


@dataclass
class TrainConfig:
    """Loop length and stopping rule for :func:`train`.

    stop_metric "validation_ndcg_at_100" ranks the validation items each
    iteration (the default, and what real datasets should use);
    "marginal_log_posterior" monitors the training objective instead, which
    carries the monotonicity guarantee and is what the test suite uses.
    Training stops after `patience` consecutive iterations without
    improvement and returns the best state seen.
    """

    max_iters: int = 20
    stop_metric: str = "validation_ndcg_at_100"
    patience: int = 3
    ndcg_truncation: int = 100

    def __post_init__(self):
        check_count("max_iters", self.max_iters)
        check_count("patience", self.patience)
        check_count("ndcg_truncation", self.ndcg_truncation)
        check_choice("stop_metric", self.stop_metric, STOP_METRICS)


def gaussian_log_density(x, mean, precision):
    """log N(x | mean, 1/precision), elementwise."""
    return 0.5 * (np.log(precision) - _LOG_2PI) - 0.5 * precision * np.square(x - mean)


def exposure_posterior(predicted, mu, lambda_y):
    """Posterior probability that an unclicked cell was exposed.

    predicted is the current factor prediction, mu the prior exposure
    probability, lambda_y the observation precision. Computed in log space
    and combined with logaddexp, so large precisions neither overflow nor
    lose the tiny-probability tail. Accepts scalars or broadcastable arrays.
    """
    log_density = 0.5 * (np.log(lambda_y) - _LOG_2PI) - 0.5 * lambda_y * np.square(predicted)
    log_num = np.log(mu) + log_density
    log_den = np.logaddexp(log_num, np.log1p(-mu))
    return np.exp(log_num - log_den)


def e_step(theta_u, beta_i, mu_ui, lambda_y):
    """Exposure posterior for one unclicked (user, item) pair."""
    predicted = np.dot(np.asarray(theta_u), np.asarray(beta_i))
    return exposure_posterior(predicted, mu_ui, lambda_y)


def _solve_spd(gram: np.ndarray, rhs: np.ndarray, label: str) -> np.ndarray:
    """Cholesky solve with a single tiny-jitter retry."""
    try:
        factor = scipy.linalg.cho_factor(gram, lower=True, check_finite=False)
        return scipy.linalg.cho_solve(factor, rhs, check_finite=False)
    except np.linalg.LinAlgError:
        pass
    jittered = gram + 1e-10 * np.eye(gram.shape[0])
    try:
        factor = scipy.linalg.cho_factor(jittered, lower=True, check_finite=False)
        return scipy.linalg.cho_solve(factor, rhs, check_finite=False)
    except np.linalg.LinAlgError as err:
        raise NumericalError(f"factor solve failed for {label}") from err


def _posterior_block(exposure_model, pred, mu_block, lambda_y):
    """Unclicked-cell weights for a block, plus the weight clicked cells get."""
    if isinstance(exposure_model, exp.ConstantConfidence):
        return np.full(pred.shape, exposure_model.c0), exposure_model.c1
    return exposure_posterior(pred, mu_block, lambda_y), 1.0


def _run_blocks(n_rows: int, n_jobs: int, work) -> None:
    """Apply work(lo, hi) over fixed-size row blocks, optionally on threads.

    Block boundaries depend only on the row count, and each block writes
    disjoint rows, so the result is identical for any n_jobs.
    """
    bounds = [(lo, min(lo + _BLOCK_SIZE, n_rows)) for lo in range(0, n_rows, _BLOCK_SIZE)]
    if n_jobs <= 1 or len(bounds) == 1:
        for lo, hi in bounds:
            work(lo, hi)
        return
    with ThreadPoolExecutor(max_workers=n_jobs) as pool:
        for future in [pool.submit(work, lo, hi) for lo, hi in bounds]:
            future.result()


def _update_side(
    own: np.ndarray,
    other: np.ndarray,
    rows: "scipy.sparse.csr_matrix",
    mu_block_fn,
    exposure_model,
    lambda_y: float,
    lambda_reg: float,
    n_jobs: int,
    side: str,
) -> np.ndarray:
    """Solve the per-row normal equations for one side of the factorization.

    own/other are the factor matrices for the side being updated and the
    frozen opposite side; rows is the interaction pattern with the updated
    side on the row axis. For each row the posterior weight of every
    opposite-side entry is computed on the fly, the weighted Gram matrix is
    accumulated over all of them (no sparsity shortcut exists here, the
    weights are dense), and a Cholesky solve yields the new row.
    """
    n_rows, k = own.shape
    out = np.empty_like(own)
    eye_step = k + 1

    def work(lo: int, hi: int) -> None:
        block = np.arange(lo, hi)
        pred = own[lo:hi] @ other.T
        weights, clicked_weight = _posterior_block(
            exposure_model, pred, mu_block_fn(block), lambda_y
        )
        sub = rows[lo:hi]
        nz_r, nz_c = sub.nonzero()
        weights[nz_r, nz_c] = clicked_weight
        for j in range(lo, hi):
            w = weights[j - lo]
            gram = (other * w[:, None]).T @ other
            gram *= lambda_y
            gram.flat[::eye_step] += lambda_reg
            cols = rows.indices[rows.indptr[j] : rows.indptr[j + 1]]
            vals = rows.data[rows.indptr[j] : rows.indptr[j + 1]]
            if cols.size:
                rhs = (lambda_y * clicked_weight) * (vals @ other[cols])
            else:
                rhs = np.zeros(k)
            out[j] = _solve_spd(gram, rhs, f"{side} {j}")

    _run_blocks(n_rows, n_jobs, work)
    return check_finite_array(f"{side} factors", out)


def update_user_factors(state: ModelState, Y: InteractionMatrix, n_jobs: int = 1) -> np.ndarray:
    """New user-factor matrix given the current state (state is not mutated).

    Each user's posterior weights come from the current prediction and prior,
    with clicked cells pinned to weight 1 (exposure is certain there); the
    row then solves a weighted ridge system against every item factor.
    """
    return _update_side(
        own=state.theta,
        other=state.beta,
        rows=Y.csr,
        mu_block_fn=lambda block: state.exposure.mu_for_users(block),
        exposure_model=state.exposure,
        lambda_y=state.hyper.lambda_y,
        lambda_reg=state.hyper.lambda_theta,
        n_jobs=n_jobs,
        side="user",
    )


def update_item_factors(state: ModelState, Y: InteractionMatrix, n_jobs: int = 1) -> np.ndarray:
    """Mirror of :func:`update_user_factors` over items."""
    return _update_side(
        own=state.beta,
        other=state.theta,
        rows=Y.csc.T.tocsr(),
        mu_block_fn=lambda block: state.exposure.mu_for_items(block),
        exposure_model=state.exposure,
        lambda_y=state.hyper.lambda_y,
        lambda_reg=state.hyper.lambda_beta,
        n_jobs=n_jobs,
        side="item",
    )


def expected_exposure_sums(state: ModelState, Y: InteractionMatrix, n_jobs: int = 1) -> np.ndarray:
    """Per-item sums of the exposure posterior over users (clicked cells = 1)."""
    n_items = state.n_items
    sums = np.empty(n_items)
    rows = Y.csc.T.tocsr()
    theta, beta = state.theta, state.beta
    lam_y = state.hyper.lambda_y

    def work(lo: int, hi: int) -> None:
        block = np.arange(lo, hi)
        pred = beta[lo:hi] @ theta.T
        weights, clicked_weight = _posterior_block(
            state.exposure, pred, state.exposure.mu_for_items(block), lam_y
        )
        sub = rows[lo:hi]
        nz_r, nz_c = sub.nonzero()
        weights[nz_r, nz_c] = clicked_weight
        sums[lo:hi] = weights.sum(axis=1)

    _run_blocks(n_items, n_jobs, work)
    return sums


def marginal_log_posterior(state: ModelState, Y: InteractionMatrix) -> float:
    """Log joint of the data and factors with the exposure summed out.

    Clicked cells contribute log mu + the Gaussian log density of their
    value; unclicked cells contribute the log of the exposure mixture; the
    factor matrices add their Gaussian log priors. Touches every cell, so it
    is a reference quantity for small instances, not a large-scale one.
    """
    h = state.hyper
    theta, beta = state.theta, state.beta
    lam_y = h.lambda_y
    total = 0.0
    for lo in range(0, state.n_users, _BLOCK_SIZE):
        hi = min(lo + _BLOCK_SIZE, state.n_users)
        block = np.arange(lo, hi)
        pred = theta[lo:hi] @ beta.T
        mu = np.asarray(state.exposure.mu_for_users(block), dtype=np.float64)
        log_density0 = gaussian_log_density(0.0, pred, lam_y)
        log_num = np.log(mu) + log_density0
        unclicked_terms = np.logaddexp(log_num, np.log1p(-mu))
        total += float(unclicked_terms.sum())
        sub = Y.csr[lo:hi].tocoo()
        if sub.nnz:
            nz_r, nz_c, vals = sub.row, sub.col, sub.data
            mu_at = np.broadcast_to(mu, pred.shape)[nz_r, nz_c]
            clicked = np.log(mu_at) + gaussian_log_density(vals, pred[nz_r, nz_c], lam_y)
            total += float(clicked.sum()) - float(unclicked_terms[nz_r, nz_c].sum())
    total += 0.5 * theta.size * (np.log(h.lambda_theta) - _LOG_2PI)
    total -= 0.5 * h.lambda_theta * float(np.square(theta).sum())
    total += 0.5 * beta.size * (np.log(h.lambda_beta) - _LOG_2PI)
    total -= 0.5 * h.lambda_beta * float(np.square(beta).sum())
    return total


def _update_exposure_model(state: ModelState, Y: InteractionMatrix, sgd_rng, n_jobs: int) -> None:
    """Dispatch the M-step of the exposure model (fixed/constant: nothing)."""
    model = state.exposure
    if isinstance(model, exp.PerItemExposure):
        sums = expected_exposure_sums(state, Y, n_jobs)
        exp.update_per_item(model, sums, state.n_users)
    elif isinstance(model, exp.CovariateExposure):
        psi0 = model.psi.copy()
        gamma0 = model.gamma.copy()
        theta, beta = state.theta, state.beta
        lam_y = state.hyper.lambda_y
        rows = Y.csc.T.tocsr()

        def posterior_block(items: np.ndarray) -> np.ndarray:
            act = psi0 @ model.covariates[items].T + gamma0[:, None]
            mu0 = np.clip(expit(act), exp.EPS, 1.0 - exp.EPS)
            p = exposure_posterior(theta @ beta[items].T, mu0, lam_y)
            sub = rows[items]
            nz_r, nz_c = sub.nonzero()
            p[nz_c, nz_r] = 1.0
            return p

        exp.update_covariate(model, posterior_block, sgd_rng)


def validation_ndcg(state: ModelState, data: SplitDataset, k: int = 100) -> float:
    """Mean NDCG@k of validation items, ranking all non-train items per user.

    Users without validation items are skipped; returns nan if nobody is
    evaluable (the trainer then treats the metric as never improving).
    """
    from .metrics import ndcg_at_k, rank_from_scores

    total = 0.0
    evaluated = 0
    for u in range(state.n_users):
        held = data.validation.row_items(u)
        if held.size == 0:
            continue
        ranked = rank_from_scores(u, score_items(state, u), exclude=data.train.row_items(u))
        total += ndcg_at_k(ranked, held, k)
        evaluated += 1
    return total / evaluated if evaluated else float("nan")


def train(
    state: ModelState,
    data: SplitDataset,
    config: TrainConfig,
    n_jobs: int = 1,
) -> tuple[ModelState, list[dict]]:
    """Run the EM loop and return the best state plus per-iteration records.

    The input state is not mutated. Each record carries the iteration number,
    marginal_log_posterior (when it is the stopping metric),
    validation_ndcg_at_100 (when a validation split is present or it is the
    stopping metric), and wall-clock seconds. Stops early after
    config.patience iterations without improvement; the returned state is the
    best seen under the stopping metric.
    """
    if state.n_users != data.n_users or state.n_items != data.n_items:
        raise ConfigurationError(
            f"state is {state.n_users}x{state.n_items}, data is {data.n_users}x{data.n_items}"
        )
    check_count("n_jobs", n_jobs)
    if config.stop_metric == "validation_ndcg_at_100" and data.validation.nnz == 0:
        raise ConfigurationError(
            "stop_metric validation_ndcg_at_100 needs a nonempty validation split; "
            "use marginal_log_posterior or provide validation data"
        )
    current = state.copy()
    sgd_rng = np.random.default_rng(np.random.SeedSequence(state.hyper.seed, spawn_key=(1,)))
    want_ndcg = (
        config.stop_metric == "validation_ndcg_at_100" or data.validation.nnz > 0
    )
    records: list[dict] = []
    best_state = current.copy()
    best_metric = -np.inf
    bad_streak = 0

    for iteration in range(1, config.max_iters + 1):
        started = time.perf_counter()
        try:
            current.theta = update_user_factors(current, data.train, n_jobs)
            current.beta = update_item_factors(current, data.train, n_jobs)
            _update_exposure_model(current, data.train, sgd_rng, n_jobs)
        except NumericalError as err:
            raise NumericalError(f"iteration {iteration}: {err}") from err
        current.iteration = iteration

        log_post = (
            float(marginal_log_posterior(current, data.train))
            if config.stop_metric == "marginal_log_posterior"
            else None
        )
        ndcg = (
            float(validation_ndcg(current, data, config.ndcg_truncation))
            if want_ndcg
            else None
        )
        metric = log_post if config.stop_metric == "marginal_log_posterior" else ndcg
        records.append(
            {
                "iteration": iteration,
                "marginal_log_posterior": log_post,
                "validation_ndcg_at_100": ndcg,
                "seconds": time.perf_counter() - started,
            }
        )
        _logger.debug("iteration %d: metric %s", iteration, metric)

        if metric is not None and np.isfinite(metric) and metric > best_metric:
            best_metric = metric
            best_state = current.copy()
            bad_streak = 0
        else:
            bad_streak += 1
            if bad_streak >= config.patience:
                break

    if not np.isfinite(best_metric):
        # Nothing ever scored (e.g. empty validation split): final state wins.
        best_state = current.copy()
    return best_state, records


__all__ = [
    "TrainConfig",
    "STOP_METRICS",
    "e_step",
    "exposure_posterior",
    "gaussian_log_density",
    "update_user_factors",
    "update_item_factors",
    "expected_exposure_sums",
    "marginal_log_posterior",
    "train",
    "validation_ndcg",
    "predict_score",
    "score_items",
    "default_prediction_rule",
]
