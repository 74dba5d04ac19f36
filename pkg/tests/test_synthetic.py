import numpy as np
import pytest

from expomf.data import split_interactions
from expomf.errors import ConfigurationError
from expomf.exposure import PerItemExposure
from expomf.metrics import ndcg_at_k, rank_from_scores
from expomf.state import Hyperparameters, ModelState, init_model
from expomf.synthetic import (
    GroundTruth,
    SyntheticSpec,
    clustered_exposure_truth,
    load_ground_truth,
    recovery_report,
    sample_dataset,
    save_ground_truth,
)


def spec_with(**overrides):
    base = dict(n_users=50, n_items=40, n_factors=3, seed=0)
    base.update(overrides)
    return SyntheticSpec(**base)


def truth_state(truth: GroundTruth, lambda_y=1.0) -> ModelState:
    n_items = truth.beta.shape[0]
    mu = np.broadcast_to(np.asarray(truth.mu, dtype=np.float64), (n_items,)).copy()
    return ModelState(
        theta=truth.theta,
        beta=truth.beta,
        exposure=PerItemExposure(np.clip(mu, 1e-8, 1 - 1e-8)),
        hyper=Hyperparameters(n_factors=truth.theta.shape[1], lambda_y=lambda_y),
        iteration=1,
    )


def test_zero_exposure_gives_empty_matrix():
    matrix, truth = sample_dataset(spec_with(mu=0.0))
    assert matrix.nnz == 0
    assert not truth.exposed.any()


def test_full_exposure_noiseless_limit_recovers_predictions():
    spec = spec_with(mu=1.0, lambda_y=1e16, observation_mode="gaussian")
    matrix, truth = sample_dataset(spec)
    dense = matrix.csr.toarray()
    np.testing.assert_allclose(dense, truth.theta @ truth.beta.T, atol=1e-5)


def test_exposure_rate_within_binomial_bound():
    spec = spec_with(n_users=400, n_items=250, mu=0.3, seed=5)
    _, truth = sample_dataset(spec)
    n = 400 * 250
    sigma = np.sqrt(n * 0.3 * 0.7)
    assert abs(truth.exposed.sum() - 0.3 * n) <= 3 * sigma


def test_sampling_deterministic_per_seed():
    a_matrix, a_truth = sample_dataset(spec_with(seed=9))
    b_matrix, b_truth = sample_dataset(spec_with(seed=9))
    np.testing.assert_array_equal(a_truth.theta, b_truth.theta)
    np.testing.assert_array_equal(a_truth.exposed, b_truth.exposed)
    assert (a_matrix.csr != b_matrix.csr).nnz == 0


def test_binarized_mode_hits_target_density():
    spec = spec_with(
        n_users=300,
        n_items=200,
        exposure_process="popularity",
        alpha2=2.0,
        observation_mode="binarized",
        target_density=0.03,
        seed=3,
    )
    matrix, _ = sample_dataset(spec)
    density = matrix.nnz / (300 * 200)
    assert 0.02 <= density <= 0.04
    assert set(np.unique(matrix.csr.data)) == {1.0}


def test_popularity_process_draws_per_item_probabilities():
    _, truth = sample_dataset(spec_with(exposure_process="popularity", alpha2=4.0))
    mu = np.asarray(truth.mu)
    assert mu.shape == (40,)
    assert np.all((mu >= 0) & (mu <= 1))


def test_covariate_process_requires_weights():
    with pytest.raises(ConfigurationError, match="psi"):
        spec_with(exposure_process="covariate")


def test_clustered_truth_shapes_and_normalization():
    psi, gamma, x = clustered_exposure_truth(30, 25, 4, seed=1)
    assert psi.shape == (30, 4)
    assert gamma.shape == (30,)
    assert x.shape == (25, 4)
    np.testing.assert_allclose(x.sum(axis=1), 1.0, rtol=1e-12)
    assert np.all(x >= 0)


def test_ground_truth_round_trip(tmp_path):
    _, truth = sample_dataset(spec_with(exposure_process="popularity"))
    save_ground_truth(tmp_path / "truth.npz", truth)
    loaded = load_ground_truth(tmp_path / "truth.npz")
    np.testing.assert_array_equal(loaded.theta, truth.theta)
    np.testing.assert_array_equal(loaded.beta, truth.beta)
    np.testing.assert_array_equal(loaded.mu, truth.mu)
    np.testing.assert_array_equal(loaded.exposed, truth.exposed)


# ---------------------------------------------------------------------------
# recovery report


def test_recovery_with_truth_plugged_in_beats_chance():
    spec = spec_with(
        n_users=120,
        n_items=80,
        exposure_process="popularity",
        alpha1=0.6,
        alpha2=1.8,
        lambda_theta=0.5,
        lambda_beta=0.5,
        observation_mode="binarized",
        target_density=0.05,
        seed=11,
    )
    matrix, truth = sample_dataset(spec)
    data = split_interactions(matrix, seed=2)
    report = recovery_report(truth_state(truth), truth, data)
    assert report.exposure_auc is not None and report.exposure_auc > 0.5
    assert report.mu_correlation == pytest.approx(1.0, abs=1e-6)
    assert report.heldout_ndcg is not None


def test_recovery_constant_truth_mu_is_not_applicable():
    matrix, truth = sample_dataset(
        spec_with(mu=0.3, observation_mode="binarized", target_density=0.05)
    )
    data = split_interactions(matrix, seed=0)
    report = recovery_report(truth_state(truth), truth, data)
    assert report.mu_correlation is None
    assert "constant" in report.notes["mu_correlation"]


def test_recovery_random_state_scores_near_permutation_baseline():
    spec = spec_with(
        n_users=150,
        n_items=100,
        exposure_process="popularity",
        alpha2=2.0,
        observation_mode="binarized",
        target_density=0.06,
        seed=21,
    )
    matrix, truth = sample_dataset(spec)
    data = split_interactions(matrix, seed=4)
    random_state = init_model(
        150, 100, Hyperparameters(n_factors=3, seed=77), variant="per_item"
    )
    report = recovery_report(random_state, truth, data)

    # permutation oracle for the random-ranking NDCG baseline
    rng = np.random.default_rng(123)
    baseline_samples = []
    for _ in range(30):
        total, count = 0.0, 0
        for u in range(150):
            test = data.test.row_items(u)
            if test.size == 0:
                continue
            exclude = np.concatenate(
                [data.train.row_items(u), data.validation.row_items(u)]
            )
            scores = rng.random(100)
            total += ndcg_at_k(rank_from_scores(u, scores, exclude), test, 100)
            count += 1
        baseline_samples.append(total / count)
    mean = float(np.mean(baseline_samples))
    sd = float(np.std(baseline_samples))
    assert abs(report.heldout_ndcg - mean) <= 6 * sd


def test_recovery_dimension_mismatch():
    matrix, truth = sample_dataset(spec_with())
    data = split_interactions(matrix, seed=0)
    wrong = init_model(10, 10, Hyperparameters(n_factors=3, seed=0))
    with pytest.raises(ConfigurationError):
        recovery_report(wrong, truth, data)
