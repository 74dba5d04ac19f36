"""Sampling from the generative model and measuring what a fit recovered.

Datasets are drawn exactly as the model assumes: Gaussian factors, a
Bernoulli exposure indicator per cell, and an observation that is Gaussian
when exposed and exactly zero when not. Two observation modes exist because
real data are binary while the likelihood is Gaussian: "gaussian" keeps the
real-valued observations (model-matched, used for recovery tests) and
"binarized" thresholds them into clicks at a target density (data-matched,
used for comparative tests).

Recovered factors are never compared to the true ones entry by entry; any
invertible mix of the latent dimensions yields identical predictions, so
recovery is judged on predictive quantities only.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from . import exposure as exp
from .data import InteractionMatrix, SplitDataset
from .errors import ConfigurationError
from .state import ModelState
from .validation import check_count, check_positive, check_probability, check_seed

EXPOSURE_PROCESSES = ("constant", "popularity", "covariate")
OBSERVATION_MODES = ("gaussian", "binarized")


@dataclass
class SyntheticSpec:
    """Ground-truth generative settings for one sampled dataset.

    exposure_process picks how the per-cell exposure probability arises:
    "constant" uses mu everywhere, "popularity" draws one probability per
    item from Beta(alpha1, alpha2), "covariate" computes
    sigmoid(psi . x + gamma) from supplied true weights and item covariates.
    target_density only matters in binarized mode: the click threshold is
    set so roughly that fraction of all cells becomes 1.
    """

    n_users: int
    n_items: int
    n_factors: int
    lambda_theta: float = 1.0
    lambda_beta: float = 1.0
    lambda_y: float = 1.0
    exposure_process: str = "constant"
    mu: float = 0.1
    alpha1: float = 1.0
    alpha2: float = 1.0
    psi: np.ndarray | None = None
    gamma: np.ndarray | None = None
    covariates: np.ndarray | None = None
    observation_mode: str = "gaussian"
    target_density: float = 0.02
    seed: int = 0

    def __post_init__(self):
        check_count("n_users", self.n_users)
        check_count("n_items", self.n_items)
        check_count("n_factors", self.n_factors)
        check_positive("lambda_theta", self.lambda_theta)
        check_positive("lambda_beta", self.lambda_beta)
        check_positive("lambda_y", self.lambda_y)
        check_seed("seed", self.seed)
        if self.exposure_process not in EXPOSURE_PROCESSES:
            raise ConfigurationError(
                f"exposure_process must be one of {EXPOSURE_PROCESSES}, "
                f"got {self.exposure_process!r}"
            )
        if self.observation_mode not in OBSERVATION_MODES:
            raise ConfigurationError(
                f"observation_mode must be one of {OBSERVATION_MODES}, "
                f"got {self.observation_mode!r}"
            )
        check_probability("mu", self.mu, open_interval=False)
        check_positive("alpha1", self.alpha1)
        check_positive("alpha2", self.alpha2)
        check_probability("target_density", self.target_density)
        if self.exposure_process == "covariate":
            if self.psi is None or self.gamma is None or self.covariates is None:
                raise ConfigurationError(
                    "covariate exposure_process needs psi, gamma, and covariates"
                )
            self.psi = np.asarray(self.psi, dtype=np.float64)
            self.gamma = np.asarray(self.gamma, dtype=np.float64)
            x = np.asarray(self.covariates, dtype=np.float64)
            if np.any(x < 0):
                raise ConfigurationError("true covariates must be nonnegative")
            sums = x.sum(axis=1)
            if np.any(sums <= 0):
                raise ConfigurationError("every true covariate row needs positive mass")
            self.covariates = x / sums[:, None]
            if self.covariates.shape[0] != self.n_items:
                raise ConfigurationError("covariates must have one row per item")
            if self.psi.shape != (self.n_users, self.covariates.shape[1]):
                raise ConfigurationError("psi must be (n_users, n_covariates)")
            if self.gamma.shape != (self.n_users,):
                raise ConfigurationError("gamma must be (n_users,)")


@dataclass
class GroundTruth:
    """What the sampler actually used: factors, exposure field, indicators."""

    theta: np.ndarray
    beta: np.ndarray
    mu: object
    exposed: np.ndarray = field(repr=False)
    spec: SyntheticSpec | None = None

    def mu_matrix(self, n_users: int, n_items: int) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.mu, dtype=np.float64), (n_users, n_items))


def sample_dataset(spec: SyntheticSpec) -> tuple[InteractionMatrix, GroundTruth]:
    """Draw one dataset; fully reproducible from spec.seed.

    Draw order is fixed (user factors, item factors, exposure field,
    indicators, observation noise) so a seed pins every artifact. Returned
    item/user ids are u0.., i0..
    """
    rng = np.random.default_rng(spec.seed)
    U, I = spec.n_users, spec.n_items
    theta = rng.normal(0.0, spec.lambda_theta**-0.5, size=(U, spec.n_factors))
    beta = rng.normal(0.0, spec.lambda_beta**-0.5, size=(I, spec.n_factors))

    if spec.exposure_process == "constant":
        mu = float(spec.mu)
    elif spec.exposure_process == "popularity":
        mu = rng.beta(spec.alpha1, spec.alpha2, size=I)
    else:
        mu = expit(spec.psi @ spec.covariates.T + spec.gamma[:, None])

    exposed = rng.random((U, I)) < mu
    predicted = theta @ beta.T
    noise = rng.normal(0.0, spec.lambda_y**-0.5, size=(U, I))

    if spec.observation_mode == "gaussian":
        y = np.where(exposed, predicted + noise, 0.0)
    else:
        strength = predicted + noise
        n_exposed = int(exposed.sum())
        target = int(round(spec.target_density * U * I))
        if n_exposed == 0 or target == 0:
            y = np.zeros((U, I))
        elif target >= n_exposed:
            y = exposed.astype(np.float64)
        else:
            tau = np.quantile(strength[exposed], 1.0 - target / n_exposed)
            y = (exposed & (strength > tau)).astype(np.float64)

    rows, cols = np.nonzero(y)
    triples = list(zip(rows.tolist(), cols.tolist(), y[rows, cols].tolist()))
    matrix = InteractionMatrix.from_triples(
        triples, U, I, [f"u{j}" for j in range(U)], [f"i{j}" for j in range(I)]
    )
    return matrix, GroundTruth(theta=theta, beta=beta, mu=mu, exposed=exposed, spec=spec)


def clustered_exposure_truth(
    n_users: int,
    n_items: int,
    n_covariates: int,
    strength: float = 4.0,
    bias: float = -2.0,
    seed: int = 0,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """A well-separated covariate exposure field: (psi, gamma, covariates).

    Items get covariate rows concentrated on one of n_covariates groups
    (Dirichlet with a boosted own-group weight); each user gets one home
    group with psi pointing at it, so exposure is high inside the home group
    and low elsewhere. bias shifts overall exposure through gamma.
    """
    check_count("n_covariates", n_covariates)
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(2,)))
    item_groups = rng.integers(0, n_covariates, size=n_items)
    x = np.empty((n_items, n_covariates))
    for i in range(n_items):
        alpha = np.full(n_covariates, 0.2)
        alpha[item_groups[i]] = 8.0
        x[i] = rng.dirichlet(alpha)
    user_groups = rng.integers(0, n_covariates, size=n_users)
    psi = np.zeros((n_users, n_covariates))
    psi[np.arange(n_users), user_groups] = strength
    gamma = np.full(n_users, bias)
    return psi, gamma, x


@dataclass
class RecoveryReport:
    """How well a fitted model recovered the generative structure.

    exposure_auc ranks unclicked cells by the fitted exposure posterior
    against the true indicators; mu_correlation compares fitted and true
    exposure probabilities; heldout_ndcg is mean NDCG over the heldout
    split. Fields are None when undefined (constant truth, no posterior,
    no heldout data), with the reason in notes.
    """

    exposure_auc: float | None
    mu_correlation: float | None
    heldout_ndcg: float | None
    rank_k: int
    notes: dict[str, str] = field(default_factory=dict)

    def summary(self) -> str:
        def show(name, value):
            if value is None:
                return f"{name}: n/a ({self.notes.get(name, 'undefined')})"
            return f"{name}: {value:.5f}"

        return "\n".join(
            [
                show("exposure_auc", self.exposure_auc),
                show("mu_correlation", self.mu_correlation),
                show(f"heldout_ndcg_at_{self.rank_k}", self.heldout_ndcg),
            ]
        )


def recovery_report(
    fitted: ModelState, truth: GroundTruth, data, rank_k: int = 100
) -> RecoveryReport:
    """Compare a fitted state against the sampler's ground truth.

    data is the SplitDataset the model was trained on (its train split
    defines which cells were unclicked; its test split is the heldout set)
    or a bare InteractionMatrix (no heldout metric then).
    """
    from . import em, metrics

    if isinstance(data, SplitDataset):
        observed = data.train
        heldout = data.test
        validation = data.validation
    elif isinstance(data, InteractionMatrix):
        observed, heldout, validation = data, None, None
    else:
        raise ConfigurationError("data must be a SplitDataset or InteractionMatrix")
    U, I = observed.n_users, observed.n_items
    if fitted.n_users != U or fitted.n_items != I:
        raise ConfigurationError(
            f"fitted state is {fitted.n_users}x{fitted.n_items}, data is {U}x{I}"
        )
    if truth.exposed.shape != (U, I):
        raise ConfigurationError("ground truth dimensions do not match the data")
    notes: dict[str, str] = {}

    auc = None
    if isinstance(fitted.exposure, exp.ConstantConfidence):
        notes["exposure_auc"] = "constant-confidence model has no exposure posterior"
    else:
        scores: list[np.ndarray] = []
        labels: list[np.ndarray] = []
        for u in range(U):
            pred = fitted.beta @ fitted.theta[u]
            mu_row = np.asarray(fitted.exposure.mu_for_users(np.array([u])), dtype=np.float64)
            mu_row = np.broadcast_to(mu_row.reshape(1, -1) if mu_row.ndim else mu_row, (1, I))[0]
            p = em.exposure_posterior(pred, mu_row, fitted.hyper.lambda_y)
            unclicked = np.ones(I, dtype=bool)
            unclicked[observed.row_items(u)] = False
            scores.append(p[unclicked])
            labels.append(truth.exposed[u, unclicked])
        score_vec = np.concatenate(scores)
        label_vec = np.concatenate(labels)
        if label_vec.all() or not label_vec.any():
            notes["exposure_auc"] = "true exposure is single-class on unclicked cells"
        else:
            from sklearn.metrics import roc_auc_score

            auc = float(roc_auc_score(label_vec, score_vec))

    corr = None
    true_mu = truth.mu_matrix(U, I)
    if isinstance(fitted.exposure, exp.ConstantConfidence):
        notes["mu_correlation"] = "constant-confidence model has no exposure prior"
    elif float(np.ptp(true_mu)) == 0.0:
        notes["mu_correlation"] = "true exposure probability is constant"
    else:
        blocks = [
            np.broadcast_to(
                np.asarray(fitted.exposure.mu_for_users(np.arange(lo, hi)), dtype=np.float64),
                (hi - lo, I),
            )
            for lo, hi in ((j, min(j + 256, U)) for j in range(0, U, 256))
        ]
        fitted_mu = np.concatenate([b.ravel() for b in blocks])
        if float(np.ptp(fitted_mu)) == 0.0:
            notes["mu_correlation"] = "fitted exposure probability is constant"
        else:
            corr = float(np.corrcoef(fitted_mu, true_mu.ravel())[0, 1])

    ndcg = None
    if heldout is None or heldout.nnz == 0:
        notes[f"heldout_ndcg_at_{rank_k}"] = "no heldout interactions"
    else:
        total = 0.0
        evaluated = 0
        for u in range(U):
            test = heldout.row_items(u)
            if test.size == 0:
                continue
            exclude = observed.row_items(u)
            if validation is not None:
                exclude = np.concatenate([exclude, validation.row_items(u)])
            ranked = metrics.rank_from_scores(u, em.score_items(fitted, u), exclude)
            total += metrics.ndcg_at_k(ranked, test, rank_k)
            evaluated += 1
        if evaluated:
            ndcg = total / evaluated
        else:
            notes[f"heldout_ndcg_at_{rank_k}"] = "no users with heldout items"

    return RecoveryReport(
        exposure_auc=auc, mu_correlation=corr, heldout_ndcg=ndcg, rank_k=rank_k, notes=notes
    )


def save_ground_truth(path, truth: GroundTruth) -> None:
    """Write the sidecar file (compressed npz) next to an exported dataset."""
    arrays = {
        "theta": truth.theta,
        "beta": truth.beta,
        "mu": np.asarray(truth.mu, dtype=np.float64),
        "exposed": truth.exposed,
    }
    if truth.spec is not None:
        s = truth.spec
        arrays["meta"] = np.array(
            [
                s.exposure_process,
                s.observation_mode,
                str(s.seed),
                str(s.lambda_theta),
                str(s.lambda_beta),
                str(s.lambda_y),
                str(s.target_density),
            ]
        )
    np.savez_compressed(path, **arrays)


def load_ground_truth(path) -> GroundTruth:
    with np.load(path, allow_pickle=False) as archive:
        mu = archive["mu"]
        return GroundTruth(
            theta=archive["theta"],
            beta=archive["beta"],
            mu=float(mu) if mu.ndim == 0 else mu,
            exposed=archive["exposed"],
            spec=None,
        )
