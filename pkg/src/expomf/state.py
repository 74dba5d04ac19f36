"""Model state, initialization, prediction rules, and checkpointing.

A trained model is two dense float64 factor matrices (one K-vector per user
and per item), an exposure model, the hyperparameters that produced them, and
an iteration counter. Checkpoints are a small versioned binary format whose
factor payloads round-trip bit exactly.

Randomness comes from numpy's PCG64 (``np.random.default_rng``), the portable
64-bit generator this package standardizes on: the same seed reproduces the
same initialization on any platform.
"""

from __future__ import annotations

import hashlib
import os
import struct
from dataclasses import dataclass, replace

import numpy as np

from . import exposure as exp
from .errors import CheckpointError, ConfigurationError
from .validation import check_count, check_positive, check_seed

_MAGIC = b"EXPOMFCK"
_VERSION = 1
_HASH_BYTES = 32

_VARIANT_TAGS = {"fixed": 0, "per_item": 1, "covariate": 2, "constant": 3}
_TAG_VARIANTS = {v: k for k, v in _VARIANT_TAGS.items()}


@dataclass
class Hyperparameters:
    """Latent dimension, precisions, pseudo-counts, and init settings.

    lambda_theta / lambda_beta / lambda_y are inverse variances (of the user
    prior, item prior, and observation noise); alpha1 / alpha2 are the
    pseudo-counts of exposed / unexposed users for the per-item prior update.
    """

    n_factors: int = 100
    lambda_theta: float = 1e-2
    lambda_beta: float = 1e-2
    lambda_y: float = 1.0
    alpha1: float = 1.0
    alpha2: float = 1.0
    init_scale: float = 0.01
    seed: int = 0

    def __post_init__(self):
        check_count("n_factors", self.n_factors)
        check_positive("lambda_theta", self.lambda_theta)
        check_positive("lambda_beta", self.lambda_beta)
        check_positive("lambda_y", self.lambda_y)
        check_positive("alpha1", self.alpha1)
        check_positive("alpha2", self.alpha2)
        check_positive("init_scale", self.init_scale)
        check_seed("seed", self.seed)


@dataclass
class ModelState:
    """Factors, exposure model, hyperparameters, and iteration counter."""

    theta: np.ndarray
    beta: np.ndarray
    exposure: object
    hyper: Hyperparameters
    iteration: int = 0

    def __post_init__(self):
        k = self.hyper.n_factors
        if self.theta.ndim != 2 or self.beta.ndim != 2:
            raise ConfigurationError("factor matrices must be 2-d")
        if self.theta.shape[1] != k or self.beta.shape[1] != k:
            raise ConfigurationError(
                f"factor width ({self.theta.shape[1]}, {self.beta.shape[1]}) "
                f"does not match n_factors={k}"
            )

    @property
    def n_users(self) -> int:
        return self.theta.shape[0]

    @property
    def n_items(self) -> int:
        return self.beta.shape[0]

    def copy(self) -> "ModelState":
        return ModelState(
            theta=self.theta.copy(),
            beta=self.beta.copy(),
            exposure=_copy_exposure(self.exposure),
            hyper=replace(self.hyper),
            iteration=self.iteration,
        )


def _copy_exposure(model):
    if isinstance(model, exp.FixedExposure):
        return exp.FixedExposure(model.mu)
    if isinstance(model, exp.PerItemExposure):
        return exp.PerItemExposure(model.mu.copy(), model.alpha1, model.alpha2)
    if isinstance(model, exp.CovariateExposure):
        return exp.CovariateExposure(
            model.covariates,
            model.psi.copy(),
            model.gamma.copy(),
            model.step_size,
            model.batch_size,
            model.epochs_per_m_step,
            model.user_bias,
        )
    if isinstance(model, exp.ConstantConfidence):
        return exp.ConstantConfidence(model.c0, model.c1)
    raise ConfigurationError(f"unknown exposure model {type(model).__name__}")


def init_model(
    n_users: int,
    n_items: int,
    hyper: Hyperparameters,
    variant: str = "fixed",
    mu: float = 0.1,
    covariates: np.ndarray | None = None,
    step_size: float = 0.5,
    batch_size: int = 10,
    epochs_per_m_step: int = 10,
    user_bias: bool = True,
    c0: float = 0.01,
    c1: float = 1.0,
) -> ModelState:
    """Draw a fresh model state, deterministic given hyper.seed.

    Factors are zero-mean Gaussian with standard deviation hyper.init_scale
    (small, so initial predictions sit near zero and the first posterior pass
    stays close to the prior). The user matrix is drawn first, then the item
    matrix, then any random pieces of the exposure model, all from one PCG64
    stream, so factor initialization is identical across exposure variants
    with the same seed.
    """
    check_count("n_users", n_users)
    check_count("n_items", n_items)
    rng = np.random.default_rng(hyper.seed)
    theta = rng.normal(0.0, hyper.init_scale, size=(n_users, hyper.n_factors))
    beta = rng.normal(0.0, hyper.init_scale, size=(n_items, hyper.n_factors))
    exposure = exp.initialize_exposure(
        variant,
        n_users,
        n_items,
        rng,
        mu=mu,
        alpha1=hyper.alpha1,
        alpha2=hyper.alpha2,
        covariates=covariates,
        init_scale=hyper.init_scale,
        step_size=step_size,
        batch_size=batch_size,
        epochs_per_m_step=epochs_per_m_step,
        user_bias=user_bias,
        c0=c0,
        c1=c1,
    )
    return ModelState(theta=theta, beta=beta, exposure=exposure, hyper=hyper, iteration=0)


def default_prediction_rule(exposure_model) -> str:
    """dot for fixed/per-item priors, exposure_weighted for covariate priors.

    Weighting by the prior only pays off when the prior actually varies per
    (user, item) cell; for the other variants the plain inner product ranks
    better.
    """
    if isinstance(exposure_model, exp.CovariateExposure):
        return "exposure_weighted"
    return "dot"


def score_items(state: ModelState, u: int, rule: str | None = None) -> np.ndarray:
    """Predicted scores for every item for one user.

    rule "dot" is the factor inner product; "exposure_weighted" multiplies by
    the prior exposure probability. None picks the variant default.
    """
    if not 0 <= u < state.n_users:
        raise ConfigurationError(f"user index {u} out of range")
    if rule is None:
        rule = default_prediction_rule(state.exposure)
    if rule not in ("dot", "exposure_weighted"):
        raise ConfigurationError(f"unknown prediction rule {rule!r}")
    scores = state.beta @ state.theta[u]
    if rule == "exposure_weighted":
        mu = np.asarray(state.exposure.mu_for_users(np.array([u])))
        scores = scores * (mu if mu.ndim == 0 else mu[0])
    return scores


def predict_score(state: ModelState, u: int, i: int, rule: str | None = None) -> float:
    """Predicted preference of user u for item i under the given rule."""
    if not 0 <= i < state.n_items:
        raise ConfigurationError(f"item index {i} out of range")
    return float(score_items(state, u, rule)[i])


def _hash_covariates(values: np.ndarray) -> bytes:
    h = hashlib.sha256()
    h.update(np.asarray(values.shape, dtype=np.int64).tobytes())
    h.update(np.ascontiguousarray(values, dtype=np.float64).tobytes())
    return h.digest()


def _f64_bytes(arr: np.ndarray) -> bytes:
    return np.ascontiguousarray(arr, dtype="<f8").tobytes()


def save_checkpoint(state: ModelState, path) -> None:
    """Write the state as a versioned little-endian binary file.

    Layout: magic, format version, U/I/K, row-major user then item factors as
    64-bit floats, exposure variant tag plus its parameters, hyperparameters,
    iteration count. The factor payload round-trips bit exactly.
    """
    h = state.hyper
    parts = [
        _MAGIC,
        struct.pack("<I", _VERSION),
        struct.pack("<QQQ", state.n_users, state.n_items, h.n_factors),
        _f64_bytes(state.theta),
        _f64_bytes(state.beta),
    ]
    ex = state.exposure
    tag = _VARIANT_TAGS.get(getattr(ex, "variant", None))
    if tag is None:
        raise ConfigurationError(f"cannot checkpoint exposure model {type(ex).__name__}")
    parts.append(struct.pack("<B", tag))
    if isinstance(ex, exp.FixedExposure):
        parts.append(struct.pack("<d", ex.mu))
    elif isinstance(ex, exp.PerItemExposure):
        parts.append(struct.pack("<dd", ex.alpha1, ex.alpha2))
        parts.append(_f64_bytes(ex.mu))
    elif isinstance(ex, exp.CovariateExposure):
        parts.append(
            struct.pack(
                "<QdQQB",
                ex.covariates.shape[1],
                ex.step_size,
                ex.batch_size,
                ex.epochs_per_m_step,
                int(ex.user_bias),
            )
        )
        parts.append(_f64_bytes(ex.psi))
        parts.append(_f64_bytes(ex.gamma))
        parts.append(_hash_covariates(ex.covariates))
    elif isinstance(ex, exp.ConstantConfidence):
        parts.append(struct.pack("<dd", ex.c0, ex.c1))
    parts.append(
        struct.pack(
            "<ddddddq",
            h.lambda_theta,
            h.lambda_beta,
            h.lambda_y,
            h.alpha1,
            h.alpha2,
            h.init_scale,
            h.seed,
        )
    )
    parts.append(struct.pack("<Q", state.iteration))
    blob = b"".join(parts)
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(blob)
    os.replace(tmp, path)


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        avail = len(self.blob) - self.pos
        if avail < n:
            raise CheckpointError(
                f"truncated checkpoint: {what} needs {n} bytes, found {avail}"
            )
        out = self.blob[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))

    def floats(self, shape, what: str) -> np.ndarray:
        n = int(np.prod(shape))
        raw = self.take(n * 8, what)
        return np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(shape)


def load_checkpoint(path, covariates: np.ndarray | None = None) -> ModelState:
    """Read a checkpoint written by :func:`save_checkpoint`.

    A covariate-variant checkpoint stores the covariate content hash, not the
    matrix; pass the same covariates to restore it (a mismatching matrix is
    refused). Other variants ignore the argument.
    """
    if not os.path.exists(path):
        raise CheckpointError(f"checkpoint file not found: {path}")
    with open(path, "rb") as fh:
        r = _Reader(fh.read())

    magic = r.take(len(_MAGIC), "magic")
    if magic != _MAGIC:
        raise CheckpointError(f"bad magic {magic!r}: not a checkpoint file")
    (version,) = r.unpack("<I", "version")
    if version != _VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} (supported: {_VERSION})")
    n_users, n_items, k = r.unpack("<QQQ", "dimensions")
    if n_users < 1 or n_items < 1 or k < 1:
        raise CheckpointError(f"bad dimensions U={n_users} I={n_items} K={k}")
    theta = r.floats((n_users, k), "user-factor block")
    beta = r.floats((n_items, k), "item-factor block")

    (tag,) = r.unpack("<B", "exposure tag")
    variant = _TAG_VARIANTS.get(tag)
    if variant is None:
        raise CheckpointError(f"unknown exposure variant tag {tag}")
    if variant == "fixed":
        (mu,) = r.unpack("<d", "fixed exposure")
        exposure = exp.FixedExposure(mu)
    elif variant == "per_item":
        alpha1, alpha2 = r.unpack("<dd", "per-item exposure")
        mu = r.floats((n_items,), "per-item probabilities")
        exposure = exp.PerItemExposure(mu, alpha1, alpha2)
    elif variant == "covariate":
        n_cov, step_size, batch_size, epochs, user_bias = r.unpack(
            "<QdQQB", "covariate exposure"
        )
        psi = r.floats((n_users, n_cov), "covariate weights")
        gamma = r.floats((n_users,), "user bias")
        stored_hash = r.take(_HASH_BYTES, "covariate hash")
        if covariates is None:
            raise ConfigurationError(
                "this checkpoint uses the covariate exposure variant; "
                "pass the covariate matrix to restore it"
            )
        covariates = np.asarray(covariates, dtype=np.float64)
        if covariates.shape != (n_items, n_cov):
            raise CheckpointError(
                f"covariate matrix shape {covariates.shape} does not match "
                f"checkpoint ({n_items}, {n_cov})"
            )
        if _hash_covariates(covariates) != stored_hash:
            raise CheckpointError(
                "covariate matrix content does not match the one this checkpoint was trained with"
            )
        exposure = exp.CovariateExposure(
            covariates, psi, gamma, step_size, int(batch_size), int(epochs), bool(user_bias)
        )
    else:
        c0, c1 = r.unpack("<dd", "constant confidence")
        exposure = exp.ConstantConfidence(c0, c1)

    lam_t, lam_b, lam_y, alpha1, alpha2, init_scale, seed = r.unpack(
        "<ddddddq", "hyperparameters"
    )
    (iteration,) = r.unpack("<Q", "iteration")
    if r.pos != len(r.blob):
        raise CheckpointError(f"{len(r.blob) - r.pos} bytes of trailing data after checkpoint")

    hyper = Hyperparameters(
        n_factors=int(k),
        lambda_theta=lam_t,
        lambda_beta=lam_b,
        lambda_y=lam_y,
        alpha1=alpha1,
        alpha2=alpha2,
        init_scale=init_scale,
        seed=int(seed),
    )
    return ModelState(
        theta=theta, beta=beta, exposure=exposure, hyper=hyper, iteration=int(iteration)
    )
