"""Exposure-aware matrix factorization for implicit feedback.

The package separates "which items did a user see" from "which seen items
did they like": every user-item cell carries a latent exposure indicator whose
posterior down-weights unclicked items the model believes were never
considered. A weighted-factorization baseline, ranking metrics, dataset
plumbing, a synthetic-data sampler, and a CLI round out the toolkit.

Most callers want one of:

  - the estimators ExpoMF / WMF (scikit-learn style fit/predict), or
  - the functional layer: init_model + train + evaluate, or
  - the ``expomf`` console command.
"""

__version__ = "0.1.0"

from .data import (
    CovariateMatrix,
    InteractionMatrix,
    RawInteractions,
    SplitDataset,
    cluster_locations,
    filter_and_binarize,
    load_covariates,
    load_interactions,
    load_locations,
    read_dataset,
    split_interactions,
    write_dataset,
)
from .em import TrainConfig, e_step, marginal_log_posterior, train
from .errors import (
    CheckpointError,
    ConfigurationError,
    DataError,
    ExpomfError,
    NotFittedError,
    NumericalError,
)
from .exposure import (
    ConstantConfidence,
    CovariateExposure,
    FixedExposure,
    PerItemExposure,
)
from .metrics import EvalReport, evaluate, map_at_k, mpr, ndcg_at_k, recall_at_k
from .models import WMF, ExpoMF
from .state import (
    Hyperparameters,
    ModelState,
    init_model,
    load_checkpoint,
    predict_score,
    save_checkpoint,
    score_items,
)
from .synthetic import (
    GroundTruth,
    RecoveryReport,
    SyntheticSpec,
    recovery_report,
    sample_dataset,
)
from .wmf import WmfConfig, wmf_train

__all__ = [
    "__version__",
    "CheckpointError",
    "CovariateMatrix",
    "ConfigurationError",
    "ConstantConfidence",
    "CovariateExposure",
    "DataError",
    "EvalReport",
    "ExpoMF",
    "ExpomfError",
    "FixedExposure",
    "GroundTruth",
    "Hyperparameters",
    "InteractionMatrix",
    "ModelState",
    "NotFittedError",
    "NumericalError",
    "PerItemExposure",
    "RawInteractions",
    "RecoveryReport",
    "SplitDataset",
    "SyntheticSpec",
    "TrainConfig",
    "WMF",
    "WmfConfig",
    "cluster_locations",
    "e_step",
    "evaluate",
    "filter_and_binarize",
    "init_model",
    "load_checkpoint",
    "load_covariates",
    "load_interactions",
    "load_locations",
    "map_at_k",
    "marginal_log_posterior",
    "mpr",
    "ndcg_at_k",
    "predict_score",
    "read_dataset",
    "recall_at_k",
    "recovery_report",
    "sample_dataset",
    "save_checkpoint",
    "score_items",
    "split_interactions",
    "train",
    "wmf_train",
    "write_dataset",
]
