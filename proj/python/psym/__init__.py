"""Python access to the psym C++ core: mixture fitting, metrics, losses and the CLI."""

from ._psym import (
    ConfigError,
    DataError,
    FitResult,
    GmmParams,
    NumericError,
    PsymError,
    UndefinedMetricError,
    abnormal_area,
    auc,
    average_auc_over_cutoffs,
    cross_losses,
    fit_gmm,
    posterior_abnormal,
    run_cli,
    soft_bce_loss,
    soft_triplet_loss,
    ssl_mix_loss,
)

__all__ = [
    "ConfigError",
    "DataError",
    "FitResult",
    "GmmParams",
    "NumericError",
    "PsymError",
    "UndefinedMetricError",
    "abnormal_area",
    "auc",
    "average_auc_over_cutoffs",
    "cross_losses",
    "fit_gmm",
    "posterior_abnormal",
    "run_cli",
    "soft_bce_loss",
    "soft_triplet_loss",
    "ssl_mix_loss",
]
