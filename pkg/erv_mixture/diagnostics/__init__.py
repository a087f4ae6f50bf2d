from .classify import posterior_classify, threshold_classify
from .overdispersion import (
    DispersionSummary,
    ModelTag,
    ResidualReport,
    RowColFit,
    dispersion_summary,
    fit_nb_rowcol,
    fit_poisson_rowcol,
    pearson_residuals,
)
from .replicate import (
    CasePartition,
    ConsistencyCurve,
    MethodTag,
    ReplicateValidation,
    replicate_consistency,
    replicated_groups,
)

__all__ = [
    "threshold_classify",
    "posterior_classify",
    "ModelTag",
    "RowColFit",
    "ResidualReport",
    "DispersionSummary",
    "fit_poisson_rowcol",
    "fit_nb_rowcol",
    "pearson_residuals",
    "dispersion_summary",
    "MethodTag",
    "ConsistencyCurve",
    "CasePartition",
    "ReplicateValidation",
    "replicate_consistency",
    "replicated_groups",
]
