"""Selection of valid instruments in linear models with several exposures.

The pipeline runs from a median-of-medians initial estimate, through an
adaptive Lasso path for the direct effects, to a selected set of invalid
instruments and a post-selection 2SLS fit.
"""

from ._accel import backend_name
from .alasso import (
    AdaptiveWeights,
    LarsPath,
    adaptive_lasso_at,
    beta_from_alpha,
    build_ztilde,
    lars_weighted_path,
)
from .data import (
    BlockStructure,
    Dataset,
    TruthInfo,
    load_blocks,
    load_csv,
    partial_out_covariates,
)
from .errors import (
    EnumerationCapError,
    IVSelectError,
    NumericalError,
    RankError,
    StudyError,
    UnderidentifiedError,
    ValidationError,
)
from .iv import SarganResult, TwoSLSFit, first_stage, fit_2sls, sargan
from .median import (
    JustIdentifiedTable,
    alpha_from_beta,
    block_median_of_medians,
    enumerate_just_identified,
    median_naive,
    median_of_medians,
)
from .selection import (
    SelectionResult,
    cv_select,
    default_p_threshold,
    downward_testing,
    exhaustive_downward_testing,
    post_selection_2sls,
)
from .simulate import SimConfig, StudyMetrics, generate_dataset, preset, run_study

__version__ = "0.1.0"

__all__ = [
    "AdaptiveWeights",
    "BlockStructure",
    "Dataset",
    "EnumerationCapError",
    "IVSelectError",
    "JustIdentifiedTable",
    "LarsPath",
    "NumericalError",
    "RankError",
    "SarganResult",
    "SelectionResult",
    "SimConfig",
    "StudyError",
    "StudyMetrics",
    "TruthInfo",
    "TwoSLSFit",
    "UnderidentifiedError",
    "ValidationError",
    "adaptive_lasso_at",
    "alpha_from_beta",
    "backend_name",
    "beta_from_alpha",
    "block_median_of_medians",
    "build_ztilde",
    "cv_select",
    "default_p_threshold",
    "downward_testing",
    "enumerate_just_identified",
    "exhaustive_downward_testing",
    "first_stage",
    "fit_2sls",
    "generate_dataset",
    "lars_weighted_path",
    "load_blocks",
    "load_csv",
    "median_naive",
    "median_of_medians",
    "partial_out_covariates",
    "post_selection_2sls",
    "preset",
    "run_study",
    "sargan",
]
