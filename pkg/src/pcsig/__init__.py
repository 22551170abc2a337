"""Significance testing of variables against their own principal components.

Resampling-based (permute-s) association p-values, subset and rotated-basis
hypotheses, joint-calibration simulation harness, and FDR machinery.
"""

from .backend import BACKEND
from .engine import (
    JackstrawConfig,
    JackstrawResult,
    NullMode,
    default_config,
    run_delete_s,
    run_jackstraw,
    synthesize_null_rows,
)
from .linmod import (
    FStatResult,
    FullNull,
    HypothesisSpec,
    LinearConstraint,
    SubsetNull,
    apply_rotation,
    f_statistic,
    fit_coefficients,
)
from .matrix import (
    DataMatrix,
    PcaDecomposition,
    compute_pca,
    read_matrix,
    row_center,
    scree_data,
    top_pcs,
    write_matrix,
)
from .stats import (
    KsResult,
    KsSide,
    bh_fdr,
    double_ks,
    estimate_pi0,
    ks_uniform,
    q_values,
    rank_sum_enrichment,
)

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "DataMatrix",
    "FStatResult",
    "FullNull",
    "HypothesisSpec",
    "JackstrawConfig",
    "JackstrawResult",
    "KsResult",
    "KsSide",
    "LinearConstraint",
    "NullMode",
    "PcaDecomposition",
    "SubsetNull",
    "apply_rotation",
    "bh_fdr",
    "compute_pca",
    "default_config",
    "double_ks",
    "estimate_pi0",
    "f_statistic",
    "fit_coefficients",
    "ks_uniform",
    "q_values",
    "rank_sum_enrichment",
    "read_matrix",
    "row_center",
    "run_delete_s",
    "run_jackstraw",
    "scree_data",
    "synthesize_null_rows",
    "top_pcs",
    "write_matrix",
    "__version__",
]
