"""Latent class and multidimensional 2PL models for binary questionnaire items.

Class-count selection by BIC, discriminant-based item screening, LR-driven
clustering of item groups into dimensions and ability correlations.
"""

from lcirt.config import FitConfig
from lcirt.data import (
    DimensionPartition,
    ItemMeta,
    ResponseMatrix,
    load_dataset,
    load_partition,
    parse_dataset,
    parse_partition,
    restrict,
    with_partition,
)
from lcirt.dimensionality import (
    DendrogramPath,
    LrTestResult,
    cluster_dimensions,
    emit_dendrogram,
    embed_split,
    lr_test,
)
from lcirt.errors import DataValidationError, LcirtError, NumericalError, PipelineError
from lcirt.kernels import BACKEND
from lcirt.lc import BicTable, LcFit, LcParams, em_fit_lc, lc_loglik, lc_n_params, posterior_assign, select_k
from lcirt.selection import (
    DiscriminantReport,
    apply_threshold,
    discriminant_2pl,
    discriminant_lc,
    relative_scores,
    threshold_sweep,
)
from lcirt.simulate import GeneratorSpec, pattern_table, simulate
from lcirt.special import chi2_sf
from lcirt.twopl import (
    TwoPlFit,
    TwoPlParams,
    ability_correlations,
    em_fit_2pl,
    implied_lambda,
    nested_loglik_bound,
    twopl_loglik,
    twopl_n_params,
    twopl_prob,
    weighted_correlation,
)

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "BicTable",
    "DataValidationError",
    "DendrogramPath",
    "DimensionPartition",
    "DiscriminantReport",
    "FitConfig",
    "GeneratorSpec",
    "ItemMeta",
    "LcFit",
    "LcParams",
    "LcirtError",
    "LrTestResult",
    "NumericalError",
    "PipelineError",
    "ResponseMatrix",
    "TwoPlFit",
    "TwoPlParams",
    "ability_correlations",
    "apply_threshold",
    "chi2_sf",
    "cluster_dimensions",
    "discriminant_2pl",
    "discriminant_lc",
    "em_fit_2pl",
    "em_fit_lc",
    "embed_split",
    "emit_dendrogram",
    "implied_lambda",
    "lc_loglik",
    "lc_n_params",
    "load_dataset",
    "load_partition",
    "lr_test",
    "nested_loglik_bound",
    "parse_dataset",
    "parse_partition",
    "pattern_table",
    "posterior_assign",
    "relative_scores",
    "restrict",
    "select_k",
    "simulate",
    "threshold_sweep",
    "twopl_loglik",
    "twopl_n_params",
    "twopl_prob",
    "weighted_correlation",
    "with_partition",
]
