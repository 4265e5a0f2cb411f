"""Strict-overlap bounds, exact discrete oracles, covariate processes and overlap audits."""

from .bounds import (
    DivergenceBounds,
    LikelihoodRatioBand,
    MomentSummary,
    OverlapSpec,
    chi2_bounds,
    chi_alpha_bounds,
    classifier_accuracy_bound,
    kl_bounds,
    lr_band,
    mad_bound,
    mean_discrepancy_bound,
    rukhin_f_bound,
    tv_bounds,
)
from .dataset import Dataset, read_dataset_csv
from .discrete import DiscretePair, ProductPair
from .estimation import LogisticPropensity, OverlapAuditor, audit

__version__ = "0.1.0"

__all__ = [
    "DivergenceBounds",
    "LikelihoodRatioBand",
    "MomentSummary",
    "OverlapSpec",
    "chi2_bounds",
    "chi_alpha_bounds",
    "classifier_accuracy_bound",
    "kl_bounds",
    "lr_band",
    "mad_bound",
    "mean_discrepancy_bound",
    "rukhin_f_bound",
    "tv_bounds",
    "Dataset",
    "read_dataset_csv",
    "DiscretePair",
    "ProductPair",
    "LogisticPropensity",
    "OverlapAuditor",
    "audit",
]
