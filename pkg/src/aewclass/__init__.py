"""Exponential-weight aggregation of classifiers under a margin assumption."""

__version__ = "0.1.0"

from .core import (
    AEWError,
    CapacityError,
    ConfigError,
    ConstantRule,
    ConstantScore,
    Dataset,
    DatasetFormatError,
    DomainError,
    InvariantViolation,
    LabeledExample,
    PredictionRule,
    ScoreFunction,
    TabulatedRule,
    TabulatedScore,
    ThresholdRule,
    empirical_hinge_risk,
    empirical_zero_one_risk,
    hinge_loss,
    read_dataset_csv,
    sign_classifier,
    write_dataset_csv,
)
from .aggregation import (
    AggregateScore,
    Dictionary,
    WeightVector,
    aew_aggregate,
    aew_weights,
    erm_select,
    proposition1_certificate,
)
from .distributions import (
    FiniteDistribution,
    HolderDistribution,
    exact_risks,
    lower_bound_family,
    margin_c0,
    noise_exponent_check,
    sample,
)
from .plugin import PluginConfig, local_poly_estimate, plugin_classifier
from .adaptive import adaptive_generic_aggregate, adaptive_plugin_aggregate, beta_grid, phi_grid, split
from .experiments import ExperimentConfig, excess_risk_mc, oracle_gap, rate_fit

__all__ = [name for name in dir() if not name.startswith("_")]
