"""Differentially private federated sparse linear regression and inference."""

from .dp_core import (
    InvalidArgument,
    NoisySelection,
    PrivacyBudget,
    Released,
    Rng,
    compose,
    gaussian_std,
    noisy_hard_threshold,
    noisy_ht_scale,
    private_max,
    sample_laplace,
    split,
    truncate,
)
from .model import HyperParams, MachineDataset, TrueModel, ar_covariance, make_true_model, sample_federation
from .fednet import FederatedRun, MessageLog, NumericalFault, PayloadKind, ProtocolFault
from .estimators import (
    estimate_restricted_eigenvalues,
    fed_precision_column,
    fed_precision_matrix,
    fed_sparse_regression,
    hetero_regression,
    private_restricted_eigen,
    private_variance,
)
from .inference import (
    bootstrap_simultaneous,
    ci_general,
    ci_simple,
    debias_coordinate,
    debias_coordinates,
    hetero_bootstrap,
    hetero_debias,
    hetero_debias_ci,
)
from .untrusted_mean import aggregate_mean, local_sign_report, run_untrusted_mean
from .bench import ScenarioConfig, emit, run_scenario, run_simultaneous_scenario

__version__ = "0.1.0"

__all__ = [
    "InvalidArgument",
    "NoisySelection",
    "PrivacyBudget",
    "Released",
    "Rng",
    "compose",
    "gaussian_std",
    "noisy_hard_threshold",
    "noisy_ht_scale",
    "private_max",
    "sample_laplace",
    "split",
    "truncate",
    "HyperParams",
    "MachineDataset",
    "TrueModel",
    "ar_covariance",
    "make_true_model",
    "sample_federation",
    "FederatedRun",
    "MessageLog",
    "NumericalFault",
    "PayloadKind",
    "ProtocolFault",
    "estimate_restricted_eigenvalues",
    "fed_precision_column",
    "fed_precision_matrix",
    "fed_sparse_regression",
    "hetero_regression",
    "private_restricted_eigen",
    "private_variance",
    "bootstrap_simultaneous",
    "ci_general",
    "ci_simple",
    "debias_coordinate",
    "debias_coordinates",
    "hetero_bootstrap",
    "hetero_debias",
    "hetero_debias_ci",
    "aggregate_mean",
    "local_sign_report",
    "run_untrusted_mean",
    "ScenarioConfig",
    "emit",
    "run_scenario",
    "run_simultaneous_scenario",
]
