"""Game-driven object target for adversarial track tests."""

from ._core import (
    ConfigError,
    Error,
    KdeModel,
    ParseError,
    Proposal,
    RunConfig,
    config_keys,
    empirical_model,
    fit_kde,
    hausdorff,
    hazard,
    run_batch,
    run_trial,
    sample_scenarios,
    signed_pet_from_times,
    synthetic_dataset,
)

__all__ = [
    "ConfigError",
    "Error",
    "KdeModel",
    "ParseError",
    "Proposal",
    "RunConfig",
    "config_keys",
    "empirical_model",
    "fit_kde",
    "hausdorff",
    "hazard",
    "run_batch",
    "run_trial",
    "sample_scenarios",
    "signed_pet_from_times",
    "synthetic_dataset",
]
