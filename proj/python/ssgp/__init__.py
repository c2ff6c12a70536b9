"""State-space Gaussian process inference for strain-gage monitoring."""

from ._ssgp import (
    ConfigError,
    ConstructionError,
    DomainError,
    NumericalError,
    SizeError,
    condense,
    discretize,
    fit_beam,
    kernel_eval,
    kernel_to_sde,
    nystrom,
    run_cli,
    sde_covariance,
    simulate_beam,
    validate_random,
)

__all__ = [
    "ConfigError",
    "ConstructionError",
    "DomainError",
    "NumericalError",
    "SizeError",
    "condense",
    "discretize",
    "fit_beam",
    "kernel_eval",
    "kernel_to_sde",
    "nystrom",
    "run_cli",
    "sde_covariance",
    "simulate_beam",
    "validate_random",
]

__version__ = "0.1.0"
