"""Bayesian inference of stage-transition gene regulatory networks from staged-death expression data."""

from .model import (
    NOT_REGULATED,
    Dims,
    ExpressionDataset,
    GlobalParams,
    NotRegulated,
    OperationMatrix,
    PriorConfig,
    RegulatedBy,
    RegulationCoefficients,
    RegulatoryModel,
    TargetId,
    generate_coefficients,
    generate_network,
    simulate_dataset,
    validate_model,
)
from .mcmc import ChainSummary, McmcConfig, enumerate_exact_posterior, extract_network, run_chain
from .state import ChainState

__version__ = "0.1.0"

__all__ = [
    "NOT_REGULATED", "ChainState", "ChainSummary", "Dims", "ExpressionDataset", "GlobalParams", "McmcConfig",
    "NotRegulated", "OperationMatrix", "PriorConfig", "RegulatedBy", "RegulationCoefficients", "RegulatoryModel",
    "TargetId", "enumerate_exact_posterior", "extract_network", "generate_coefficients", "generate_network",
    "run_chain", "simulate_dataset", "validate_model",
]
