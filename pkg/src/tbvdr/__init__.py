"""Bayesian vectorial dimension reduction for tensor data."""

from .model import (
    CpBasis,
    FitReport,
    LatentPosterior,
    ModelConfig,
    NoisePosterior,
    TbvModel,
    e_step,
    elbo,
    fit,
    fit_quality,
    reconstruct,
    transform,
)

__all__ = [
    "CpBasis",
    "FitReport",
    "LatentPosterior",
    "ModelConfig",
    "NoisePosterior",
    "TbvModel",
    "e_step",
    "elbo",
    "fit",
    "fit_quality",
    "reconstruct",
    "transform",
]
