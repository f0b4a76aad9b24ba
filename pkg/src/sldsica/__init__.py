"""Nonlinear ICA for time series with switching linear latent dynamics.

Each latent component is an independent switching linear dynamical system;
components are mixed by an unknown nonlinearity and observed under additive
noise.  The package provides the simulator, a structured variational
estimator (exact per-chain message passing plus encoder/decoder networks),
evaluation metrics, and numerical audits of the identifiability conditions.
"""

from .errors import (
    ConfigInvalid,
    FormatError,
    ImproperMessage,
    IoError,
    MissingGroundTruth,
    NonScalarOutput,
    NotPositiveDefinite,
    ShapeMismatch,
    SldsIcaError,
)
from .gaussians import GaussianNat, CategoricalNat
from .inference import HmmPosterior, LdsPosterior, mean_field_cycle
from .model import Dataset, ModelParams, SimConfig, simulate
from .nets import EncoderOutput, MlpWeights
from .training import ElboBreakdown, OptState, TrainConfig, TrainResult, elbo, train

__all__ = [
    "CategoricalNat",
    "ConfigInvalid",
    "Dataset",
    "ElboBreakdown",
    "EncoderOutput",
    "FormatError",
    "GaussianNat",
    "HmmPosterior",
    "ImproperMessage",
    "IoError",
    "LdsPosterior",
    "MissingGroundTruth",
    "MlpWeights",
    "ModelParams",
    "NonScalarOutput",
    "NotPositiveDefinite",
    "OptState",
    "ShapeMismatch",
    "SimConfig",
    "SldsIcaError",
    "TrainConfig",
    "TrainResult",
    "elbo",
    "mean_field_cycle",
    "simulate",
    "train",
]

__version__ = "0.1.0"
