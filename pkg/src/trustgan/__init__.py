"""TrustGAN: train a classifier alongside a confidence-attacking generator.

Pure-numpy reverse-mode autodiff, models, losses, data loaders, the
three-step training schedule, the confidence metric battery and a CLI.
"""

from .errors import (ConfigError, ContractError, FormatError, InvalidInputError, StateError,
                     TrainingDivergedError, TrustGANError, UnattainableOperatingPointError,
                     UndefinedMetricError)
from .tensor import Parameter, Tensor, no_grad

__version__ = "0.1.0"

__all__ = [
    "Tensor", "Parameter", "no_grad", "TrustGANError", "InvalidInputError", "ConfigError",
    "ContractError", "FormatError", "StateError", "TrainingDivergedError",
    "UndefinedMetricError", "UnattainableOperatingPointError",
]
