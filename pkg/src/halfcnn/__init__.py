"""Whole-image CNN regression ("half-CNN").

Small fully-convolutional networks, trained by manual backpropagation and
L-BFGS, map images to continuous 2-D maps. The package also covers
Gaussian ground-truth synthesis, masked variable-size training, window
retrieval from heatmaps and saliency scoring.

Set ``HALFCNN_NUMBA=0`` to force the pure-numpy kernels.
"""
from .errors import (BadMagicError, BadVersionError, CheckpointError, ConfigError, DegenerateError,
                     DimensionError, FormatError, HalfCNNError, InputError, LengthMismatchError,
                     ShapeError, UsageError)
from .kernels import BACKEND
from .network import (BlockSpec, LossConfig, Network, NetworkSpec, batch_objective, build,
                      face_spec, flatten_params, forward, predict, saliency_spec, toy_spec,
                      unflatten_params)

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "BadMagicError", "BadVersionError", "BlockSpec", "CheckpointError", "ConfigError",
    "DegenerateError", "DimensionError", "FormatError", "HalfCNNError", "InputError",
    "LengthMismatchError", "LossConfig", "Network", "NetworkSpec", "ShapeError", "UsageError",
    "batch_objective", "build", "face_spec", "flatten_params", "forward", "predict",
    "saliency_spec", "toy_spec", "unflatten_params",
]
