"""Iterative self-training for one-hidden-layer ReLU networks on Gaussian data."""
from .errors import (ConditioningError, ConfigError, DegenerateActivationError, DivergenceError,
                     InsufficientDataError, SelfTrainLabError, ShapeError)
from .network import Activation, NetworkModel, activation_derivative, forward, forward_batch
from .synth import GaussianSpec, LabeledSet, PseudoLabeledSet, RngSeed, UnlabeledSet

__version__ = "0.1.0"
