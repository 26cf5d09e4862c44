"""Unsupervised image decomposition with coupled deep image priors."""

__version__ = "0.1.0"

from .composition import LayerSet, mix, mix_two_mixtures, mix_video
from .errors import (
    AmbiguityWarning,
    ConfigurationError,
    DipIOError,
    DipstackError,
    DomainError,
    IdentifiabilityWarning,
    NumericalAbort,
    ShapeError,
)
from .generator import GeneratorSpec, build_generator, make_noise
from .losses import LossWeights, exclusion_loss, total_loss
from .optimizer import OptimConfig, optimize
from .tasks import TaskConfig, build_task

__all__ = [
    "__version__",
    "LayerSet",
    "mix",
    "mix_two_mixtures",
    "mix_video",
    "GeneratorSpec",
    "build_generator",
    "make_noise",
    "LossWeights",
    "exclusion_loss",
    "total_loss",
    "OptimConfig",
    "optimize",
    "TaskConfig",
    "build_task",
    "DipstackError",
    "ConfigurationError",
    "ShapeError",
    "DomainError",
    "NumericalAbort",
    "DipIOError",
    "IdentifiabilityWarning",
    "AmbiguityWarning",
]
