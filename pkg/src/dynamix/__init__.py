"""Zero-shot dynamical-systems reconstruction with a gated mixture of AL-RNN experts."""
__version__ = "0.1.0"

from . import backend
from .embedding import EmbeddingSpec, delay_embed, embed_context, positional_encode, zero_fill
from .errors import (
    ConfigurationError,
    DegenerateSignalError,
    DivergenceError,
    DynamixError,
    FormatError,
    InsufficientDataError,
    NoPeriodicityError,
    TrainingDivergenceError,
)
from .metrics import MetricReport, d_stsp, evaluate_forecast, hellinger_distance, rosenstein_lyapunov
from .model import DynaMixModel, ModelConfig, forecast, init_model, mixture_step
from .systems import CATALOG, Corpus, SystemDef, Trajectory, generate_corpus, get_system, simulate
from .training import TrainConfig, train

__all__ = [
    "backend",
    "CATALOG",
    "ConfigurationError",
    "Corpus",
    "DegenerateSignalError",
    "DivergenceError",
    "DynaMixModel",
    "DynamixError",
    "EmbeddingSpec",
    "FormatError",
    "InsufficientDataError",
    "MetricReport",
    "ModelConfig",
    "NoPeriodicityError",
    "SystemDef",
    "TrainConfig",
    "TrainingDivergenceError",
    "Trajectory",
    "d_stsp",
    "delay_embed",
    "embed_context",
    "evaluate_forecast",
    "forecast",
    "generate_corpus",
    "get_system",
    "hellinger_distance",
    "init_model",
    "mixture_step",
    "positional_encode",
    "rosenstein_lyapunov",
    "simulate",
    "train",
    "zero_fill",
]
