"""Distributed approximate Newton optimization for federated GLMs."""

from .baselines import gd_round, newton_richardson_round
from .config import RunConfig, parse_config
from .datasets import FederatedDataset, SyntheticSpec, generate_synthetic
from .diagnostics import damped_phase, direction_error, reference_direction
from .federation import (
    AggregatorState,
    SamplingPolicy,
    WorkerState,
    adaptive_stepsize,
    done_round,
    local_direction,
    run,
    sample_workers,
)
from .glm import Family, GlmModel, Samples, gradient, hvp, loss
from .richardson import DivergenceError, RichardsonSettings, richardson_solve, spectral_alpha
from .spectral import ConvergenceConstants, estimate_constants, estimate_lambda_max

__version__ = "0.1.0"
