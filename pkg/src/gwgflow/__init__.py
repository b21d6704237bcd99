"""Particle-based variational inference with generalized Wasserstein gradient flows."""

from .core import (RngState, YoungFunction, holder_conjugate, young_conjugate_grad,
                   young_conjugate_value, young_grad, young_value)
from .samplers import ParticleSystem, SamplerConfig, TrajectoryLog, run_sampler
from .targets import (ConditionedDiffusionTarget, GaussianMixtureTarget, MonomialGammaTarget,
                      cd_forward, cd_score)
from .vecfield import DivergenceMode, MlpParams, divergence, init_mlp, training_loss_grad

__version__ = "0.1.0"

__all__ = [
    "RngState",
    "YoungFunction",
    "holder_conjugate",
    "young_value",
    "young_grad",
    "young_conjugate_grad",
    "young_conjugate_value",
    "ParticleSystem",
    "SamplerConfig",
    "TrajectoryLog",
    "run_sampler",
    "GaussianMixtureTarget",
    "MonomialGammaTarget",
    "ConditionedDiffusionTarget",
    "cd_forward",
    "cd_score",
    "DivergenceMode",
    "MlpParams",
    "divergence",
    "init_mlp",
    "training_loss_grad",
]
