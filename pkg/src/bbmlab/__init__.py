"""Branching Brownian motion between absorbing barriers: exact numerics for the killed
Brownian kernels, a hybrid event-driven simulator, the critical-line branching process and its
traveling wave, the moving-barrier construction, and reference N-BBM and Levy samplers."""

from bbmlab.errors import (BBMLabError, ConfigError, DegenerateEpoch, DomainError, ExplosionGuard,
                           ExtinctionError, InsufficientHorizon, InsufficientSamples, NoConvergence,
                           NonSupercritical, QuadratureFailure)
from bbmlab.params import ModelParams, ReproductionLaw, desk_params, load_config

__version__ = "0.1.0"
