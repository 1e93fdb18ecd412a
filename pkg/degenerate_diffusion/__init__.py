"""
Degenerate Diffusion Martingale Representation
==============================================

Simulate path-dependent diffusions whose diffusion matrix may be rank
deficient and check, by Monte Carlo, the representation of functionals of
the state as stochastic integrals against the minimal martingale
dm = P dB, together with the conditional Wick exponential, chaos
expansions, the innovation process, relative entropy and the causal
Monge-Ampere construction.
"""

from .condexp import FeatureBasis, fit_conditional
from .core_paths import (
    AdaptedDrift,
    BrownianPath,
    CameronMartinFn,
    MCEstimate,
    RngSpec,
    StatePath,
    TimeGrid,
    estimate,
    make_grid,
)
from .errors import (
    ConfigError,
    DiffusionError,
    InvalidArgumentError,
    ModelError,
    NumericalError,
    SimulationError,
    VerificationFailure,
)
from .ito import SimplexKernel, iterated_integral, projected_wick, wick_exponential
from .models import ModelSpec, builtin_model, custom_model, resolve_model
from .projection import ProjectorSequence, projector, projector_path
from .reports import VerificationReport
from .simulate import euler_solve, sample_brownian, solve_perturbed

__version__ = "0.1.0"
