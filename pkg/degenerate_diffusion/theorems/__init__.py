"""Executable verifiers, one module per family of results"""

from .algebra import verify_projector_algebra
from .chaos import ChaosResult, chaos_expand, chaos_expand_batch, verify_chaos
from .common import DEFAULT_SEED, PathBatch, RunOptions, default_basis, simulate_batch
from .entropy import (
    entropy_direct,
    entropy_formula,
    entropy_inequality_check,
    monge_ampere_residual,
    monge_ampere_solve,
    verify_monge_ampere,
)
from .innovation import (
    innovation_path,
    innovation_represent,
    verify_innovation_martingale,
    verify_innovation_represent,
    verify_zeta,
    zeta_path,
)
from .representation import (
    RepresentationResult,
    represent_functional,
    verify_martingale_problem,
    verify_projection_minimality,
    verify_representation,
)
from .sanity import verify_simulation
from .wick import verify_commutation, verify_wick_conditional

__all__ = [
    "ChaosResult",
    "DEFAULT_SEED",
    "PathBatch",
    "RepresentationResult",
    "RunOptions",
    "chaos_expand",
    "chaos_expand_batch",
    "default_basis",
    "entropy_direct",
    "entropy_formula",
    "entropy_inequality_check",
    "innovation_path",
    "innovation_represent",
    "monge_ampere_residual",
    "monge_ampere_solve",
    "represent_functional",
    "simulate_batch",
    "verify_chaos",
    "verify_commutation",
    "verify_innovation_martingale",
    "verify_innovation_represent",
    "verify_martingale_problem",
    "verify_monge_ampere",
    "verify_projection_minimality",
    "verify_projector_algebra",
    "verify_representation",
    "verify_simulation",
    "verify_wick_conditional",
    "verify_zeta",
]
