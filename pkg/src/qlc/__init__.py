"""Quasi-likelihood concentration toolkit.

Modules: ``efc`` (exponential families), ``glm`` and ``single_index``
(quasi MLE, target and rate function), ``penalties`` (penalty families and
bound constants), ``chaining`` (semimetric, covers, local entropy),
``concentration`` (tail and confidence bounds), ``montecarlo`` (seeded
replication harness) and ``cli``.
"""

__version__ = "0.1.0"

from .efc import DomainError, EfcLaw, GaussianNoiseLaw, bernoulli, family_from_token, gaussian, poisson
from .glm import GlmModel, fit_qmle, rate_function, target_theta0
from .grids import GridDomain
from .montecarlo import SimConfig, SimResult, simulate, verify
from .penalties import PenaltySpec, bound_Q_quadratic, bound_Q_ranking, pstar
from .single_index import SiModel, si_fit, si_target_theta0

__all__ = [
    "__version__",
    "DomainError",
    "EfcLaw",
    "GaussianNoiseLaw",
    "bernoulli",
    "family_from_token",
    "gaussian",
    "poisson",
    "GlmModel",
    "fit_qmle",
    "rate_function",
    "target_theta0",
    "GridDomain",
    "SimConfig",
    "SimResult",
    "simulate",
    "verify",
    "PenaltySpec",
    "bound_Q_quadratic",
    "bound_Q_ranking",
    "pstar",
    "SiModel",
    "si_fit",
    "si_target_theta0",
]
